from django.apps import AppConfig


class MvsdeConfig(AppConfig):
    name = 'mvsde'
    verbose_name = 'McKean-Vlasov SDE numerics'
