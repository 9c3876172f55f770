import math

from rest_framework import serializers

from .coefficients import CoefficientFamily, DriftKind, EnvelopeKind
from .fpke import SchemeMode
from .particles import BandwidthRule, EstimatorKind
from .sde import Integrator
from .stats import ProfileKind


def _choices(enum):
    return [member.value for member in enum]


class FiniteFloatField(serializers.FloatField):
    #  nan and inf parse as floats; a run configuration only holds finite numbers
    default_error_messages = {
        'not_finite': 'A finite number is required.',
    }

    def to_internal_value(self, data):
        value = super().to_internal_value(data)
        if not math.isfinite(value):
            self.fail('not_finite')
        return value


class CommaSeparatedListField(serializers.ListField):
    #  Accepts `a, b, c` strings from the flat config format as well as real lists

    def to_internal_value(self, data):
        if isinstance(data, str):
            data = [item.strip() for item in data.split(',') if item.strip()]
        return super().to_internal_value(data)


class StrictSerializer(serializers.Serializer):
    #  Rejects keys that no field claims, so typos surface as configuration errors

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ['Unknown key.'] for key in unknown})
        return super().to_internal_value(data)


class CoefficientsSerializer(StrictSerializer):
    #  Coefficient family and its parameters
    family = serializers.ChoiceField(choices=_choices(CoefficientFamily))
    gamma0 = FiniteFloatField()
    alpha = FiniteFloatField(required=False, default=None)
    kappa = FiniteFloatField(required=False, default=None)
    c = FiniteFloatField(required=False, default=None)
    drift = serializers.ChoiceField(choices=_choices(DriftKind), required=False, default=None)
    spatial_decay = serializers.BooleanField(required=False, default=True)
    factory = serializers.CharField(required=False, default=None)

    def validate_gamma0(self, value):
        if value <= 0:
            raise serializers.ValidationError('gamma0 must be positive')
        return value

    def validate(self, data):
        if data['family'] == CoefficientFamily.USER.value and not data.get('factory'):
            raise serializers.ValidationError({'factory': 'required for the user family'})
        return data


class EnvelopeSerializer(StrictSerializer):
    kind = serializers.ChoiceField(choices=_choices(EnvelopeKind), required=False, default=None)
    scale = FiniteFloatField(required=False, default=None, min_value=0.0)


class DomainSerializer(StrictSerializer):
    x_min = FiniteFloatField(default=-8.0)
    x_max = FiniteFloatField(default=8.0)
    n_cells = serializers.IntegerField(default=1024, min_value=8)

    def validate(self, data):
        if data['x_min'] >= data['x_max']:
            raise serializers.ValidationError({'x_min': 'must be smaller than x_max'})
        return data


class ProfileSerializer(StrictSerializer):
    #  Initial profile; only the parameters of the chosen kind are used
    kind = serializers.ChoiceField(choices=_choices(ProfileKind), default=ProfileKind.GAUSSIAN.value)
    mean = FiniteFloatField(default=0.0)
    sd = FiniteFloatField(default=1.0)
    center = FiniteFloatField(default=0.0)
    width = FiniteFloatField(default=1.0)
    a = FiniteFloatField(default=-1.0)
    b = FiniteFloatField(default=1.0)

    def params(self, data):
        kind = ProfileKind(data['kind'])
        if kind == ProfileKind.GAUSSIAN:
            return {'mean': data['mean'], 'sd': data['sd']}
        if kind == ProfileKind.BUMP:
            return {'center': data['center'], 'width': data['width']}
        return {'a': data['a'], 'b': data['b']}

    def to_internal_value(self, data):
        data = super().to_internal_value(data)
        return {'kind': data['kind'], 'params': self.params(data)}


class FpkeSerializer(StrictSerializer):
    mode = serializers.ChoiceField(choices=_choices(SchemeMode), default=SchemeMode.EXPLICIT.value)
    output_stride = serializers.IntegerField(default=1, min_value=1)
    refine_levels = serializers.IntegerField(default=0, min_value=0)

    def validate_refine_levels(self, value):
        if value == 1:
            raise serializers.ValidationError('use 0 to disable the refinement study or at least 2 levels')
        return value


class SdeSerializer(StrictSerializer):
    enabled = serializers.BooleanField(default=False)
    n_paths = serializers.IntegerField(default=50000, min_value=1)
    dt = FiniteFloatField(required=False, default=None)
    integrators = CommaSeparatedListField(
        child=serializers.ChoiceField(choices=_choices(Integrator)),
        default=lambda: [Integrator.EULER.value],
    )
    gap_levels = serializers.IntegerField(default=0, min_value=0)
    initial_seed = serializers.IntegerField(required=False, default=None, min_value=0)
    noise_seed = serializers.IntegerField(required=False, default=None, min_value=0)
    base_seed = serializers.IntegerField(required=False, default=None, min_value=0)
    times = CommaSeparatedListField(child=FiniteFloatField(min_value=0.0), default=list)
    trajectory_paths = serializers.IntegerField(default=4, min_value=0)
    workers = serializers.IntegerField(required=False, default=None, min_value=1)

    def validate_gap_levels(self, value):
        if value == 1:
            raise serializers.ValidationError('use 0 to disable the gap study or at least 2 levels')
        return value

    def validate_dt(self, value):
        if value is not None and value <= 0:
            raise serializers.ValidationError('must be positive')
        return value


class ParticlesSerializer(StrictSerializer):
    enabled = serializers.BooleanField(default=False)
    n = serializers.IntegerField(default=50000, min_value=1)
    dt = FiniteFloatField(required=False, default=None)
    estimator = serializers.ChoiceField(choices=_choices(EstimatorKind), default=EstimatorKind.HISTOGRAM.value)
    bandwidth_rule = serializers.ChoiceField(choices=_choices(BandwidthRule), default=BandwidthRule.SCOTT.value)
    bandwidth = FiniteFloatField(required=False, default=None)
    seed = serializers.IntegerField(required=False, default=None, min_value=0)
    times = CommaSeparatedListField(child=FiniteFloatField(min_value=0.0), default=list)
    snapshot_stride = serializers.IntegerField(default=1, min_value=1)
    output_particles = serializers.BooleanField(default=False)
    workers = serializers.IntegerField(required=False, default=None, min_value=1)

    def validate(self, data):
        fixed_kernel = (data['estimator'] == EstimatorKind.GAUSSIAN_KERNEL.value
                        and data['bandwidth_rule'] == BandwidthRule.FIXED.value)
        if fixed_kernel and not (data.get('bandwidth') and data['bandwidth'] > 0):
            raise serializers.ValidationError({'bandwidth': 'a positive bandwidth is required for the fixed rule'})
        if data.get('dt') is not None and data['dt'] <= 0:
            raise serializers.ValidationError({'dt': 'must be positive'})
        return data


class ChecksSerializer(StrictSerializer):
    conditions = serializers.BooleanField(default=True)
    supplementary = serializers.BooleanField(default=True)
    conservation = serializers.BooleanField(default=True)
    contraction = serializers.BooleanField(default=True)
    linf = serializers.BooleanField(default=True)
    weak_residual = serializers.BooleanField(default=False)
    contraction_tolerance = FiniteFloatField(required=False, default=None, min_value=0.0)
    linf_tolerance = FiniteFloatField(required=False, default=None, min_value=0.0)
    weak_residual_tolerance = FiniteFloatField(default=1e-2, min_value=0.0)
    oracle_threshold = FiniteFloatField(default=2e-3, min_value=0.0)
    w1_threshold = FiniteFloatField(default=0.02, min_value=0.0)
    particle_threshold = FiniteFloatField(default=0.05, min_value=0.0)
    gap_slope = FiniteFloatField(default=0.4)


class AuditSerializer(StrictSerializer):
    r_max = FiniteFloatField(required=False, default=None, min_value=0.0)
    t_samples = serializers.IntegerField(required=False, default=None, min_value=1)
    x_samples = serializers.IntegerField(required=False, default=None, min_value=2)
    r_samples = serializers.IntegerField(required=False, default=None, min_value=3)
    pair_stride = serializers.IntegerField(required=False, default=None, min_value=1)


class OutputSerializer(StrictSerializer):
    dir = serializers.CharField(default='mvsde_out')


class RunConfigSerializer(StrictSerializer):
    #  Whole run configuration; nested sections mirror the dotted config keys
    coefficients = CoefficientsSerializer()
    h = EnvelopeSerializer(required=False)
    domain = DomainSerializer(required=False)
    T = FiniteFloatField(min_value=0.0)
    dt = FiniteFloatField()
    initial = ProfileSerializer(required=False)
    initial_bar = ProfileSerializer(required=False, default=None)
    fpke = FpkeSerializer(required=False)
    sde = SdeSerializer(required=False)
    particles = ParticlesSerializer(required=False)
    checks = ChecksSerializer(required=False)
    audit = AuditSerializer(required=False)
    output = OutputSerializer(required=False)

    # sections that may be left out entirely still get their field defaults
    OPTIONAL_SECTIONS = ('h', 'domain', 'initial', 'fpke', 'sde', 'particles', 'checks', 'audit', 'output')

    def to_internal_value(self, data):
        if isinstance(data, dict):
            data = {**{name: {} for name in self.OPTIONAL_SECTIONS}, **data}
        return super().to_internal_value(data)

    def validate_dt(self, value):
        if value <= 0:
            raise serializers.ValidationError('dt must be positive')
        return value

    def validate(self, data):
        errors = {}
        sde = data['sde']
        if sde['enabled']:
            missing = [key for key in ('initial_seed', 'noise_seed', 'base_seed') if sde.get(key) is None]
            if missing:
                errors['sde'] = {key: 'a seed is required when the sde stage is enabled' for key in missing}
        if data['particles']['enabled'] and data['particles'].get('seed') is None:
            errors['particles'] = {'seed': 'a seed is required when the particle stage is enabled'}
        for section in ('sde', 'particles'):
            late = [t for t in data[section]['times'] if t > data['T'] + 1e-12]
            if late:
                errors.setdefault(section, {})['times'] = f'times {late} lie beyond T={data["T"]:g}'
        if errors:
            raise serializers.ValidationError(errors)
        return data

    def create(self, validated_data):
        from .config import RunConfig
        return RunConfig.from_validated(validated_data)


class ExactFloatField(serializers.Field):
    #  Fixed 17 significant digits: enough to round-trip any double, and identical on every rerun

    def to_representation(self, value):
        return format(float(value), '.17g')


class ConditionReportSerializer(serializers.Serializer):
    #  One conditions.csv row per hypothesis report
    condition_id = serializers.CharField(source='condition_id.value')
    verdict = serializers.CharField()
    estimated_constant = ExactFloatField()
    witness_t = serializers.SerializerMethodField()
    witness_x = serializers.SerializerMethodField()
    witness_r = serializers.SerializerMethodField()
    witness_r_bar = serializers.SerializerMethodField()
    detail = serializers.CharField()

    def _witness(self, obj, index):
        if obj.witness is None:
            return ''
        return format(float(obj.witness[index]), '.17g')

    def get_witness_t(self, obj):
        return self._witness(obj, 0)

    def get_witness_x(self, obj):
        return self._witness(obj, 1)

    def get_witness_r(self, obj):
        return self._witness(obj, 2)

    def get_witness_r_bar(self, obj):
        return self._witness(obj, 3)


class MatchReportSerializer(serializers.Serializer):
    #  One reports.csv row; the stage name comes from the serializer context
    stage = serializers.SerializerMethodField()
    metric = serializers.CharField(source='metric.value')
    value = ExactFloatField()
    threshold = ExactFloatField()
    verdict = serializers.CharField()
    context = serializers.CharField()

    def get_stage(self, obj):
        return self.context['stage']


class GapRowSerializer(serializers.Serializer):
    level = serializers.IntegerField()
    dt = ExactFloatField()
    sup_gap = ExactFloatField()


class ConvergenceRowSerializer(serializers.Serializer):
    level = serializers.IntegerField()
    n_cells = serializers.IntegerField()
    dt = ExactFloatField()
    self_distance = ExactFloatField()
