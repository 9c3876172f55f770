import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from mvsde.config import read_run_config
from mvsde.exceptions import ConfigurationError, MvsdeError
from mvsde.exports import render_report
from mvsde.pipeline import Run

logger = logging.getLogger('mvsde')

SUBCOMMANDS = ('check-conditions', 'solve-fpke', 'simulate', 'verify', 'report')


class Command(BaseCommand):
    help = (
        'Audit coefficient hypotheses, solve the nonlinear FPKE, simulate the '
        'McKean-Vlasov SDE and write CSVs plus report.txt. Exit status: 0 all '
        'checks pass, 1 a check or integration failed, 2 configuration error.'
    )
    requires_system_checks = []

    def add_arguments(self, parser):
        parser.add_argument('subcommand', choices=SUBCOMMANDS)
        parser.add_argument('--config', help='Run configuration file (flat key = value lines)')
        parser.add_argument('--out', help='Output directory; overrides output.dir')
        parser.add_argument('--seed-override', type=int, dest='seed_override',
                            help='Derive every stage seed from this value')
        parser.add_argument('--quiet', action='store_true', help='Only print warnings and errors')

    def handle(self, *args, **options):
        mvsde_logger = logging.getLogger('mvsde')
        previous_level = mvsde_logger.level
        if options['quiet']:
            options['verbosity'] = 0
            mvsde_logger.setLevel(logging.WARNING)
        try:
            failed = self.run(options)
        except ConfigurationError as exc:
            raise CommandError(str(exc), returncode=exc.exit_code)
        except MvsdeError as exc:
            raise CommandError(f'{type(exc).__name__}: {exc}', returncode=exc.exit_code)
        finally:
            mvsde_logger.setLevel(previous_level)

        if failed:
            raise CommandError(f'{failed} check(s) failed', returncode=1)
        if options['verbosity']:
            self.stdout.write(self.style.SUCCESS(f"{options['subcommand']}: all checks passed"))

    def run(self, options):
        subcommand = options['subcommand']
        if subcommand == 'report':
            if not options['out']:
                raise ConfigurationError('the report subcommand needs --out', key='out')
            return render_report(Path(options['out']))

        if not options['config']:
            raise ConfigurationError('a run configuration is required', key='config')
        config = read_run_config(options['config'], seed_override=options['seed_override'])
        if options['out']:
            config = config.with_output_dir(options['out'])
        config.output_dir.mkdir(parents=True, exist_ok=True)
        logger.info('running %s into %s', subcommand, config.output_dir)

        run = Run(config)
        if subcommand == 'check-conditions':
            run.check_conditions()
        elif subcommand == 'solve-fpke':
            run.solve()
        elif subcommand == 'simulate':
            run.simulate()
        else:
            run.verify()
        return run.finish()
