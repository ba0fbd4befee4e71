import json
import logging
import traceback
from functools import wraps
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from libs.beamforming import ChannelState, optimize_snr, oracle_grid_search
from libs.constants import Constants as c
from libs.harness import BASELINE, COALITION, Simulation, run_simulation, \
    summarize, write_outputs
from libs.scenario import ScenarioConfig, ScenarioConfigError
from libs.utils import to_jsonable, write_jsonl
from simulator.error_codes import SimulatorError

logger = logging.getLogger('django')


def error_handler(error_code: SimulatorError):
    """
    Function to be used as a decorator to manage any unexpected exception and
    return it as a CommandError with the subcommand exit code. Configuration
    errors always use the configuration code.
    :param error_code: exit code to provide in case of exception
    :return: function called through wrapper
    """
    def decorator_function(func):
        @wraps(func)
        def wrapper(self, *args, **kwargs):
            try:
                return func(self, *args, **kwargs)
            except CommandError:
                raise
            except ScenarioConfigError as e:
                logger.error(f'Invalid configuration: {e}')
                raise CommandError(f'Invalid configuration: {e}',
                                   returncode=SimulatorError.CONFIG.value)
            except Exception as e:
                msg = f'Error in function: {func.__name__}\n' + \
                      f'Call: {func.__name__}({args}, {kwargs})\n' + \
                      traceback.format_exc()
                logger.error(msg)
                raise CommandError(
                    f'Unexpected error ({error_code.value}): {e}',
                    returncode=error_code.value)
        return wrapper
    return decorator_function


def load_config(options) -> ScenarioConfig:
    path = options.get('config')
    config = ScenarioConfig.from_path(path) if path else ScenarioConfig()
    return config.with_seed(options.get('seed'))


def precision(options) -> float:
    value = options.get('precision')
    value = settings.UAVSIM['BEAM_PRECISION'] if value is None else value
    if not value > 0:
        raise CommandError('--precision must be positive',
                           returncode=SimulatorError.CONFIG.value)
    return value


def output_dir(options) -> Path:
    return Path(options.get('out') or settings.UAVSIM['OUTPUT_DIR'])


def load_channels(path: str):
    """
    Channel file: complex gains as [re, im] pairs, relay noise powers, base
    station noise power and per-relay power caps
    """
    with open(path) as f:
        data = json.load(f)
    unknown = set(data) - {'h_tu', 'h_ub', 'noise_cov_diag', 'sigma2_base',
                           'power_caps'}
    if unknown:
        raise CommandError(f'Unknown channel file keys: {sorted(unknown)}',
                           returncode=SimulatorError.SOLVE_BEAM.value)
    channels = ChannelState(tuple(complex(*h) for h in data['h_tu']),
                            tuple(complex(*h) for h in data['h_ub']),
                            tuple(data['noise_cov_diag']),
                            data['sigma2_base'])
    return channels, data['power_caps']


class Command(BaseCommand):
    help = 'Leader-follower UAV coalition formation simulator'

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest='action', required=True)

        for name, text in (('run', 'Full simulation with the nearest-UAV baseline'),
                           ('negotiate-once', 'Single negotiation round'),
                           ('baseline', 'Nearest-UAV assignment only')):
            sub = subparsers.add_parser(name, help=text)
            sub.add_argument('--config', help='Scenario JSON file')
            sub.add_argument('--seed', type=int, help='Overrides the configured seed')
            sub.add_argument('--out', help='Output directory')
            sub.add_argument('--precision', type=float,
                             help='Bisection precision relative to t_up')
            if name != 'negotiate-once':
                sub.add_argument('--rounds', type=int, default=25)
                sub.add_argument('--format', choices=c.output_formats,
                                 default='csv')

        beam = subparsers.add_parser('solve-beam',
                                     help='Optimize the relay weights of one channel file')
        beam.add_argument('--channels', required=True, help='Channel JSON file')
        beam.add_argument('--precision', type=float,
                          help='Bisection precision relative to t_up')
        beam.add_argument('--oracle-grid', type=int,
                          help='Also run the grid oracle with N points per axis')

        report = subparsers.add_parser('report',
                                       help='Recompute the metrics of a run')
        report.add_argument('--out', help='Directory holding events.jsonl')

    def handle(self, *args, **options):
        actions = {'run': self.run,
                   'negotiate-once': self.negotiate_once,
                   'solve-beam': self.solve_beam,
                   'baseline': self.baseline,
                   'report': self.report}
        actions[options['action']](options)

    def _simulate(self, options, method: str):
        rounds = options['rounds']
        if rounds < 1:
            raise CommandError('--rounds must be at least 1',
                               returncode=SimulatorError.CONFIG.value)
        config = load_config(options)
        result = run_simulation(config, rounds, precision(options), method)
        out = output_dir(options)
        for path in write_outputs(result, out, options['format']):
            self.stdout.write(f'Written {path}')
        final = result.ledger.normalized()
        self.stdout.write('Final normalized credits: ' + ', '.join(
            f'{i}={v:.3f}' for i, v in sorted(final.items())))

    @error_handler(SimulatorError.RUN)
    def run(self, options):
        self._simulate(options, COALITION)

    @error_handler(SimulatorError.BASELINE)
    def baseline(self, options):
        self._simulate(options, BASELINE)

    @error_handler(SimulatorError.NEGOTIATE)
    def negotiate_once(self, options):
        simulation = Simulation(load_config(options), precision(options))
        world, outcome, _ = simulation.negotiate_round(1)
        out = output_dir(options)
        out.mkdir(parents=True, exist_ok=True)
        write_jsonl(outcome.events, out / 'events.jsonl')

        for leader_id, coalition in outcome.coalitions.items():
            self.stdout.write(f'Leader {leader_id} task {coalition.task_id}: '
                              f'{list(coalition.ordered_members)} '
                              f'snr={coalition.snr_opt:.6g}')
        for task_id in outcome.unserved:
            self.stdout.write(f'Task {task_id} unserved')
        self.stdout.write(f'{outcome.rounds} negotiation rounds, '
                          f'{outcome.refusal_count} refusals from '
                          f'{outcome.refusing_uavs} UAVs')

    @error_handler(SimulatorError.SOLVE_BEAM)
    def solve_beam(self, options):
        channels, power_caps = load_channels(options['channels'])
        solution = optimize_snr(channels, power_caps,
                                relative_precision=precision(options))
        result = solution.to_dict()
        if options.get('oracle_grid'):
            result['oracle_snr'] = oracle_grid_search(channels, power_caps,
                                                      options['oracle_grid'])
        self.stdout.write(json.dumps(to_jsonable(result), sort_keys=True))

    @error_handler(SimulatorError.REPORT)
    def report(self, options):
        summary = summarize(output_dir(options))
        self.stdout.write(summary.to_string(index=False))
