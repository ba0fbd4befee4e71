from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase
from io import StringIO
import json
import os
import tempfile
from pathlib import Path

import pytest

from libs.utils import md5sum, read_jsonl
from simulator.error_codes import SimulatorError

SAMPLES = os.path.join(os.path.dirname(__file__), 'samples')


def sample(name: str) -> str:
    return os.path.join(SAMPLES, name)


class UavsimCommandTest(SimpleTestCase):
    def call(self, *args) -> str:
        out = StringIO()
        call_command('uavsim', *args, stdout=out)
        return out.getvalue()

    def test_run(self):
        with tempfile.TemporaryDirectory() as out_dir:
            output = self.call('run', '--config', sample('scenario.json'),
                               '--rounds', '3', '--out', out_dir)
            for name in ('credits.csv', 'efficiency.csv', 'snr.csv', 'events.jsonl'):
                self.assertTrue((Path(out_dir) / name).exists())
            self.assertIn('Final normalized credits', output)

    def test_run_is_reproducible(self):
        with tempfile.TemporaryDirectory() as first, \
                tempfile.TemporaryDirectory() as second:
            for out_dir in (first, second):
                self.call('run', '--seed', '3', '--rounds', '2', '--out', out_dir,
                          '--format', 'jsonl')
            for name in ('credits.jsonl', 'efficiency.jsonl', 'snr.jsonl',
                         'events.jsonl'):
                self.assertEqual(md5sum(Path(first) / name),
                                 md5sum(Path(second) / name))

    def test_seed_overrides_config(self):
        with tempfile.TemporaryDirectory() as first, \
                tempfile.TemporaryDirectory() as second:
            self.call('run', '--config', sample('scenario.json'), '--rounds', '1',
                      '--out', first)
            self.call('run', '--config', sample('scenario.json'), '--seed', '43',
                      '--rounds', '1', '--out', second)
            self.assertNotEqual(md5sum(Path(first) / 'credits.csv'),
                                md5sum(Path(second) / 'credits.csv'))

    def test_baseline(self):
        with tempfile.TemporaryDirectory() as out_dir:
            self.call('baseline', '--rounds', '2', '--out', out_dir)
            events = read_jsonl(Path(out_dir) / 'events.jsonl')
            self.assertEqual([e['event'] for e in events], ['round', 'round'])

    def test_negotiate_once(self):
        with tempfile.TemporaryDirectory() as out_dir:
            output = self.call('negotiate-once', '--config', sample('scenario.json'),
                               '--out', out_dir)
            self.assertIn('negotiation rounds', output)
            events = read_jsonl(Path(out_dir) / 'events.jsonl')
            self.assertTrue(all(e['round'] == 1 for e in events))

    def test_negotiate_once_single_round_options(self):
        for option in ('--rounds', '--format'):
            with self.assertRaises(CommandError):
                self.call('negotiate-once', option, '2')

    def test_solve_beam(self):
        result = json.loads(self.call('solve-beam', '--channels', sample('channels.json'),
                                      '--oracle-grid', '201'))
        self.assertEqual(result['snr'], pytest.approx(4 / 3, abs=1e-5))
        self.assertEqual(result['t_up'], 2.0)
        self.assertEqual(result['oracle_snr'], pytest.approx(4 / 3, rel=1e-3))
        self.assertEqual(len(result['weights']), 2)

    def test_report(self):
        with tempfile.TemporaryDirectory() as out_dir:
            self.call('run', '--rounds', '2', '--out', out_dir)
            output = self.call('report', '--out', out_dir)
            self.assertIn('mean_ef', output)
            self.assertTrue((Path(out_dir) / 'summary.csv').exists())

    def test_bad_config(self):
        with self.assertRaises(CommandError) as cm:
            self.call('run', '--config', sample('bad_scenario.json'))
        self.assertEqual(cm.exception.returncode, SimulatorError.CONFIG.value)

    def test_bad_rounds(self):
        with self.assertRaises(CommandError) as cm:
            self.call('run', '--rounds', '0')
        self.assertEqual(cm.exception.returncode, SimulatorError.CONFIG.value)

    def test_bad_channels(self):
        with self.assertRaises(CommandError) as cm:
            self.call('solve-beam', '--channels', sample('bad_channels.json'))
        self.assertEqual(cm.exception.returncode, SimulatorError.SOLVE_BEAM.value)

    def test_report_without_run(self):
        with tempfile.TemporaryDirectory() as out_dir:
            with self.assertRaises(CommandError) as cm:
                self.call('report', '--out', out_dir)
            self.assertEqual(cm.exception.returncode, SimulatorError.REPORT.value)
