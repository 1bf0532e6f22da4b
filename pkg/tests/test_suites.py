# -*- coding: utf-8 -*-
"""Gradient-check suite test cases."""

import unittest

from mock import patch

from opnet.errors import ConfigurationError
from opnet.suites import (
    CASES,
    run_suite,
    select_cases,
)


class SelectCasesTest(unittest.TestCase):

    """Scope selection test cases."""

    def test_all(self):
        """The all scope selects every case."""
        self.assertEqual(select_cases('all'), list(CASES))

    def test_scope(self):
        """Scopes select their own cases."""
        names = [case.name for case in select_cases('attention')]
        self.assertEqual(names, ['ca_forward', 'op_multihead_forward'])

    def test_unknown(self):
        """Unknown scopes are a configuration error."""
        with self.assertRaises(ConfigurationError):
            select_cases('everything')


class RunSuiteTest(unittest.TestCase):

    """Suite run test cases."""

    def test_primitives(self):
        """Every primitive passes on three seeds."""
        report = run_suite('primitive', 3)
        self.assertTrue(report.passed, report.failures())
        self.assertIn('conv3x3/weight', report.errors)
        self.assertIn('bilinear_downsample/input', report.errors)

    def test_attention(self):
        """Attention passes on three seeds."""
        report = run_suite('attention', 3, base_seed=7)
        self.assertTrue(report.passed, report.failures())
        self.assertIn('op_multihead_forward/q.weight', report.errors)

    def test_pyramid(self):
        """Pyramid stages pass on three seeds."""
        report = run_suite('pyramid', 3, base_seed=42)
        self.assertTrue(report.passed, report.failures())
        self.assertIn(
            'opnet_feature_path/mp.attention.k.weight', report.errors)
        self.assertIn('mp_op_forward/input.S6', report.errors)

    def test_zero_threshold(self):
        """A zero threshold always fails."""
        report = run_suite('attention', 1, threshold=0.0)
        self.assertFalse(report.passed)

    def test_sorted_and_threaded(self):
        """Rows are sorted and identical across thread counts."""
        with patch.dict('os.environ', {'OPNET_THREADS': '1'}):
            serial = run_suite('attention', 2)
        with patch.dict('os.environ', {'OPNET_THREADS': '3'}):
            threaded = run_suite('attention', 2)
        self.assertEqual(list(serial.errors), sorted(serial.errors))
        self.assertEqual(serial.errors, threaded.errors)
