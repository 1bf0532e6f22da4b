# -*- coding: utf-8 -*-
"""Accounting test cases."""

import io
import json
import unittest

from opnet.accounting import (
    AccountingReport,
    MacCounter,
    REFERENCE_AUDIT,
    StageEntry,
    complexity_audit,
    count_conv,
    count_op_macs,
    count_stage,
    counting,
    labelled,
    record_macs,
    render_gmacs,
)
from opnet.attention import OpConfig
from opnet.errors import (
    ConfigurationError,
    ContractError,
)


class CountConvTest(unittest.TestCase):

    """Convolution count test cases."""

    def test_unit(self):
        """Bias-free 1x1 conv on a single value."""
        self.assertEqual(count_conv((1, 1, 1, 1), 1, 1, 1, bias=False), (1, 1))

    def test_three_by_three(self):
        """3x3 conv with bias over 8x8."""
        self.assertEqual(count_conv((1, 4, 8, 8), 4, 4, 3), (9216, 148))

    def test_zero_channels(self):
        """Zero-channel input counts nothing."""
        self.assertEqual(count_conv((1, 0, 8, 8), 0, 4, 3), (0, 0))

    def test_zero_output_channels(self):
        """Zero output channels count no weights and no bias."""
        self.assertEqual(count_conv((1, 4, 8, 8), 4, 0, 3), (0, 0))


class CountOpMacsTest(unittest.TestCase):

    """Attention MAC count test cases."""

    def test_hand_count(self):
        """Two channels over a single position with one head."""
        macs = count_op_macs((1, 2, 1, 1), OpConfig(1))
        self.assertEqual(macs.transform, 12)
        self.assertEqual(macs.similarity, 8)
        self.assertEqual(macs.total, 20)

    def test_empty(self):
        """Zero channels count nothing."""
        self.assertEqual(count_op_macs((1, 0, 4, 4), OpConfig(2)).total, 0)

    def test_doubling_heads(self):
        """Doubling P halves the similarity-stage count."""
        for heads in (1, 2, 4):
            single = count_op_macs((2, 16, 3, 5), OpConfig(heads))
            double = count_op_macs((2, 16, 3, 5), OpConfig(2 * heads))
            self.assertEqual(single.similarity, 2 * double.similarity)

    def test_indivisible(self):
        """P must divide C."""
        with self.assertRaises(ConfigurationError):
            count_op_macs((1, 6, 1, 1), OpConfig(4))


class CountStageTest(unittest.TestCase):

    """Stage count test cases."""

    def test_base_op(self):
        """Base OP on a single position."""
        entry = count_stage('base_op', OpConfig(1), [(1, 2, 1, 1)])
        self.assertEqual(entry, StageEntry('base_op', 20, 12))

    def test_empty(self):
        """No levels give a zero entry."""
        self.assertEqual(
            count_stage('mp_fusion', OpConfig(1), []),
            StageEntry('mp_fusion', 0, 0))

    def test_unknown(self):
        """Unknown stages are a configuration error."""
        with self.assertRaises(ConfigurationError):
            count_stage('neck', OpConfig(1), [(1, 2, 1, 1)])

    def test_mp_needs_five_levels(self):
        """Cross-level stages need the whole pyramid."""
        with self.assertRaises(ContractError):
            count_stage('mp_attention', OpConfig(1), [(1, 2, 4, 4)])

    def test_same_size_resize(self):
        """Resizing S2 to itself is free."""
        shapes = [(1, 3, 4, 4)] * 5
        self.assertEqual(
            count_stage('mp_resize', OpConfig(1), shapes).macs, 0)


class MacCounterTest(unittest.TestCase):

    """Instrumented counter test cases."""

    def test_labels(self):
        """Nested labels are tallied separately."""
        with counting() as counter:
            with labelled('outer'):
                record_macs(3)
                with labelled('inner'):
                    record_macs(4)
            record_macs(5)
        self.assertEqual(counter.total(), 12)
        self.assertEqual(counter.total('outer'), 7)
        self.assertEqual(counter.part('inner'), 4)

    def test_inactive(self):
        """Nothing is recorded without an active counter."""
        counter = MacCounter()
        record_macs(10)
        self.assertEqual(counter.total(), 0)


class AccountingReportTest(unittest.TestCase):

    """Accounting report test cases."""

    def setUp(self):
        """Build a two-entry report."""
        self.report = AccountingReport([
            StageEntry('base_op', 1500000000, 120000),
            StageEntry('base_fusion', 2500000000, 880000),
        ])

    def test_totals(self):
        """Totals are the sums of entries."""
        self.assertEqual(self.report.total_macs, 4000000000)
        self.assertEqual(self.report.total_params, 1000000)

    def test_csv(self):
        """CSV lists every stage and a total row."""
        stream = io.StringIO()
        self.report.write_csv(stream)
        self.assertEqual(stream.getvalue(), (
            'stage,macs,params\n'
            'base_op,1500000000,120000\n'
            'base_fusion,2500000000,880000\n'
            'total,4000000000,1000000\n'))

    def test_json(self):
        """JSON renders GMACs and millions of parameters."""
        self.report.audit = {'reference': REFERENCE_AUDIT}
        stream = io.StringIO()
        self.report.write_json(stream)
        data = json.loads(stream.getvalue())
        self.assertEqual(data['totals']['gmacs'], '4.00')
        self.assertEqual(data['totals']['mparams'], '1.00')
        self.assertEqual(data['entries'][0]['gmacs'], '1.50')
        self.assertEqual(
            data['audit']['reference']['base_op']['params'], 590000)
        self.assertNotIn('complexity', data)

    def test_render(self):
        """GMACs are rendered with two decimals."""
        self.assertEqual(render_gmacs(51530000000), '51.53')


class ComplexityAuditTest(unittest.TestCase):

    """Complexity audit test cases."""

    def test_sweep(self):
        """Measured similarity MACs equal 2*B*(C/P)^2*P*H*W."""
        sweep = [(heads, channels)
                 for heads in (1, 2, 4, 8) for channels in (8, 16, 32)]
        audit = complexity_audit(sweep, batch=1, height=4, width=4)
        self.assertTrue(audit.consistent)
        for row in audit.rows:
            width = row.channels // row.heads
            self.assertEqual(
                row.similarity_macs, 2 * width * width * row.heads * 16)
            self.assertEqual(row.measured_macs, row.similarity_macs)
        self.assertEqual(audit.exponents['heads'], -1.0)
        self.assertEqual(audit.exponents['channels'], 2.0)

    def test_fully_split(self):
        """One channel per head gives the minimum 2*B*C*H*W."""
        audit = complexity_audit([(8, 8)], batch=2, height=3, width=2,
                                 measure=False)
        self.assertEqual(audit.rows[0].similarity_macs, 2 * 2 * 8 * 3 * 2)
        self.assertIsNone(audit.rows[0].measured_macs)

    def test_empty(self):
        """An empty sweep has no rows and no exponents."""
        audit = complexity_audit([])
        self.assertEqual(audit.rows, [])
        self.assertIsNone(audit.exponents['heads'])

    def test_csv(self):
        """CSV has one row per sweep entry."""
        stream = io.StringIO()
        complexity_audit([(1, 8), (2, 8)], measure=False).write_csv(stream)
        lines = stream.getvalue().splitlines()
        self.assertEqual(
            lines[0], 'heads,channels,similarity_macs,measured_macs')
        self.assertEqual(lines[1], '1,8,2048,')
        self.assertEqual(lines[2], '2,8,1024,')
