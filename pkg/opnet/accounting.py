# -*- coding: utf-8 -*-
"""Multiply-accumulate and parameter accounting.

Static counters compute exact integer MAC and parameter counts from shapes.
:class:`MacCounter` is the dynamic side: primitives report the multiplies
they actually perform to the counter active in the current context, under the
stage labels set by :func:`labelled`.
"""
import collections
import contextlib
import contextvars
import csv
import json
import logging
import math
import threading

import numpy as np

from opnet.errors import (
    ConfigurationError,
    ContractError,
)

logger = logging.getLogger(__name__)

# Increments quoted for the reference detector; kept for auditing only
REFERENCE_AUDIT = {
    'base_op': {'params': 590000, 'gflops': 51.53},
    'mp_op': {'params': 610000, 'gflops': 51.89},
    'combined': {'params': 1790000, 'gflops': 154.95},
}

FOOTNOTES = (
    'MACs are multiply-accumulates; gmacs = macs / 1e9 is the figure '
    'compared against reported GFLOPs.',
    'Softmax exponentials and divisions, concatenations and channel '
    'expansions are not counted.',
    'Bilinear resizes count 2 multiplies per interpolated value per '
    'separable pass; same-size resizes are free.',
    'The O(PC^2) similarity cost omits the H*W factor; the exact '
    'per-head cost is 2*B*(C^2/P)*H*W and decreases with P.',
)

BASE_STAGES = ('base_op', 'base_fusion')
MP_STAGES = (
    'mp_reduce',
    'mp_resize',
    'mp_attention',
    'mp_pool',
    'mp_scale',
    'mp_fusion',
)
STAGES = BASE_STAGES + MP_STAGES

_active_counter = contextvars.ContextVar('opnet_mac_counter', default=None)
_active_label = contextvars.ContextVar('opnet_mac_label', default=())


class MacCounter(object):

    """Tally of multiply-accumulates reported by primitives.

    Counts are keyed by label tuples such as ``('base_op', 'similarity')``.
    A counter belongs to one run; :func:`counting` binds it to the current
    context.

    """

    def __init__(self):
        """Start with no counts."""
        self.counts = collections.Counter()
        self._lock = threading.Lock()

    def add(self, label, macs):
        """Add multiply-accumulates under a label.

        :param label: Stage label path
        :type label: tuple(str)
        :param macs: Multiply-accumulates performed
        :type macs: int

        """
        with self._lock:
            self.counts[label] += int(macs)

    def total(self, *prefix):
        """Return MACs recorded under labels starting with prefix.

        :param prefix: Leading label components (none means everything)
        :type prefix: str
        :return: Multiply-accumulates
        :rtype: int

        """
        return sum(
            macs
            for label, macs in self.counts.items()
            if label[:len(prefix)] == prefix
        )

    def part(self, name):
        """Return MACs recorded under labels ending with name.

        :param name: Innermost label component
        :type name: str
        :return: Multiply-accumulates
        :rtype: int

        """
        return sum(
            macs
            for label, macs in self.counts.items()
            if label and label[-1] == name
        )


@contextlib.contextmanager
def counting(counter=None):
    """Bind a MAC counter to the current context.

    :param counter: Counter to use (a new one by default)
    :type counter: MacCounter
    :return: The bound counter
    :rtype: MacCounter

    """
    if counter is None:
        counter = MacCounter()
    token = _active_counter.set(counter)
    try:
        yield counter
    finally:
        _active_counter.reset(token)
    logger.debug('MACs by stage: %s', dict(counter.counts))


@contextlib.contextmanager
def labelled(name):
    """Nest a stage label for MACs recorded inside the block.

    :param name: Stage label
    :type name: str

    """
    token = _active_label.set(_active_label.get() + (name,))
    try:
        yield
    finally:
        _active_label.reset(token)


def record_macs(macs):
    """Report multiply-accumulates to the active counter (if any).

    :param macs: Multiply-accumulates performed
    :type macs: int

    """
    counter = _active_counter.get()
    if counter is not None:
        counter.add(_active_label.get(), macs)


StageEntry = collections.namedtuple('StageEntry', 'stage macs params')

OpMacs = collections.namedtuple('OpMacs', 'transform similarity total')


def render_gmacs(macs):
    """Render a MAC count in units of 1e9 with two decimals."""
    return '{:.2f}'.format(macs / 1e9)


def render_mparams(params):
    """Render a parameter count in millions with two decimals."""
    return '{:.2f}'.format(params / 1e6)


def count_conv(shape, c_in, c_out, kernel, bias=True):
    """Count a stride-1, same-padded convolution.

    A convolution without input channels counts no bias either, so a
    zero-channel input costs nothing.

    :param shape: Input shape (B, C, H, W); only B, H and W are used
    :type shape: tuple(int)
    :param c_in: Input channels
    :type c_in: int
    :param c_out: Output channels
    :type c_out: int
    :param kernel: Kernel size
    :type kernel: int
    :param bias: Whether the convolution has a bias term
    :type bias: bool
    :return: Multiply-accumulates and learnable parameters
    :rtype: tuple(int, int)

    """
    batch, _, height, width = shape
    macs = batch * c_out * c_in * kernel * kernel * height * width
    params = c_out * c_in * kernel * kernel
    if bias and c_in > 0:
        params += c_out
    return macs, params


def count_op_macs(shape, cfg):
    """Count multi-head channel attention on a (B, C, H, W) input.

    Transforms cost 3*B*C*C*H*W; similarity plus aggregation cost
    2*B*P*(C/P)^2*H*W.

    :param shape: Input shape
    :type shape: tuple(int)
    :param cfg: Attention configuration (only ``heads`` is used)
    :type cfg: opnet.attention.OpConfig
    :return: Transform, similarity-stage and total MACs
    :rtype: OpMacs

    """
    batch, channels, height, width = shape
    heads = cfg.heads
    if channels % heads != 0:
        raise ConfigurationError(
            'channels C={} not divisible by heads P={}'.format(
                channels, heads))
    spatial = batch * height * width
    transform = 3 * channels * channels * spatial
    head_width = channels // heads
    similarity = 2 * heads * head_width * head_width * spatial
    return OpMacs(transform, similarity, transform + similarity)


def _resize_macs(batch, channels, in_shape, out_shape):
    """Count MACs of the separable bilinear resize."""
    in_h, in_w = in_shape
    out_h, out_w = out_shape
    if (in_h, in_w) == (out_h, out_w):
        return 0
    return 2 * batch * channels * out_h * (in_w + out_w)


def count_stage(stage, cfg, shapes, cross_cfg=None):
    """Count one named stage of the feature path over pyramid levels.

    :param stage: Stage name, one of :data:`STAGES`
    :type stage: str
    :param cfg: Configuration of the per-level base OP
    :type cfg: opnet.attention.OpConfig
    :param shapes: Level shapes (B, C, H, W), finest first
    :type shapes: list(tuple(int))
    :param cross_cfg: Configuration of the cross-level block (1 head if None)
    :type cross_cfg: opnet.attention.OpConfig
    :return: Stage entry
    :rtype: StageEntry

    """
    if stage not in STAGES:
        raise ConfigurationError('unknown stage: {!r}'.format(stage))

    shapes = [tuple(shape) for shape in shapes]
    if not shapes:
        return StageEntry(stage, 0, 0)

    if stage in MP_STAGES and len(shapes) != 5:
        raise ContractError(
            '{} needs 5 pyramid levels, got {}'.format(stage, len(shapes)))

    macs = 0
    params = 0
    if stage == 'base_op':
        for shape in shapes:
            channels = shape[1]
            macs += count_op_macs(shape, cfg).total
            params += 3 * channels * channels
    elif stage in ('base_fusion', 'mp_fusion'):
        for batch, channels, height, width in shapes:
            level_macs, level_params = count_conv(
                (batch, 2 * channels, height, width),
                2 * channels, channels, 3)
            macs += level_macs
            params += level_params
    elif stage == 'mp_reduce':
        for shape in shapes:
            level_macs, level_params = count_conv(shape, shape[1], 1, 1)
            macs += level_macs
            params += level_params
    elif stage == 'mp_resize':
        batch, _, s2_height, s2_width = shapes[0]
        for shape in shapes:
            macs += _resize_macs(
                batch, 1, shape[2:], (s2_height, s2_width))
    elif stage == 'mp_attention':
        if cross_cfg is None:
            cross_cfg = _SingleHead()
        batch, _, s2_height, s2_width = shapes[0]
        macs = count_op_macs(
            (batch, len(shapes), s2_height, s2_width), cross_cfg).total
        params = 3 * len(shapes) * len(shapes)
    elif stage == 'mp_pool':
        batch, _, s2_height, s2_width = shapes[0]
        macs = batch * len(shapes) * s2_height * s2_width
    elif stage == 'mp_scale':
        for batch, channels, height, width in shapes:
            macs += batch * channels * height * width

    return StageEntry(stage, macs, params)


class _SingleHead(object):

    heads = 1


class AccountingReport(object):

    """Per-stage MAC and parameter counts.

    :param entries: Stage entries in report order
    :type entries: list(StageEntry)

    """

    def __init__(self, entries=None):
        """Keep entries and initialize optional sections."""
        self.entries = list(entries) if entries is not None else []
        self.audit = {}
        self.complexity = None

    def add(self, entry):
        """Append a stage entry."""
        self.entries.append(entry)

    @property
    def total_macs(self):
        """Sum of stage MACs."""
        return sum(entry.macs for entry in self.entries)

    @property
    def total_params(self):
        """Sum of stage parameters."""
        return sum(entry.params for entry in self.entries)

    def as_dict(self):
        """Return a JSON serializable representation.

        :rtype: dict

        """
        data = {
            'entries': [
                {
                    'stage': entry.stage,
                    'macs': entry.macs,
                    'params': entry.params,
                    'gmacs': render_gmacs(entry.macs),
                    'mparams': render_mparams(entry.params),
                }
                for entry in self.entries
            ],
            'totals': {
                'macs': self.total_macs,
                'params': self.total_params,
                'gmacs': render_gmacs(self.total_macs),
                'mparams': render_mparams(self.total_params),
            },
            'footnotes': list(FOOTNOTES),
        }
        if self.audit:
            data['audit'] = self.audit
        if self.complexity is not None:
            data['complexity'] = self.complexity.as_dict()
        return data

    def write_csv(self, stream):
        """Write ``stage,macs,params`` rows followed by a total row.

        :param stream: Text stream to write to
        :type stream: file

        """
        writer = csv.writer(stream, lineterminator='\n')
        writer.writerow(['stage', 'macs', 'params'])
        for entry in self.entries:
            writer.writerow([entry.stage, entry.macs, entry.params])
        writer.writerow(['total', self.total_macs, self.total_params])

    def write_json(self, stream):
        """Write the report as JSON with sorted keys.

        :param stream: Text stream to write to
        :type stream: file

        """
        json.dump(self.as_dict(), stream, indent=2, sort_keys=True)
        stream.write('\n')


ComplexityRow = collections.namedtuple(
    'ComplexityRow', 'heads channels similarity_macs measured_macs')


class ComplexityAudit(object):

    """Similarity-stage MACs over a (P, C) sweep with fitted exponents.

    :param rows: Sweep rows
    :type rows: list(ComplexityRow)

    """

    def __init__(self, rows):
        """Fit scaling exponents from the rows."""
        self.rows = list(rows)
        self.exponents = {
            'heads': _fit_exponent(self.rows, 'heads', 'channels'),
            'channels': _fit_exponent(self.rows, 'channels', 'heads'),
        }

    @property
    def consistent(self):
        """Whether every measured count equals its static count."""
        return all(
            row.measured_macs is None or
            row.measured_macs == row.similarity_macs
            for row in self.rows)

    def as_dict(self):
        """Return a JSON serializable representation."""
        return {
            'rows': [row._asdict() for row in self.rows],
            'exponents': self.exponents,
        }

    def write_csv(self, stream):
        """Write ``heads,channels,similarity_macs,measured_macs`` rows."""
        writer = csv.writer(stream, lineterminator='\n')
        writer.writerow(ComplexityRow._fields)
        for row in self.rows:
            writer.writerow(row)


def _fit_exponent(rows, varying, fixed):
    """Fit the log-log slope of similarity MACs against one variable.

    Rows are grouped by the fixed variable and the slopes of every group with
    at least two distinct values are averaged.

    :return: Fitted exponent or None if no group allows a fit
    :rtype: float | None

    """
    groups = collections.defaultdict(dict)
    for row in rows:
        if row.similarity_macs > 0:
            groups[getattr(row, fixed)][getattr(row, varying)] = (
                row.similarity_macs)

    slopes = []
    for values in groups.values():
        if len(values) < 2:
            continue
        xs = np.log2(sorted(values))
        ys = np.log2([values[key] for key in sorted(values)])
        slope = np.polyfit(xs, ys, 1)[0]
        slopes.append(float(slope))

    if not slopes:
        return None
    return round(math.fsum(slopes) / len(slopes), 6)


def complexity_audit(sweep, batch=1, height=4, width=4, measure=True, seed=0):
    """Measure similarity-stage MACs across (P, C) pairs.

    :param sweep: (heads, channels) pairs
    :type sweep: list(tuple(int, int))
    :param batch: Batch size of the probe input
    :type batch: int
    :param height: Height of the probe input
    :type height: int
    :param width: Width of the probe input
    :type width: int
    :param measure: Run the instrumented forward pass for every pair
    :type measure: bool
    :param seed: Seed for probe inputs and transforms
    :type seed: int
    :return: Audit table
    :rtype: ComplexityAudit

    """
    # opnet.attention imports this module
    from opnet.attention import (
        AttentionParams,
        OpConfig,
        op_multihead_forward,
    )

    rng = np.random.RandomState(seed)
    rows = []
    for heads, channels in sweep:
        cfg = OpConfig(heads=heads)
        shape = (batch, channels, height, width)
        static = count_op_macs(shape, cfg).similarity
        measured = None
        if measure:
            m = rng.standard_normal(shape)
            params = AttentionParams.initialize(rng, channels)
            with counting() as counter:
                op_multihead_forward(m, params, cfg)
            measured = counter.part('similarity')
        logger.debug(
            'P=%d C=%d: similarity MACs %d (measured %s)',
            heads, channels, static, measured)
        rows.append(ComplexityRow(heads, channels, static, measured))
    return ComplexityAudit(rows)
