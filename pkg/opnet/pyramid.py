# -*- coding: utf-8 -*-
"""Feature pyramids, cross-level attention (MP-OP) and the OP-Net path.

A feature pyramid holds the five levels S2..S6 of a detector neck. MP-OP
squeezes every level to one channel, resizes it to the S2 extent and runs
channel attention with the levels playing the role of channels. The pooled
response of each level then scales the original level, which is fused with
its unscaled copy by a 3x3 convolution.
"""
import collections
import logging
import math

import numpy as np

from opnet.accounting import (
    AccountingReport,
    BASE_STAGES,
    MP_STAGES,
    count_stage,
    labelled,
)
from opnet.attention import (
    AttentionParams,
    OpConfig,
    op_multihead_forward,
)
from opnet.errors import ContractError
from opnet.tensor import (
    ConvParams,
    Parameters,
    as_tensor,
    bilinear_resize,
    broadcast_mul,
    concat_channels,
    conv,
    global_avg_pool,
    prefixed,
)
from opnet.util import parallel_map

logger = logging.getLogger(__name__)

LEVEL_NAMES = ('S2', 'S3', 'S4', 'S5', 'S6')
STRIDES = (4, 8, 16, 32, 64)
MIN_LEVEL = 2
MAX_LEVEL = 6

# Stage toggles for the feature path variants
VARIANTS = {
    'none': (),
    'base_op': ('base',),
    'mp_op': ('mp',),
    'opnet': ('base', 'mp'),
}


def level_shapes(batch, channels, s2_height, s2_width):
    """Return the five level shapes for a given S2 extent.

    Spatial extents halve from each level to the next, rounding up.

    :rtype: list(tuple(int))

    """
    shapes = []
    height, width = s2_height, s2_width
    for _ in LEVEL_NAMES:
        shapes.append((batch, channels, height, width))
        height, width = (height + 1) // 2, (width + 1) // 2
    return shapes


class FeaturePyramid(object):

    """Five feature levels S2..S6 sharing batch and channel extents.

    :param levels: Level tensors, finest first
    :type levels: list(numpy.ndarray)
    :param strides: Level strides in input pixels
    :type strides: list(int)

    """

    def __init__(self, levels, strides=STRIDES):
        """Validate the pyramid invariants."""
        levels = list(levels)
        if len(levels) != len(LEVEL_NAMES):
            raise ContractError(
                'a pyramid has {} levels, got {}'.format(
                    len(LEVEL_NAMES), len(levels)))
        if tuple(strides) != STRIDES:
            raise ContractError(
                'pyramid strides must be {}, got {}'.format(
                    list(STRIDES), list(strides)))

        self.levels = [
            as_tensor(level, name)
            for name, level in zip(LEVEL_NAMES, levels)
        ]
        self.strides = STRIDES

        first = self.levels[0]
        for index, level in enumerate(self.levels[1:], start=1):
            name = LEVEL_NAMES[index]
            if level.shape[:2] != first.shape[:2]:
                raise ContractError(
                    '{} shape {} does not share batch and channels with '
                    'S2 shape {}'.format(name, level.shape, first.shape))
            previous = self.levels[index - 1].shape
            expected = ((previous[2] + 1) // 2, (previous[3] + 1) // 2)
            if level.shape[2:] != expected:
                raise ContractError(
                    '{} spatial extent {} should be {} (half of {} '
                    'rounded up)'.format(
                        name, level.shape[2:], expected,
                        LEVEL_NAMES[index - 1]))

    def __len__(self):
        """Number of levels."""
        return len(self.levels)

    def __iter__(self):
        """Iterate over level tensors."""
        return iter(self.levels)

    def __getitem__(self, index):
        """Return a level by position or by name (``'S3'``)."""
        if isinstance(index, str):
            index = LEVEL_NAMES.index(index)
        return self.levels[index]

    @property
    def shapes(self):
        """Level shapes, finest first."""
        return [level.shape for level in self.levels]

    @property
    def batch(self):
        """Batch extent."""
        return self.levels[0].shape[0]

    @property
    def channels(self):
        """Channel extent."""
        return self.levels[0].shape[1]

    @classmethod
    def random(cls, rng, batch, channels, s2_height, s2_width):
        """Fill a pyramid with standard normal values.

        :rtype: FeaturePyramid

        """
        return cls([
            rng.standard_normal(shape)
            for shape in level_shapes(batch, channels, s2_height, s2_width)
        ])


class BaseOpParams(Parameters):

    """Per-level Base OP attention and stage-A fusion convolutions.

    :param attention: Attention transforms, one per level
    :type attention: list(opnet.attention.AttentionParams)
    :param fusion: 3x3 convs 2C -> C over (original, adjusted), one per level
    :type fusion: list(opnet.tensor.ConvParams)

    """

    def __init__(self, attention, fusion):
        """Check one entry per level."""
        if len(attention) != len(LEVEL_NAMES) or \
                len(fusion) != len(LEVEL_NAMES):
            raise ContractError('base OP needs one entry per pyramid level')
        self.attention = list(attention)
        self.fusion = list(fusion)

    def children(self):
        """Return attention and fusion parameters per level."""
        children = []
        for name, attention, fusion in zip(
                LEVEL_NAMES, self.attention, self.fusion):
            children.append(('{}.attention'.format(name), attention))
            children.append(('{}.fusion'.format(name), fusion))
        return children

    @classmethod
    def initialize(cls, rng, channels):
        """Draw random per-level parameters.

        :rtype: BaseOpParams

        """
        attention = []
        fusion = []
        for _ in LEVEL_NAMES:
            attention.append(AttentionParams.initialize(rng, channels))
            fusion.append(
                ConvParams.initialize(rng, 2 * channels, channels, 3))
        return cls(attention, fusion)

    @classmethod
    def identity(cls, channels):
        """Zero value transforms and fusions passing the original through.

        :rtype: BaseOpParams

        """
        return cls(
            [AttentionParams.identity(channels, zero_values=True)
             for _ in LEVEL_NAMES],
            [ConvParams.passthrough(
                channels, 2 * channels, offset=0, kernel=3, bias=True)
             for _ in LEVEL_NAMES],
        )


class MpOpParams(Parameters):

    """Cross-level attention parameters.

    :param reduce_transforms: 1x1 convs C -> 1, one per level
    :type reduce_transforms: list(opnet.tensor.ConvParams)
    :param cross_attention: Transforms over the 5 level maps
    :type cross_attention: opnet.attention.AttentionParams
    :param restore_convs: 3x3 convs 2C -> C over (scaled, original)
    :type restore_convs: list(opnet.tensor.ConvParams)
    :param config: Head configuration of the cross-level block
    :type config: opnet.attention.OpConfig

    """

    def __init__(self, reduce_transforms, cross_attention, restore_convs,
                 config=None):
        """Check shapes of the cross-level parameters."""
        if len(reduce_transforms) != len(LEVEL_NAMES) or \
                len(restore_convs) != len(LEVEL_NAMES):
            raise ContractError('MP-OP needs one conv per pyramid level')
        for transform in reduce_transforms:
            if transform.out_channels != 1 or transform.kernel != 1:
                raise ContractError(
                    'reduce transforms must be 1x1 convs to 1 channel, '
                    'got weight {}'.format(transform.weight.shape))
        if cross_attention.channels != len(LEVEL_NAMES):
            raise ContractError(
                'cross-level attention must act on {} channels, got {}'.format(
                    len(LEVEL_NAMES), cross_attention.channels))
        self.reduce_transforms = list(reduce_transforms)
        self.cross_attention = cross_attention
        self.restore_convs = list(restore_convs)
        self.config = config if config is not None else OpConfig(heads=1)

    def children(self):
        """Return reduce, attention and restore parameters."""
        children = [
            ('reduce.{}'.format(name), transform)
            for name, transform in zip(LEVEL_NAMES, self.reduce_transforms)
        ]
        children.append(('attention', self.cross_attention))
        children.extend(
            ('restore.{}'.format(name), restore)
            for name, restore in zip(LEVEL_NAMES, self.restore_convs))
        return children

    @classmethod
    def initialize(cls, rng, channels, config=None):
        """Averaging reduce transforms and random attention and restore convs.

        :rtype: MpOpParams

        """
        reduce_transforms = [
            ConvParams(np.full((1, channels, 1, 1), 1.0 / channels),
                       np.zeros(1))
            for _ in LEVEL_NAMES
        ]
        cross_attention = AttentionParams.initialize(rng, len(LEVEL_NAMES))
        restore_convs = [
            ConvParams.initialize(rng, 2 * channels, channels, 3)
            for _ in LEVEL_NAMES
        ]
        return cls(reduce_transforms, cross_attention, restore_convs, config)

    @classmethod
    def identity(cls, channels, config=None):
        """Restore convs passing the original level through unchanged.

        :rtype: MpOpParams

        """
        reduce_transforms = [
            ConvParams(np.full((1, channels, 1, 1), 1.0 / channels),
                       np.zeros(1))
            for _ in LEVEL_NAMES
        ]
        restore_convs = [
            ConvParams.passthrough(
                channels, 2 * channels, offset=channels, kernel=3, bias=True)
            for _ in LEVEL_NAMES
        ]
        return cls(
            reduce_transforms,
            AttentionParams.identity(len(LEVEL_NAMES)),
            restore_convs,
            config,
        )


class OpNetParams(Parameters):

    """Parameters of the whole feature path.

    :param base: Stage-A parameters
    :type base: BaseOpParams
    :param mp: Stage-B parameters
    :type mp: MpOpParams

    """

    def __init__(self, base, mp):
        """Keep both stages."""
        self.base = base
        self.mp = mp

    def children(self):
        """Return both stages."""
        return [('base', self.base), ('mp', self.mp)]

    @classmethod
    def initialize(cls, rng, channels, cross_config=None):
        """Draw random parameters for both stages.

        :rtype: OpNetParams

        """
        return cls(
            BaseOpParams.initialize(rng, channels),
            MpOpParams.initialize(rng, channels, cross_config),
        )

    @classmethod
    def identity(cls, channels, cross_config=None):
        """Residual-identity parameters for both stages.

        :rtype: OpNetParams

        """
        return cls(
            BaseOpParams.identity(channels),
            MpOpParams.identity(channels, cross_config),
        )


def _as_levels(grads, shapes):
    """Accept a pyramid or a list of arrays as level cotangents."""
    levels = list(grads.levels if isinstance(grads, FeaturePyramid)
                  else grads)
    if [np.shape(level) for level in levels] != [tuple(s) for s in shapes]:
        raise ContractError(
            'level cotangent shapes {} do not match pyramid shapes {}'.format(
                [np.shape(level) for level in levels], shapes))
    return [np.asarray(level, dtype=np.float64) for level in levels]


def intp_reduce(p, params):
    """Squeeze every level to one channel and resize it to the S2 extent.

    :param p: Input pyramid
    :type p: FeaturePyramid
    :param params: Cross-level parameters (reduce transforms are used)
    :type params: MpOpParams
    :return: Tensor (B, 5, H_S2, W_S2) and VJP returning (d_levels, grads)
    :rtype: tuple(numpy.ndarray, callable)

    """
    _, _, s2_height, s2_width = p.shapes[0]
    steps = []
    for name, level, transform in zip(
            LEVEL_NAMES, p.levels, params.reduce_transforms):
        if transform.in_channels != level.shape[1]:
            raise ContractError(
                '{} has {} channels, reduce transform expects {}'.format(
                    name, level.shape[1], transform.in_channels))
        with labelled('mp_reduce'):
            reduced, reduce_vjp = conv(level, transform, 1)
        with labelled('mp_resize'):
            resized, resize_vjp = bilinear_resize(
                reduced, s2_height, s2_width)
        steps.append((resized, reduce_vjp, resize_vjp, transform))

    out, concat_vjp = concat_channels([resized for resized, _, _, _ in steps])

    def vjp(grad):
        d_levels = []
        grads = collections.OrderedDict()
        for name, d_resized, (_, reduce_vjp, resize_vjp, transform) in zip(
                LEVEL_NAMES, concat_vjp(grad), steps):
            d_reduced, = resize_vjp(d_resized)
            d_level, d_weight, d_bias = reduce_vjp(d_reduced)
            d_levels.append(d_level)
            grads.update(prefixed(
                'reduce.{}'.format(name),
                transform.grads(d_weight, d_bias)))
        return d_levels, grads

    return out, vjp


def mp_op_forward(p, params, trace=None):
    """Cross-level attention with pooled rescaling and 3x3 fusion.

    :param p: Input pyramid
    :type p: FeaturePyramid
    :param params: Cross-level parameters
    :type params: MpOpParams
    :param trace: Optional dict collecting intermediates (``reduced``,
        ``weights``, ``rpcg``, ``level_weights``)
    :type trace: dict
    :return: Pyramid with the input shapes and VJP returning (d_levels, grads)
    :rtype: tuple(FeaturePyramid, callable)

    """
    reduced, reduce_vjp = intp_reduce(p, params)
    logger.info('Cross-level map shape: %s', reduced.shape)

    with labelled('mp_attention'):
        rpcg, attention_vjp = op_multihead_forward(
            reduced, params.cross_attention, params.config, trace)
    with labelled('mp_pool'):
        level_weights, pool_vjp = global_avg_pool(rpcg)
    if trace is not None:
        trace['reduced'] = reduced
        trace['rpcg'] = rpcg
        trace['level_weights'] = level_weights

    steps = []
    outputs = []
    for index, (level, restore) in enumerate(
            zip(p.levels, params.restore_convs)):
        channels = level.shape[1]
        scale = np.repeat(level_weights[:, index:index + 1], channels, axis=1)
        with labelled('mp_scale'):
            scaled, scale_vjp = broadcast_mul(scale, level)
        stacked, concat_vjp = concat_channels([scaled, level])
        with labelled('mp_fusion'):
            out, restore_vjp = conv(stacked, restore, 3)
        outputs.append(out)
        steps.append((scale_vjp, concat_vjp, restore_vjp, restore))

    def vjp(grads):
        d_outputs = _as_levels(grads, p.shapes)
        d_levels = []
        d_level_weights = np.zeros(level_weights.shape)
        restore_grads = collections.OrderedDict()
        for index, (d_out, step) in enumerate(zip(d_outputs, steps)):
            scale_vjp, concat_vjp, restore_vjp, restore = step
            d_stacked, d_weight, d_bias = restore_vjp(d_out)
            d_scaled, d_original = concat_vjp(d_stacked)
            d_scale, d_level = scale_vjp(d_scaled)
            d_levels.append(d_level + d_original)
            d_level_weights[:, index] = d_scale.sum(axis=1)
            restore_grads.update(prefixed(
                'restore.{}'.format(LEVEL_NAMES[index]),
                restore.grads(d_weight, d_bias)))

        d_rpcg, = pool_vjp(d_level_weights)
        d_reduced, attention_grads = attention_vjp(d_rpcg)
        d_inputs, reduce_grads = reduce_vjp(d_reduced)

        all_grads = collections.OrderedDict(reduce_grads)
        all_grads.update(prefixed('attention', attention_grads))
        all_grads.update(restore_grads)
        d_levels = [
            d_level + d_input
            for d_level, d_input in zip(d_levels, d_inputs)
        ]
        return d_levels, all_grads

    return FeaturePyramid(outputs), vjp


def _base_op_level(args):
    """Stage A on one level: OP, then 3x3 fusion of (original, adjusted)."""
    level, attention, fusion, cfg = args
    with labelled('base_op'):
        adjusted, attention_vjp = op_multihead_forward(level, attention, cfg)
    stacked, concat_vjp = concat_channels([level, adjusted])
    with labelled('base_fusion'):
        fused, fusion_vjp = conv(stacked, fusion, 3)
    return fused, (attention_vjp, concat_vjp, fusion_vjp)


def base_op_forward(p, params, cfg):
    """Stage A: Base OP on every level fused with the original level.

    Levels are independent and may be evaluated in worker threads
    (see :func:`opnet.util.parallel_map`).

    :param p: Input pyramid
    :type p: FeaturePyramid
    :param params: Stage-A parameters
    :type params: BaseOpParams
    :param cfg: Head configuration
    :type cfg: opnet.attention.OpConfig
    :return: Pyramid with the input shapes and VJP returning (d_levels, grads)
    :rtype: tuple(FeaturePyramid, callable)

    """
    cfg.check(p.channels)
    results = parallel_map(_base_op_level, [
        (level, attention, fusion, cfg)
        for level, attention, fusion in zip(
            p.levels, params.attention, params.fusion)
    ])

    def vjp(grads):
        d_outputs = _as_levels(grads, p.shapes)
        d_levels = []
        all_grads = collections.OrderedDict()
        for name, d_out, (_, step), attention, fusion in zip(
                LEVEL_NAMES, d_outputs, results,
                params.attention, params.fusion):
            attention_vjp, concat_vjp, fusion_vjp = step
            d_stacked, d_weight, d_bias = fusion_vjp(d_out)
            d_original, d_adjusted = concat_vjp(d_stacked)
            d_input, attention_grads = attention_vjp(d_adjusted)
            d_levels.append(d_original + d_input)
            all_grads.update(prefixed(
                '{}.attention'.format(name), attention_grads))
            all_grads.update(prefixed(
                '{}.fusion'.format(name), fusion.grads(d_weight, d_bias)))
        return d_levels, all_grads

    return FeaturePyramid([fused for fused, _ in results]), vjp


def opnet_feature_path(p, base_params, mp_params, cfg, stages=('base', 'mp'),
                       trace=None):
    """OP-Net feature path: stage A (Base OP) then stage B (MP-OP).

    :param p: Input pyramid
    :type p: FeaturePyramid
    :param base_params: Stage-A parameters
    :type base_params: BaseOpParams
    :param mp_params: Stage-B parameters
    :type mp_params: MpOpParams
    :param cfg: Head configuration of the Base OP
    :type cfg: opnet.attention.OpConfig
    :param stages: Stages to run, subset of ``('base', 'mp')``
    :type stages: tuple(str)
    :param trace: Optional dict collecting MP-OP intermediates
    :type trace: dict
    :return: Pyramid with the input shapes and VJP returning
        (d_levels, grads) where grads are prefixed ``base.`` and ``mp.``
    :rtype: tuple(FeaturePyramid, callable)

    """
    unknown = set(stages) - {'base', 'mp'}
    if unknown:
        raise ContractError('unknown stages: {}'.format(sorted(unknown)))
    cfg.check(p.channels)

    out = p
    vjps = []
    if 'base' in stages:
        out, base_vjp = base_op_forward(out, base_params, cfg)
        vjps.append(('base', base_vjp))
    if 'mp' in stages:
        out, mp_vjp = mp_op_forward(out, mp_params, trace)
        vjps.append(('mp', mp_vjp))
    if not vjps:
        out = FeaturePyramid([level.copy() for level in p.levels])

    def vjp(grads):
        d_levels = _as_levels(grads, p.shapes)
        all_grads = collections.OrderedDict()
        for prefix, stage_vjp in reversed(vjps):
            d_levels, stage_grads = stage_vjp(d_levels)
            all_grads = collections.OrderedDict(
                list(prefixed(prefix, stage_grads).items()) +
                list(all_grads.items()))
        return d_levels, all_grads

    return out, vjp


class GtBox(object):

    """Ground-truth box size in input-image pixels.

    :param width: Box width
    :type width: float
    :param height: Box height
    :type height: float
    :param assigned_level: Known pyramid level, if any
    :type assigned_level: int | None

    """

    def __init__(self, width, height, assigned_level=None):
        """Validate box dimensions."""
        if not (width > 0 and height > 0):
            raise ContractError(
                'box dimensions must be positive, got {!r}x{!r}'.format(
                    width, height))
        if assigned_level is not None:
            _check_level(assigned_level)
        self.width = float(width)
        self.height = float(height)
        self.assigned_level = assigned_level


def _check_level(level):
    """Raise ContractError for levels outside S2..S6."""
    if not MIN_LEVEL <= level <= MAX_LEVEL or int(level) != level:
        raise ContractError(
            'pyramid level must be in [{}, {}], got {!r}'.format(
                MIN_LEVEL, MAX_LEVEL, level))


def assign_fpn_level(box):
    """Canonical pyramid level for a box: 4 + floor(log2(sqrt(wh)/224)).

    :param box: Ground-truth box
    :type box: GtBox
    :return: Level clamped to [2, 6]
    :rtype: int

    """
    if not (box.width > 0 and box.height > 0):
        raise ContractError(
            'box dimensions must be positive, got {!r}x{!r}'.format(
                box.width, box.height))
    level = 4 + math.floor(math.log2(math.sqrt(box.width * box.height) / 224))
    return int(min(max(level, MIN_LEVEL), MAX_LEVEL))


def mismatch_rate(pairs, per_level=False):
    """Fraction of objects whose chosen level differs from the true one.

    :param pairs: (chosen_level, gt_level) pairs
    :type pairs: list(tuple(int, int))
    :param per_level: Also return rates grouped by ground-truth level
    :type per_level: bool
    :return: Overall rate (None for no pairs) and, if requested, a dict from
        level to rate (None for levels without objects)
    :rtype: float | None | tuple(float | None, dict(int, float | None))

    """
    totals = collections.Counter()
    mismatches = collections.Counter()
    for chosen, gt in pairs:
        _check_level(chosen)
        _check_level(gt)
        totals[gt] += 1
        if chosen != gt:
            mismatches[gt] += 1

    count = sum(totals.values())
    overall = sum(mismatches.values()) / count if count else None
    if not per_level:
        return overall

    rates = collections.OrderedDict(
        (level, mismatches[level] / totals[level] if totals[level] else None)
        for level in range(MIN_LEVEL, MAX_LEVEL + 1))
    return overall, rates


def count_pyramid_macs_params(cfg, shapes, stages=('base', 'mp'),
                              cross_cfg=None):
    """Accounting report for the enabled stages of the feature path.

    :param cfg: Head configuration of the Base OP
    :type cfg: opnet.attention.OpConfig
    :param shapes: Level shapes, finest first
    :type shapes: list(tuple(int))
    :param stages: Enabled stages, subset of ``('base', 'mp')``
    :type stages: tuple(str)
    :param cross_cfg: Head configuration of the cross-level block
    :type cross_cfg: opnet.attention.OpConfig
    :rtype: opnet.accounting.AccountingReport

    """
    names = []
    if 'base' in stages:
        names.extend(BASE_STAGES)
    if 'mp' in stages:
        names.extend(MP_STAGES)
    return AccountingReport([
        count_stage(name, cfg, shapes, cross_cfg) for name in names
    ])
