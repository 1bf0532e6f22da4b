# -*- coding: utf-8 -*-
"""Gradient-check suites over primitives, attention and pyramid stages.

Every case draws its inputs and parameters from a seeded generator and checks
the scalar ``sum(output * cotangent)`` for a random cotangent, so each input
and parameter tensor gets a row in the report.
"""
import collections
import logging

import numpy as np

from opnet.attention import (
    AttentionParams,
    OpConfig,
    ca_forward,
    op_multihead_forward,
)
from opnet.errors import ConfigurationError
from opnet.pyramid import (
    BaseOpParams,
    FeaturePyramid,
    LEVEL_NAMES,
    MpOpParams,
    OpNetParams,
    base_op_forward,
    intp_reduce,
    mp_op_forward,
    opnet_feature_path,
)
from opnet.tensor import (
    ConvParams,
    bilinear_resize,
    broadcast_mul,
    channel_gram,
    concat_channels,
    conv,
    global_avg_pool,
    softmax_rows,
    weighted_channel_sum,
)
from opnet.training import (
    GradCheckReport,
    gradcheck,
)
from opnet.util import parallel_map

logger = logging.getLogger(__name__)

SCOPES = ('primitive', 'attention', 'pyramid', 'all')

# Small pyramid: S2 5x4 gives level extents 5x4, 3x2, 2x1, 1x1, 1x1
PYRAMID_SHAPE = {'batch': 1, 'channels': 4, 's2_height': 5, 's2_width': 4}

Case = collections.namedtuple('Case', 'name scope build')


def _levels(out):
    """Output tensors of a forward result."""
    if isinstance(out, FeaturePyramid):
        return out.levels
    return [out]


def _objective(forward, arrays, rng):
    """Scalar objective sum(output * cotangent) with a random cotangent.

    :param forward: Maps arrays to (output, backward) where backward maps
        output cotangents to gradients by array name
    :type forward: callable
    :param arrays: Arrays the objective depends on
    :type arrays: collections.OrderedDict
    :param rng: Generator for the cotangent
    :type rng: numpy.random.RandomState
    :rtype: callable

    """
    out, _ = forward(arrays)
    cotangents = [rng.standard_normal(level.shape) for level in _levels(out)]
    if not isinstance(out, FeaturePyramid):
        cotangents = cotangents[0]

    def objective(values):
        out, backward = forward(values)
        weights = cotangents if isinstance(out, FeaturePyramid) \
            else [cotangents]
        value = float(sum(
            np.sum(level * weight)
            for level, weight in zip(_levels(out), weights)))
        return value, lambda: backward(cotangents)

    return objective


def _primitive(function, shapes, names=None):
    """Build a case for a primitive whose VJP returns one cotangent per input.

    :param function: Primitive taking the arrays positionally
    :type function: callable
    :param shapes: Shape of each input
    :type shapes: list(tuple(int))
    :param names: Input names (defaults to ``x0``, ``x1``, ...)
    :type names: list(str)

    """
    names = names or ['x{}'.format(index) for index in range(len(shapes))]

    def build(rng):
        arrays = collections.OrderedDict(
            (name, rng.standard_normal(shape))
            for name, shape in zip(names, shapes))

        def forward(values):
            out, vjp = function(*[values[name] for name in names])
            return out, lambda grad: dict(zip(names, vjp(grad)))

        return arrays, _objective(forward, arrays, rng)

    return build


def _conv_case(c_in, c_out, kernel, shape):
    """Build a convolution case with bias."""
    def build(rng):
        params = ConvParams.initialize(rng, c_in, c_out, kernel)
        arrays = collections.OrderedDict([
            ('input', rng.standard_normal(shape)),
            ('weight', params.weight),
            ('bias', params.bias),
        ])

        def forward(values):
            out, vjp = conv(
                values['input'],
                ConvParams(values['weight'], values['bias']),
                kernel)

            def backward(grad):
                d_input, d_weight, d_bias = vjp(grad)
                return {'input': d_input, 'weight': d_weight, 'bias': d_bias}

            return out, backward

        return arrays, _objective(forward, arrays, rng)

    return build


def _resize_case(shape, out_h, out_w):
    """Build a bilinear resize case."""
    return _primitive(
        lambda input: bilinear_resize(input, out_h, out_w), [shape],
        ['input'])


def _attention_case(function, shape, **kwargs):
    """Build a case for an attention forward with its own transforms."""
    def build(rng):
        params = AttentionParams.initialize(rng, shape[1])
        arrays = collections.OrderedDict([('input', rng.standard_normal(shape))])
        arrays.update(params.named_arrays())

        def forward(values):
            out, vjp = function(values['input'], params, **kwargs)

            def backward(grad):
                d_input, grads = vjp(grad)
                grads['input'] = d_input
                return grads

            return out, backward

        return arrays, _objective(forward, arrays, rng)

    return build


def _pyramid_case(make_params, run):
    """Build a case over a small random pyramid and stage parameters.

    :param make_params: Maps (rng, channels) to a parameter container
    :type make_params: callable
    :param run: Maps (pyramid, params) to (output, vjp) with the VJP
        returning (d_levels, grads)
    :type run: callable

    """
    def build(rng):
        pyramid = FeaturePyramid.random(rng, **PYRAMID_SHAPE)
        params = make_params(rng, PYRAMID_SHAPE['channels'])
        inputs = ['input.{}'.format(name) for name in LEVEL_NAMES]
        arrays = collections.OrderedDict(zip(inputs, pyramid.levels))
        arrays.update(params.named_arrays())

        def forward(values):
            levels = FeaturePyramid([values[name] for name in inputs])
            out, vjp = run(levels, params)

            def backward(grad):
                d_levels, grads = vjp(grad)
                grads.update(zip(inputs, d_levels))
                return grads

            return out, backward

        return arrays, _objective(forward, arrays, rng)

    return build


CASES = (
    Case('conv1x1', 'primitive', _conv_case(3, 2, 1, (1, 3, 3, 3))),
    Case('conv3x3', 'primitive', _conv_case(2, 3, 3, (2, 2, 4, 3))),
    Case('softmax_rows', 'primitive',
         _primitive(softmax_rows, [(2, 3, 4)], ['logits'])),
    Case('channel_gram', 'primitive',
         _primitive(channel_gram, [(1, 3, 2, 3), (1, 2, 2, 3)], ['a', 'b'])),
    Case('weighted_channel_sum', 'primitive',
         _primitive(weighted_channel_sum, [(2, 3, 4), (2, 4, 2, 2)],
                    ['weights', 'values'])),
    Case('bilinear_upsample', 'primitive', _resize_case((1, 2, 3, 2), 5, 4)),
    Case('bilinear_downsample', 'primitive',
         _resize_case((1, 2, 5, 4), 2, 3)),
    Case('global_avg_pool', 'primitive',
         _primitive(global_avg_pool, [(2, 3, 3, 2)], ['input'])),
    Case('broadcast_mul', 'primitive',
         _primitive(broadcast_mul, [(1, 3, 1, 1), (1, 3, 2, 2)],
                    ['scale', 'input'])),
    Case('concat_channels', 'primitive',
         _primitive(lambda a, b: concat_channels([a, b]),
                    [(1, 2, 2, 2), (1, 1, 2, 2)], ['a', 'b'])),
    Case('ca_forward', 'attention', _attention_case(ca_forward, (1, 3, 2, 2))),
    Case('op_multihead_forward', 'attention',
         _attention_case(op_multihead_forward, (2, 4, 2, 3),
                         cfg=OpConfig(heads=2))),
    Case('intp_reduce', 'pyramid',
         _pyramid_case(MpOpParams.initialize, intp_reduce)),
    Case('base_op_forward', 'pyramid',
         _pyramid_case(
             BaseOpParams.initialize,
             lambda p, params: base_op_forward(p, params, OpConfig(2)))),
    Case('mp_op_forward', 'pyramid',
         _pyramid_case(MpOpParams.initialize, mp_op_forward)),
    Case('opnet_feature_path', 'pyramid',
         _pyramid_case(
             OpNetParams.initialize,
             lambda p, params: opnet_feature_path(
                 p, params.base, params.mp, OpConfig(2)))),
)


def select_cases(scope):
    """Cases run for a scope.

    :param scope: One of :data:`SCOPES`
    :type scope: str
    :rtype: list(Case)

    """
    if scope not in SCOPES:
        raise ConfigurationError(
            'scope must be one of {}, got {!r}'.format(
                ', '.join(SCOPES), scope))
    return [case for case in CASES if scope in ('all', case.scope)]


def _run_case(task):
    """Run one case for one seed."""
    case, seed, epsilon, threshold, samples = task
    rng = np.random.RandomState(seed)
    arrays, objective = case.build(rng)
    report = gradcheck(
        objective, arrays, epsilon=epsilon, threshold=threshold,
        samples=samples, rng=rng)
    logger.info(
        '%s (seed %d): %s', case.name, seed,
        'passed' if report.passed else 'FAILED')
    return case.name, report


def run_suite(scope, seeds, base_seed=0, epsilon=1e-5, threshold=1e-4,
              samples=None):
    """Gradient-check every case of a scope over several seeds.

    Independent (case, seed) runs may execute in worker threads; the report
    keeps the worst error per ``case/array`` name, sorted by name.

    :param scope: One of :data:`SCOPES`
    :type scope: str
    :param seeds: Number of seeds per case
    :type seeds: int
    :param base_seed: First seed
    :type base_seed: int
    :param epsilon: Finite difference step
    :type epsilon: float
    :param threshold: Largest accepted relative error
    :type threshold: float
    :param samples: Entries probed per array (all when None)
    :type samples: int | None
    :rtype: opnet.training.GradCheckReport

    """
    tasks = [
        (case, base_seed + offset, epsilon, threshold, samples)
        for case in select_cases(scope)
        for offset in range(seeds)
    ]
    worst = {}
    for name, report in parallel_map(_run_case, tasks):
        for array_name, error in report.errors.items():
            key = '{}/{}'.format(name, array_name)
            worst[key] = max(error, worst.get(key, 0.0))

    errors = collections.OrderedDict(
        (key, worst[key]) for key in sorted(worst))
    report = GradCheckReport(errors, epsilon, threshold)
    for key in report.failures():
        logger.warning(
            'Gradient check failed for %s: relative error %.3e', key,
            errors[key])
    return report
