# -*- coding: utf-8 -*-
"""Channel attention and the multi-head Optimized-Position block.

Queries, keys and values are whole feature channels produced by bias-free
1x1 convolutions. Similarity between a query and a key channel is their dot
product over spatial positions, normalized with a softmax over keys.
"""
import collections
import logging

from opnet.accounting import (
    count_op_macs,
    labelled,
)
from opnet.errors import ConfigurationError
from opnet.tensor import (
    ConvParams,
    Parameters,
    as_tensor,
    channel_gram,
    concat_channels,
    conv,
    softmax_rows,
    split_channels,
    weighted_channel_sum,
)

logger = logging.getLogger(__name__)

__all__ = [
    'AttentionParams',
    'OpConfig',
    'ca_forward',
    'count_op_macs',
    'op_multihead_forward',
]


class OpConfig(object):

    """Multi-head attention settings.

    :param heads: Number of heads P the channels are divided into
    :type heads: int
    :param temperature: Divisor applied to similarities before the softmax
    :type temperature: float

    """

    def __init__(self, heads=2, temperature=1.0):
        """Validate heads and temperature."""
        if int(heads) != heads or heads < 1:
            raise ConfigurationError(
                'heads must be a positive integer, got {!r}'.format(heads))
        if not temperature > 0:
            raise ConfigurationError(
                'temperature must be positive, got {!r}'.format(temperature))
        self.heads = int(heads)
        self.temperature = float(temperature)

    def check(self, channels):
        """Raise ConfigurationError unless P divides C."""
        if channels % self.heads != 0:
            raise ConfigurationError(
                'channels C={} not divisible by heads P={}'.format(
                    channels, self.heads))

    def __repr__(self):
        """Show heads and temperature."""
        return 'OpConfig(heads={}, temperature={})'.format(
            self.heads, self.temperature)


class AttentionParams(Parameters):

    """Query, key and value channel transforms (1x1, C -> C).

    :param q_transform: Query transform
    :type q_transform: opnet.tensor.ConvParams
    :param k_transform: Key transform
    :type k_transform: opnet.tensor.ConvParams
    :param v_transform: Value transform
    :type v_transform: opnet.tensor.ConvParams

    """

    def __init__(self, q_transform, k_transform, v_transform):
        """Check that the three transforms are square 1x1 maps of equal width."""
        transforms = (q_transform, k_transform, v_transform)
        channels = q_transform.in_channels
        for transform in transforms:
            if (transform.kernel != 1 or
                    transform.in_channels != channels or
                    transform.out_channels != channels):
                raise ConfigurationError(
                    'attention transforms must all be 1x1 maps {0}->{0}, '
                    'got weight {1}'.format(channels, transform.weight.shape))
        self.q_transform = q_transform
        self.k_transform = k_transform
        self.v_transform = v_transform

    @property
    def channels(self):
        """Channel count C."""
        return self.q_transform.in_channels

    def children(self):
        """Return the q, k and v transforms."""
        return [
            ('q', self.q_transform),
            ('k', self.k_transform),
            ('v', self.v_transform),
        ]

    @classmethod
    def initialize(cls, rng, channels):
        """Draw three random bias-free transforms.

        :rtype: AttentionParams

        """
        return cls(*[
            ConvParams.initialize(rng, channels, channels, 1, bias=False)
            for _ in range(3)
        ])

    @classmethod
    def identity(cls, channels, zero_values=False):
        """Identity transforms, optionally with an all-zero value transform.

        :rtype: AttentionParams

        """
        v_transform = ConvParams.passthrough(channels, channels)
        if zero_values:
            v_transform.weight[...] = 0.0
        return cls(
            ConvParams.passthrough(channels, channels),
            ConvParams.passthrough(channels, channels),
            v_transform,
        )


def _transform(m, params):
    """Apply the q, k and v transforms."""
    with labelled('transform'):
        outputs = [conv(m, transform, 1) for _, transform in params.children()]
    return outputs


def _attend(q, k, v, temperature, trace):
    """Attention of every query channel over the key/value channels."""
    with labelled('similarity'):
        sim, sim_vjp = channel_gram(q, k)
        weights, softmax_vjp = softmax_rows(sim / temperature)
        out, sum_vjp = weighted_channel_sum(weights, v)

    if trace is not None:
        trace.setdefault('weights', []).append(weights)

    def vjp(grad):
        d_weights, d_v = sum_vjp(grad)
        d_sim, = softmax_vjp(d_weights)
        d_q, d_k = sim_vjp(d_sim / temperature)
        return d_q, d_k, d_v

    return out, vjp


def _transform_vjp(params, vjps, d_outputs):
    """Back-propagate through the q, k and v transforms."""
    d_input = None
    grads = collections.OrderedDict()
    for (name, transform), vjp, d_output in zip(
            params.children(), vjps, d_outputs):
        d_x, d_weight, d_bias = vjp(d_output)
        d_input = d_x if d_input is None else d_input + d_x
        for key, grad in transform.grads(d_weight, d_bias).items():
            grads['{}.{}'.format(name, key)] = grad
    return d_input, grads


def ca_forward(m, params, temperature=1.0, trace=None):
    """Channel attention over all channels of a tensor.

    :param m: Tensor (B, C, H, W)
    :type m: numpy.ndarray
    :param params: Query, key and value transforms
    :type params: AttentionParams
    :param temperature: Similarity divisor
    :type temperature: float
    :param trace: Optional dict collecting the softmax weights
    :type trace: dict
    :return: Tensor shaped like m and VJP returning (d_m, grads)
    :rtype: tuple(numpy.ndarray, callable)

    """
    m = as_tensor(m, 'ca_forward input')
    transformed = _transform(m, params)
    (q, _), (k, _), (v, _) = transformed
    out, attend_vjp = _attend(q, k, v, temperature, trace)

    def vjp(grad):
        d_outputs = attend_vjp(grad)
        return _transform_vjp(
            params, [vjp for _, vjp in transformed], d_outputs)

    return out, vjp


def op_multihead_forward(m, params, cfg, trace=None):
    """Multi-head channel attention (Base OP).

    Channels are divided into P contiguous heads; attention runs within each
    head on its slice of the full-width q, k and v maps and the head outputs
    are concatenated back in head order.

    :param m: Tensor (B, C, H, W)
    :type m: numpy.ndarray
    :param params: Query, key and value transforms
    :type params: AttentionParams
    :param cfg: Head count and temperature
    :type cfg: OpConfig
    :param trace: Optional dict collecting per-head softmax weights
    :type trace: dict
    :return: Tensor shaped like m and VJP returning (d_m, grads)
    :rtype: tuple(numpy.ndarray, callable)

    """
    m = as_tensor(m, 'op_multihead_forward input')
    cfg.check(m.shape[1])
    heads = cfg.heads
    sizes = [m.shape[1] // heads] * heads

    transformed = _transform(m, params)
    (q, _), (k, _), (v, _) = transformed
    if heads == 1:
        head_inputs = [(q, k, v)]
    else:
        head_inputs = list(zip(
            split_channels(q, sizes),
            split_channels(k, sizes),
            split_channels(v, sizes),
        ))

    head_outputs = [
        _attend(q_head, k_head, v_head, cfg.temperature, trace)
        for q_head, k_head, v_head in head_inputs
    ]
    out, concat_vjp = concat_channels([out for out, _ in head_outputs])
    logger.debug('OP over %s with %d heads', m.shape, heads)

    def vjp(grad):
        d_heads = concat_vjp(grad)
        d_qs, d_ks, d_vs = [], [], []
        for (_, head_vjp), d_head in zip(head_outputs, d_heads):
            d_q, d_k, d_v = head_vjp(d_head)
            d_qs.append(d_q)
            d_ks.append(d_k)
            d_vs.append(d_v)
        d_outputs = [
            concat_channels(blocks)[0] if heads > 1 else blocks[0]
            for blocks in (d_qs, d_ks, d_vs)
        ]
        return _transform_vjp(
            params, [vjp for _, vjp in transformed], d_outputs)

    return out, vjp
