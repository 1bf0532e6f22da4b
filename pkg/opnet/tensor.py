# -*- coding: utf-8 -*-
"""Dense tensors and their differentiable primitives.

A tensor is a C-contiguous 4-D float64 :class:`numpy.ndarray` shaped
(batch, channel, height, width). Every primitive returns its output together
with a VJP closure mapping the output cotangent to one cotangent per
differentiable input.
"""
import collections
import copy
import logging

import numpy as np

from numpy.lib.stride_tricks import sliding_window_view

from opnet.accounting import record_macs
from opnet.errors import (
    ContractError,
    EmptyAxisError,
)

logger = logging.getLogger(__name__)

KERNEL_SIZES = (1, 3)


def as_tensor(data, name='tensor'):
    """Validate and return data as a tensor.

    :param data: Array-like with 4 axes
    :type data: numpy.ndarray
    :param name: Name used in error messages
    :type name: str
    :return: C-contiguous float64 array
    :rtype: numpy.ndarray

    """
    array = np.ascontiguousarray(data, dtype=np.float64)
    if array.ndim != 4:
        raise ContractError(
            '{} must have shape (B, C, H, W), got {}'.format(
                name, array.shape))
    if not np.all(np.isfinite(array)):
        raise ContractError(
            '{} with shape {} contains non-finite values'.format(
                name, array.shape))
    return array


def _cotangent(grad, shape):
    """Validate an output cotangent against the output shape."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != tuple(shape):
        raise ContractError(
            'cotangent shape {} does not match output shape {}'.format(
                grad.shape, tuple(shape)))
    return grad


class Parameters(object):

    """Container of named learnable arrays.

    Subclasses list their own arrays in :meth:`own_arrays` and nested
    containers in :meth:`children`; :meth:`named_arrays` flattens both into
    dotted names.

    """

    def own_arrays(self):
        """Return (name, array) pairs held directly by this container."""
        return []

    def children(self):
        """Return (name, container) pairs of nested containers."""
        return []

    def named_arrays(self):
        """Return every learnable array under its dotted name.

        :rtype: collections.OrderedDict

        """
        arrays = collections.OrderedDict(self.own_arrays())
        for prefix, child in self.children():
            for name, array in child.named_arrays().items():
                arrays['{}.{}'.format(prefix, name)] = array
        return arrays

    @property
    def size(self):
        """Number of learnable scalars."""
        return sum(array.size for array in self.named_arrays().values())

    def load(self, values):
        """Overwrite arrays in place from a name to array mapping.

        :param values: New values for every array
        :type values: dict(str, numpy.ndarray)

        """
        for name, array in self.named_arrays().items():
            if name not in values:
                raise ContractError('missing parameter: {}'.format(name))
            value = np.asarray(values[name], dtype=np.float64)
            if value.shape != array.shape:
                raise ContractError(
                    '{} has shape {}, expected {}'.format(
                        name, value.shape, array.shape))
            array[...] = value

    def copy(self):
        """Return an independent deep copy."""
        return copy.deepcopy(self)


def prefixed(prefix, grads):
    """Prepend a dotted prefix to every gradient name.

    :param prefix: Prefix to add
    :type prefix: str
    :param grads: Gradients by name
    :type grads: dict(str, numpy.ndarray)
    :rtype: collections.OrderedDict

    """
    return collections.OrderedDict(
        ('{}.{}'.format(prefix, name), grad) for name, grad in grads.items())


class ConvParams(Parameters):

    """Weights of a stride-1, same-padded convolution.

    :param weight: Weights shaped (C_out, C_in, k, k) with k in {1, 3}
    :type weight: numpy.ndarray
    :param bias: Bias of length C_out or None for a bias-free convolution
    :type bias: numpy.ndarray | None

    """

    def __init__(self, weight, bias=None):
        """Validate weight and bias shapes."""
        weight = np.array(weight, dtype=np.float64)
        if (weight.ndim != 4 or weight.shape[2] != weight.shape[3] or
                weight.shape[2] not in KERNEL_SIZES):
            raise ContractError(
                'conv weight must be (C_out, C_in, k, k) with k in {}, '
                'got {}'.format(KERNEL_SIZES, weight.shape))
        if bias is not None:
            bias = np.array(bias, dtype=np.float64)
            if bias.shape != (weight.shape[0],):
                raise ContractError(
                    'conv bias shape {} does not match C_out={}'.format(
                        bias.shape, weight.shape[0]))
        self.weight = weight
        self.bias = bias

    @property
    def out_channels(self):
        """Output channels."""
        return self.weight.shape[0]

    @property
    def in_channels(self):
        """Input channels."""
        return self.weight.shape[1]

    @property
    def kernel(self):
        """Kernel size."""
        return self.weight.shape[2]

    def own_arrays(self):
        """Return weight and (if any) bias."""
        arrays = [('weight', self.weight)]
        if self.bias is not None:
            arrays.append(('bias', self.bias))
        return arrays

    def grads(self, d_weight, d_bias):
        """Pack weight and bias cotangents like :meth:`named_arrays`."""
        grads = collections.OrderedDict([('weight', d_weight)])
        if self.bias is not None:
            grads['bias'] = d_bias
        return grads

    @classmethod
    def initialize(cls, rng, c_in, c_out, kernel, bias=True):
        """Draw weights uniformly in +-1/sqrt(fan_in).

        :param rng: Random number generator
        :type rng: numpy.random.RandomState
        :param c_in: Input channels
        :type c_in: int
        :param c_out: Output channels
        :type c_out: int
        :param kernel: Kernel size
        :type kernel: int
        :param bias: Whether to create a bias
        :type bias: bool
        :rtype: ConvParams

        """
        fan_in = c_in * kernel * kernel
        bound = 1.0 / np.sqrt(fan_in) if fan_in else 0.0
        weight = rng.uniform(-bound, bound, (c_out, c_in, kernel, kernel))
        bias_values = rng.uniform(-bound, bound, c_out) if bias else None
        return cls(weight, bias_values)

    @classmethod
    def passthrough(cls, c_out, c_in, offset=0, kernel=1, bias=False):
        """Build weights copying input channels offset..offset+C_out.

        With ``offset=0`` and ``c_in == c_out`` this is the identity map.

        :rtype: ConvParams

        """
        weight = np.zeros((c_out, c_in, kernel, kernel))
        center = kernel // 2
        for channel in range(c_out):
            weight[channel, offset + channel, center, center] = 1.0
        return cls(weight, np.zeros(c_out) if bias else None)


def conv(input, params, kernel=None):
    """Convolve with stride 1 and zero padding that keeps H and W.

    :param input: Tensor (B, C_in, H, W)
    :type input: numpy.ndarray
    :param params: Convolution weights
    :type params: ConvParams
    :param kernel: Expected kernel size (checked against the weights)
    :type kernel: int
    :return: Tensor (B, C_out, H, W) and VJP returning
        (d_input, d_weight, d_bias)
    :rtype: tuple(numpy.ndarray, callable)

    """
    x = as_tensor(input, 'conv input')
    weight = params.weight
    bias = params.bias
    c_out, c_in, size, _ = weight.shape
    if kernel is not None and kernel != size:
        raise ContractError(
            'conv expected a {0}x{0} kernel, weights are {1}'.format(
                kernel, weight.shape))
    if x.shape[1] != c_in:
        raise ContractError(
            'conv input shape {} does not match weight shape {}'.format(
                x.shape, weight.shape))

    batch, _, height, width = x.shape
    pad = size // 2
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    # (B, C_in, H, W, k, k) view over the padded input
    patches = sliding_window_view(padded, (size, size), axis=(2, 3))
    out = np.tensordot(patches, weight, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        out += bias[np.newaxis, :, np.newaxis, np.newaxis]
    record_macs(batch * c_out * c_in * size * size * height * width)

    def vjp(grad):
        grad = _cotangent(grad, out.shape)
        d_weight = np.tensordot(grad, patches, axes=([0, 2, 3], [0, 2, 3]))
        d_bias = grad.sum(axis=(0, 2, 3)) if bias is not None else None
        d_padded = np.zeros(padded.shape)
        for row in range(size):
            for col in range(size):
                d_padded[:, :, row:row + height, col:col + width] += (
                    np.einsum('oc,bohw->bchw', weight[:, :, row, col], grad))
        d_input = np.ascontiguousarray(
            d_padded[:, :, pad:pad + height, pad:pad + width])
        return d_input, d_weight, d_bias

    return out, vjp


def softmax_rows(logits):
    """Normalize the last axis with a max-stabilized softmax.

    :param logits: Matrix (N, D) or stack of matrices (..., N, D)
    :type logits: numpy.ndarray
    :return: Row-stochastic array and VJP returning (d_logits,)
    :rtype: tuple(numpy.ndarray, callable)

    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim < 1 or logits.shape[-1] == 0:
        raise EmptyAxisError(
            'softmax rows must be non-empty, got shape {}'.format(
                logits.shape))

    shifted = logits - logits.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    out = exps / exps.sum(axis=-1, keepdims=True)

    def vjp(grad):
        grad = _cotangent(grad, out.shape)
        inner = (grad * out).sum(axis=-1, keepdims=True)
        return (out * (grad - inner),)

    return out, vjp


def _check_spatial(first, second, operation):
    """Check that two tensors share batch and spatial extents."""
    if (first.shape[0], first.shape[2:]) != (second.shape[0], second.shape[2:]):
        raise ContractError(
            '{}: shapes {} and {} differ in batch or spatial extent'.format(
                operation, first.shape, second.shape))


def channel_gram(a, b):
    """Dot products between channels over spatial positions.

    :param a: Tensor (B, C_a, H, W)
    :type a: numpy.ndarray
    :param b: Tensor (B, C_b, H, W)
    :type b: numpy.ndarray
    :return: Array (B, C_a, C_b) and VJP returning (d_a, d_b)
    :rtype: tuple(numpy.ndarray, callable)

    """
    a = as_tensor(a, 'channel_gram a')
    b = as_tensor(b, 'channel_gram b')
    _check_spatial(a, b, 'channel_gram')

    batch, c_a, height, width = a.shape
    c_b = b.shape[1]
    a_flat = a.reshape(batch, c_a, height * width)
    b_flat = b.reshape(batch, c_b, height * width)
    out = np.matmul(a_flat, b_flat.transpose(0, 2, 1))
    record_macs(batch * c_a * c_b * height * width)

    def vjp(grad):
        grad = _cotangent(grad, out.shape)
        d_a = np.matmul(grad, b_flat).reshape(a.shape)
        d_b = np.matmul(grad.transpose(0, 2, 1), a_flat).reshape(b.shape)
        return d_a, d_b

    return out, vjp


def weighted_channel_sum(weights, values):
    """Mix value channels with per-batch weight matrices.

    :param weights: Array (B, C_out, C_in)
    :type weights: numpy.ndarray
    :param values: Tensor (B, C_in, H, W)
    :type values: numpy.ndarray
    :return: Tensor (B, C_out, H, W) and VJP returning (d_weights, d_values)
    :rtype: tuple(numpy.ndarray, callable)

    """
    weights = np.asarray(weights, dtype=np.float64)
    values = as_tensor(values, 'weighted_channel_sum values')
    batch, c_in, height, width = values.shape
    if weights.ndim != 3 or weights.shape[0] != batch or \
            weights.shape[2] != c_in:
        raise ContractError(
            'weighted_channel_sum: weights {} do not match values {}'.format(
                weights.shape, values.shape))

    c_out = weights.shape[1]
    values_flat = values.reshape(batch, c_in, height * width)
    out = np.matmul(weights, values_flat).reshape(
        batch, c_out, height, width)
    record_macs(batch * c_out * c_in * height * width)

    def vjp(grad):
        grad = _cotangent(grad, out.shape)
        grad_flat = grad.reshape(batch, c_out, height * width)
        d_weights = np.matmul(grad_flat, values_flat.transpose(0, 2, 1))
        d_values = np.matmul(weights.transpose(0, 2, 1), grad_flat)
        return d_weights, d_values.reshape(values.shape)

    return out, vjp


def _interpolation_taps(in_size, out_size):
    """Return source indices and weights along one axis.

    Uses the half-pixel-center convention
    ``src = (dst + 0.5) * in_size / out_size - 0.5`` clamped to the valid
    range.

    """
    scale = in_size / out_size
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lower = np.floor(src).astype(np.intp)
    upper = np.minimum(lower + 1, in_size - 1)
    fraction = src - lower
    return lower, upper, 1.0 - fraction, fraction


def _interpolation_matrix(in_size, out_size):
    """Return the dense (out_size, in_size) interpolation matrix."""
    lower, upper, lower_weight, upper_weight = _interpolation_taps(
        in_size, out_size)
    matrix = np.zeros((out_size, in_size))
    rows = np.arange(out_size)
    np.add.at(matrix, (rows, lower), lower_weight)
    np.add.at(matrix, (rows, upper), upper_weight)
    return matrix


def bilinear_resize(input, out_h, out_w):
    """Resize spatially with bilinear interpolation.

    Same-size resizes return an exact copy.

    :param input: Tensor (B, C, H, W)
    :type input: numpy.ndarray
    :param out_h: Output height
    :type out_h: int
    :param out_w: Output width
    :type out_w: int
    :return: Tensor (B, C, out_h, out_w) and VJP returning (d_input,)
    :rtype: tuple(numpy.ndarray, callable)

    """
    x = as_tensor(input, 'bilinear_resize input')
    if out_h < 1 or out_w < 1:
        raise ContractError(
            'bilinear_resize output size must be positive, got {}x{}'.format(
                out_h, out_w))
    batch, channels, height, width = x.shape
    if height == 0 or width == 0:
        raise ContractError(
            'bilinear_resize input {} has empty spatial extent'.format(
                x.shape))

    if (height, width) == (out_h, out_w):
        out = x.copy()

        def identity_vjp(grad):
            return (_cotangent(grad, out.shape).copy(),)

        return out, identity_vjp

    # Separable: interpolate rows first, then columns
    top, bottom, top_weight, bottom_weight = _interpolation_taps(
        height, out_h)
    rows = (x[:, :, top, :] * top_weight[:, np.newaxis] +
            x[:, :, bottom, :] * bottom_weight[:, np.newaxis])
    left, right, left_weight, right_weight = _interpolation_taps(
        width, out_w)
    out = rows[..., left] * left_weight + rows[..., right] * right_weight
    record_macs(2 * rows.size + 2 * out.size)

    def vjp(grad):
        grad = _cotangent(grad, out.shape)
        row_matrix = _interpolation_matrix(height, out_h)
        col_matrix = _interpolation_matrix(width, out_w)
        d_input = np.einsum('yh,bcyx,xw->bchw', row_matrix, grad, col_matrix)
        return (np.ascontiguousarray(d_input),)

    return out, vjp


def global_avg_pool(input):
    """Average every channel over its spatial positions.

    :param input: Tensor (B, C, H, W)
    :type input: numpy.ndarray
    :return: Tensor (B, C, 1, 1) and VJP returning (d_input,)
    :rtype: tuple(numpy.ndarray, callable)

    """
    x = as_tensor(input, 'global_avg_pool input')
    batch, channels, height, width = x.shape
    if height * width == 0:
        raise EmptyAxisError(
            'global_avg_pool input {} has empty spatial extent'.format(
                x.shape))

    out = x.mean(axis=(2, 3), keepdims=True)
    record_macs(x.size)

    def vjp(grad):
        grad = _cotangent(grad, out.shape)
        d_input = np.broadcast_to(grad / (height * width), x.shape).copy()
        return (d_input,)

    return out, vjp


def concat_channels(parts):
    """Concatenate tensors along the channel axis, in order.

    :param parts: Tensors sharing batch and spatial extents
    :type parts: list(numpy.ndarray)
    :return: Concatenated tensor and VJP returning one cotangent per part
    :rtype: tuple(numpy.ndarray, callable)

    """
    parts = [as_tensor(part, 'concat_channels part') for part in parts]
    if not parts:
        raise ContractError('concat_channels needs at least one part')
    for part in parts[1:]:
        _check_spatial(parts[0], part, 'concat_channels')

    sizes = [part.shape[1] for part in parts]
    out = np.concatenate(parts, axis=1)

    def vjp(grad):
        grad = _cotangent(grad, out.shape)
        return tuple(split_channels(grad, sizes))

    return out, vjp


def split_channels(input, sizes):
    """Split a tensor into consecutive channel blocks.

    :param input: Tensor (B, C, H, W)
    :type input: numpy.ndarray
    :param sizes: Channel count of every block; must add up to C
    :type sizes: list(int)
    :return: Contiguous blocks
    :rtype: list(numpy.ndarray)

    """
    x = np.asarray(input, dtype=np.float64)
    if sum(sizes) != x.shape[1]:
        raise ContractError(
            'cannot split {} channels into blocks {}'.format(
                x.shape[1], list(sizes)))
    bounds = np.cumsum(sizes)[:-1]
    return [np.ascontiguousarray(block)
            for block in np.split(x, bounds, axis=1)]


def broadcast_mul(scale, input):
    """Scale every channel of a tensor by a per-channel scalar.

    :param scale: Tensor (B, C, 1, 1)
    :type scale: numpy.ndarray
    :param input: Tensor (B, C, H, W)
    :type input: numpy.ndarray
    :return: Scaled tensor and VJP returning (d_scale, d_input)
    :rtype: tuple(numpy.ndarray, callable)

    """
    scale = as_tensor(scale, 'broadcast_mul scale')
    x = as_tensor(input, 'broadcast_mul input')
    if scale.shape != x.shape[:2] + (1, 1):
        raise ContractError(
            'broadcast_mul: scale {} does not match input {}'.format(
                scale.shape, x.shape))

    out = scale * x
    record_macs(x.size)

    def vjp(grad):
        grad = _cotangent(grad, out.shape)
        d_scale = (grad * x).sum(axis=(2, 3), keepdims=True)
        return d_scale, grad * scale

    return out, vjp
