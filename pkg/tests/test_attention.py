# -*- coding: utf-8 -*-
"""Channel attention test cases."""

import unittest

import numpy as np

from opnet.accounting import (
    count_op_macs,
    counting,
)
from opnet.attention import (
    AttentionParams,
    OpConfig,
    ca_forward,
    op_multihead_forward,
)
from opnet.errors import ConfigurationError
from opnet.tensor import ConvParams
from tests import oracles


def _weights(params):
    """Transform weights as (C_out, C_in) matrices."""
    return [transform.weight[:, :, 0, 0]
            for _, transform in params.children()]


class OpConfigTest(unittest.TestCase):

    """Attention configuration test cases."""

    def test_defaults(self):
        """Two heads and unit temperature by default."""
        cfg = OpConfig()
        self.assertEqual(cfg.heads, 2)
        self.assertEqual(cfg.temperature, 1.0)

    def test_invalid_heads(self):
        """Head count must be a positive integer."""
        for heads in (0, -1, 1.5):
            with self.assertRaises(ConfigurationError):
                OpConfig(heads)

    def test_invalid_temperature(self):
        """Temperature must be positive."""
        with self.assertRaises(ConfigurationError):
            OpConfig(1, 0.0)

    def test_check(self):
        """Channels not divisible by heads are reported with C and P."""
        with self.assertRaisesRegex(ConfigurationError, 'C=6.*P=4'):
            OpConfig(4).check(6)


class AttentionParamsTest(unittest.TestCase):

    """Attention parameters test cases."""

    def test_names(self):
        """Transforms are named q, k and v without biases."""
        params = AttentionParams.initialize(np.random.RandomState(0), 3)
        self.assertEqual(
            list(params.named_arrays()), ['q.weight', 'k.weight', 'v.weight'])
        self.assertEqual(params.size, 27)

    def test_non_square(self):
        """Transforms must be square 1x1 maps."""
        square = ConvParams(np.ones((2, 2, 1, 1)))
        with self.assertRaises(ConfigurationError):
            AttentionParams(square, square, ConvParams(np.ones((3, 2, 1, 1))))


class CaForwardTest(unittest.TestCase):

    """Channel attention test cases."""

    def test_single_channel(self):
        """With one channel and identity transforms the input comes back."""
        m = np.random.RandomState(0).standard_normal((2, 1, 3, 3))
        out, _ = ca_forward(m, AttentionParams.identity(1))
        np.testing.assert_array_equal(out, m)

    def test_oracle(self):
        """Attention matches the triple loop oracle."""
        m = np.random.RandomState(17).standard_normal((1, 3, 2, 2))
        params = AttentionParams.initialize(np.random.RandomState(19), 3)
        out, _ = ca_forward(m, params)
        np.testing.assert_allclose(
            out, oracles.channel_attention(m, *_weights(params)),
            rtol=0, atol=1e-10)

    def test_random_oracle(self):
        """Attention matches the oracle on random small instances."""
        rng = np.random.RandomState(101)
        for _ in range(20):
            batch = rng.randint(1, 3)
            channels = rng.randint(1, 6)
            height, width = rng.randint(1, 5, size=2)
            m = rng.standard_normal((batch, channels, height, width))
            params = AttentionParams.initialize(rng, channels)
            out, _ = ca_forward(m, params)
            np.testing.assert_allclose(
                out, oracles.channel_attention(m, *_weights(params)),
                rtol=0, atol=1e-10)

    def test_temperature(self):
        """Temperature divides the similarities."""
        m = np.random.RandomState(3).standard_normal((1, 3, 2, 2))
        params = AttentionParams.initialize(np.random.RandomState(4), 3)
        out, _ = ca_forward(m, params, temperature=2.0)
        np.testing.assert_allclose(
            out, oracles.channel_attention(m, *_weights(params),
                                           temperature=2.0),
            rtol=0, atol=1e-10)

    def test_convex_combination(self):
        """Identity transforms give convex combinations of channels."""
        m = np.random.RandomState(5).standard_normal((2, 4, 3, 3))
        out, _ = ca_forward(m, AttentionParams.identity(4))
        self.assertTrue(np.all(out <= m.max(axis=1, keepdims=True) + 1e-12))
        self.assertTrue(np.all(out >= m.min(axis=1, keepdims=True) - 1e-12))

    def test_weights_trace(self):
        """Softmax weight rows sum to one."""
        trace = {}
        m = np.random.RandomState(6).standard_normal((2, 5, 2, 3))
        ca_forward(m, AttentionParams.initialize(
            np.random.RandomState(7), 5), trace=trace)
        weights, = trace['weights']
        self.assertEqual(weights.shape, (2, 5, 5))
        np.testing.assert_allclose(
            weights.sum(axis=-1), 1.0, rtol=0, atol=1e-12)

    def test_gradient_names(self):
        """Backward pass returns input and q, k and v gradients."""
        m = np.random.RandomState(8).standard_normal((1, 2, 2, 2))
        params = AttentionParams.initialize(np.random.RandomState(9), 2)
        out, vjp = ca_forward(m, params)
        d_m, grads = vjp(np.ones(out.shape))
        self.assertEqual(d_m.shape, m.shape)
        self.assertEqual(
            list(grads), ['q.weight', 'k.weight', 'v.weight'])


class OpMultiheadForwardTest(unittest.TestCase):

    """Multi-head attention test cases."""

    def test_single_head(self):
        """One head is bitwise equal to channel attention."""
        m = np.random.RandomState(21).standard_normal((2, 4, 3, 2))
        params = AttentionParams.initialize(np.random.RandomState(22), 4)
        single, _ = op_multihead_forward(m, params, OpConfig(1))
        reference, _ = ca_forward(m, params)
        np.testing.assert_array_equal(single, reference)

    def test_sliced_heads(self):
        """Two heads equal attention over sliced transforms."""
        m = np.random.RandomState(23).standard_normal((1, 4, 3, 3))
        params = AttentionParams.initialize(np.random.RandomState(24), 4)
        out, _ = op_multihead_forward(m, params, OpConfig(2))
        np.testing.assert_allclose(
            out, oracles.multihead_attention(m, params, 2),
            rtol=0, atol=1e-12)

    def test_shape(self):
        """Output shape equals input shape."""
        m = np.random.RandomState(25).standard_normal((2, 8, 2, 3))
        params = AttentionParams.initialize(np.random.RandomState(26), 8)
        out, _ = op_multihead_forward(m, params, OpConfig(4))
        self.assertEqual(out.shape, m.shape)

    def test_indivisible(self):
        """Channels not divisible by heads are a configuration error."""
        params = AttentionParams.identity(3)
        with self.assertRaisesRegex(ConfigurationError, 'C=3.*P=2'):
            op_multihead_forward(np.ones((1, 3, 2, 2)), params, OpConfig(2))

    def test_head_weights_normalized(self):
        """Every head's weight rows sum to one."""
        rng = np.random.RandomState(27)
        for _ in range(100):
            trace = {}
            m = rng.standard_normal((1, 6, 2, 2))
            params = AttentionParams.initialize(rng, 6)
            op_multihead_forward(m, params, OpConfig(3), trace)
            self.assertEqual(len(trace['weights']), 3)
            for weights in trace['weights']:
                np.testing.assert_allclose(
                    weights.sum(axis=-1), 1.0, rtol=0, atol=1e-12)

    def test_head_permutation(self):
        """Permuting whole head blocks permutes the output blocks."""
        rng = np.random.RandomState(30)
        heads, width = 3, 2
        for _ in range(20):
            m = rng.standard_normal((2, heads * width, 3, 2))
            params = AttentionParams.initialize(rng, heads * width)
            order = rng.permutation(heads)
            channels = np.concatenate(
                [np.arange(head * width, (head + 1) * width)
                 for head in order])
            permuted = AttentionParams(*[
                ConvParams(transform.weight[channels][:, channels])
                for _, transform in params.children()
            ])

            out, _ = op_multihead_forward(m, params, OpConfig(heads))
            permuted_out, _ = op_multihead_forward(
                m[:, channels], permuted, OpConfig(heads))
            np.testing.assert_allclose(
                permuted_out, out[:, channels], rtol=0, atol=1e-10)

    def test_measured_macs(self):
        """Instrumented MACs equal the static count."""
        shape = (2, 6, 3, 2)
        cfg = OpConfig(3)
        m = np.random.RandomState(28).standard_normal(shape)
        params = AttentionParams.initialize(np.random.RandomState(29), 6)
        with counting() as counter:
            op_multihead_forward(m, params, cfg)
        expected = count_op_macs(shape, cfg)
        self.assertEqual(counter.part('transform'), expected.transform)
        self.assertEqual(counter.part('similarity'), expected.similarity)
        self.assertEqual(counter.total(), expected.total)
