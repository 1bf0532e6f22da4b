# -*- coding: utf-8 -*-
"""Optimizer, finite-difference gradient checking and the toy task."""
import collections
import csv
import logging

import numpy as np

from opnet.attention import OpConfig
from opnet.errors import (
    ConfigurationError,
    ContractError,
    DeterminismError,
    TrainingError,
)
from opnet.pyramid import (
    FeaturePyramid,
    OpNetParams,
    opnet_feature_path,
)
from opnet.tensor import Parameters

logger = logging.getLogger(__name__)

# Loss windows checked for monotonic decrease once training settles
MONOTONE_START = 50
MONOTONE_WINDOW = 10


class SgdConfig(object):

    """SGD hyperparameters.

    :param learning_rate: Step size
    :type learning_rate: float
    :param weight_decay: L2 coefficient added to the gradient
    :type weight_decay: float
    :param momentum: Momentum coefficient in [0, 1)
    :type momentum: float

    """

    def __init__(self, learning_rate=0.005, weight_decay=0.0001,
                 momentum=0.95):
        """Validate hyperparameter ranges."""
        if not learning_rate > 0:
            raise ConfigurationError(
                'learning_rate must be positive, got {!r}'.format(
                    learning_rate))
        if not weight_decay >= 0:
            raise ConfigurationError(
                'weight_decay must not be negative, got {!r}'.format(
                    weight_decay))
        if not 0 <= momentum < 1:
            raise ConfigurationError(
                'momentum must be in [0, 1), got {!r}'.format(momentum))
        self.learning_rate = float(learning_rate)
        self.weight_decay = float(weight_decay)
        self.momentum = float(momentum)


def sgd_step(params, grads, velocity, cfg):
    """One SGD step with momentum and coupled weight decay.

    ``v <- momentum * v + g + weight_decay * p`` then ``p <- p - lr * v``.

    :param params: Parameter arrays by name
    :type params: dict(str, numpy.ndarray)
    :param grads: Gradients by name
    :type grads: dict(str, numpy.ndarray)
    :param velocity: Momentum buffers by name (None means zeros)
    :type velocity: dict(str, numpy.ndarray) | None
    :param cfg: Hyperparameters
    :type cfg: SgdConfig
    :return: Updated parameters and velocity
    :rtype: tuple(collections.OrderedDict, collections.OrderedDict)

    """
    new_params = collections.OrderedDict()
    new_velocity = collections.OrderedDict()
    for name, param in params.items():
        param = np.asarray(param, dtype=np.float64)
        grad = np.asarray(grads[name], dtype=np.float64)
        previous = (np.zeros_like(param) if velocity is None
                    else np.asarray(velocity[name], dtype=np.float64))
        if grad.shape != param.shape or previous.shape != param.shape:
            raise ContractError(
                '{}: parameter {}, gradient {} and velocity {} shapes '
                'disagree'.format(
                    name, param.shape, grad.shape, previous.shape))
        step = cfg.momentum * previous + grad + cfg.weight_decay * param
        new_velocity[name] = step
        new_params[name] = param - cfg.learning_rate * step
    return new_params, new_velocity


class SGD(object):

    """Stateful optimizer over a parameter container.

    :param params: Parameters updated in place
    :type params: opnet.tensor.Parameters
    :param cfg: Hyperparameters
    :type cfg: SgdConfig

    """

    def __init__(self, params, cfg):
        """Start with zero velocity."""
        self.params = params
        self.cfg = cfg
        self.velocity = None

    def step(self, grads):
        """Update parameters; missing gradients count as zero.

        :param grads: Gradients by name
        :type grads: dict(str, numpy.ndarray)
        :return: Number of scalars updated
        :rtype: int

        """
        arrays = self.params.named_arrays()
        dense = collections.OrderedDict(
            (name, grads[name] if name in grads else np.zeros_like(array))
            for name, array in arrays.items())
        new_params, self.velocity = sgd_step(
            arrays, dense, self.velocity, self.cfg)
        self.params.load(new_params)
        return sum(array.size for array in new_params.values())


class GradCheckReport(object):

    """Largest relative error of every parameter.

    :param errors: Max relative error by parameter name
    :type errors: dict(str, float)
    :param epsilon: Finite difference step
    :type epsilon: float
    :param threshold: Largest accepted relative error
    :type threshold: float

    """

    def __init__(self, errors, epsilon, threshold):
        """Keep errors and settings."""
        self.errors = collections.OrderedDict(errors)
        self.epsilon = epsilon
        self.threshold = threshold

    @property
    def passed(self):
        """Whether every error is below the threshold."""
        return all(error < self.threshold for error in self.errors.values())

    def failures(self):
        """Names of parameters whose error reaches the threshold."""
        return [name for name, error in self.errors.items()
                if not error < self.threshold]

    def write_csv(self, stream):
        """Write ``name,max_relative_error,passed`` rows sorted by name.

        :param stream: Text stream to write to
        :type stream: file

        """
        writer = csv.writer(stream, lineterminator='\n')
        writer.writerow(['name', 'max_relative_error', 'passed'])
        for name in sorted(self.errors):
            error = self.errors[name]
            writer.writerow([
                name,
                '{:.6e}'.format(error),
                int(error < self.threshold),
            ])


def relative_error(analytic, numeric):
    """Relative error with a 1e-8 floor on the denominator."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def gradcheck(f, params, epsilon=1e-5, threshold=1e-4, samples=None,
              rng=None):
    """Compare analytic gradients with central finite differences.

    :param f: Maps params to (value, grads); grads may be a mapping or a
        callable returning one, so backward passes are skipped while probing
    :type f: callable
    :param params: Arrays perturbed in place (restored afterwards)
    :type params: dict(str, numpy.ndarray) | opnet.tensor.Parameters
    :param epsilon: Finite difference step
    :type epsilon: float
    :param threshold: Largest accepted relative error
    :type threshold: float
    :param samples: Entries probed per array (all when None)
    :type samples: int | None
    :param rng: Generator choosing probed entries when sampling
    :type rng: numpy.random.RandomState
    :rtype: GradCheckReport

    """
    if not epsilon > 0:
        raise ConfigurationError(
            'epsilon must be positive, got {!r}'.format(epsilon))
    if isinstance(params, Parameters):
        params = params.named_arrays()

    value, grads = f(params)
    repeated, _ = f(params)
    if value != repeated:
        raise DeterminismError(
            'function returned {!r} and then {!r} for the same input'.format(
                value, repeated))
    if callable(grads):
        grads = grads()

    errors = collections.OrderedDict()
    for name, array in params.items():
        # Arrays without a gradient must not influence the value
        analytic = (np.zeros(array.shape) if name not in grads
                    else np.asarray(grads[name], dtype=np.float64).copy())
        if analytic.shape != array.shape:
            raise ContractError(
                '{}: gradient shape {} does not match parameter {}'.format(
                    name, analytic.shape, array.shape))

        indices = list(np.ndindex(*array.shape))
        if samples is not None and samples < len(indices):
            if rng is None:
                rng = np.random.RandomState(0)
            chosen = rng.choice(len(indices), samples, replace=False)
            indices = [indices[index] for index in sorted(chosen)]

        worst = 0.0
        for index in indices:
            original = array[index]
            array[index] = original + epsilon
            plus, _ = f(params)
            array[index] = original - epsilon
            minus, _ = f(params)
            array[index] = original
            numeric = (plus - minus) / (2 * epsilon)
            worst = max(worst, relative_error(analytic[index], numeric))
        errors[name] = worst
        logger.debug('%s: max relative error %.3e', name, worst)

    return GradCheckReport(errors, epsilon, threshold)


def level_mse(outputs, targets):
    """Sum over levels of each level's mean squared error.

    :param outputs: Output pyramid
    :type outputs: opnet.pyramid.FeaturePyramid
    :param targets: Target pyramid
    :type targets: opnet.pyramid.FeaturePyramid
    :return: Loss and its gradient per level
    :rtype: tuple(float, list(numpy.ndarray))

    """
    loss = 0.0
    grads = []
    for output, target in zip(outputs, targets):
        diff = output - target
        loss += float(np.mean(diff ** 2))
        grads.append(2.0 * diff / diff.size)
    return loss, grads


def monotone_windows(trace, start=MONOTONE_START, window=MONOTONE_WINDOW):
    """Whether the loss never grows across a window after ``start``.

    :param trace: Loss per step
    :type trace: list(float)
    :rtype: bool

    """
    return all(
        trace[step + window] <= trace[step]
        for step in range(start, len(trace) - window))


def toy_task_run(seed, steps, cfg, channels=4, heads=2, batch=1,
                 s2_height=8, s2_width=8, stages=('base', 'mp'),
                 from_target=False):
    """Fit a fresh feature path to one produced by frozen random weights.

    :param seed: Seed for the input pyramid and both parameter sets
    :type seed: int
    :param steps: Optimizer steps
    :type steps: int
    :param cfg: Optimizer settings
    :type cfg: SgdConfig
    :param channels: Pyramid channels
    :type channels: int
    :param heads: Base OP heads
    :type heads: int
    :param batch: Batch size
    :type batch: int
    :param s2_height: S2 height
    :type s2_height: int
    :param s2_width: S2 width
    :type s2_width: int
    :param stages: Feature path stages
    :type stages: tuple(str)
    :param from_target: Start from the frozen weights instead
    :type from_target: bool
    :return: Loss before every step
    :rtype: list(float)

    """
    if steps < 1:
        raise ConfigurationError(
            'steps must be at least 1, got {!r}'.format(steps))

    rng = np.random.RandomState(seed)
    op_config = OpConfig(heads)
    inputs = FeaturePyramid.random(rng, batch, channels, s2_height, s2_width)
    frozen = OpNetParams.initialize(rng, channels)
    targets, _ = opnet_feature_path(
        inputs, frozen.base, frozen.mp, op_config, stages)
    student = (frozen.copy() if from_target
               else OpNetParams.initialize(rng, channels))
    optimizer = SGD(student, cfg)

    trace = []
    for step in range(steps):
        try:
            outputs, vjp = opnet_feature_path(
                inputs, student.base, student.mp, op_config, stages)
        except ContractError:
            raise TrainingError(step, float('nan'))
        loss, d_levels = level_mse(outputs, targets)
        if not np.isfinite(loss):
            raise TrainingError(step, loss)
        trace.append(loss)
        if step % 20 == 0:
            logger.info('Step %d: loss %.6g', step, loss)

        _, grads = vjp(d_levels)
        optimizer.step(grads)

    if not monotone_windows(trace):
        logger.warning(
            'Loss increased over a %d-step window after step %d; '
            'consider tuning the learning rate',
            MONOTONE_WINDOW, MONOTONE_START)
    logger.info('Final loss %.6g (initial %.6g)', trace[-1], trace[0])
    return trace
