# -*- coding: utf-8 -*-
"""Run configuration.

Defaults reproduce the published settings. A JSON document overrides them
key by key (nested blocks merge) and command line flags override the file.
"""
import copy
import json
import logging

from opnet.attention import OpConfig
from opnet.errors import ConfigurationError
from opnet.pyramid import (
    STRIDES,
    VARIANTS,
)
from opnet.training import SgdConfig

logger = logging.getLogger(__name__)

DEFAULTS = {
    'channels': 256,
    'heads': 2,
    'strides': list(STRIDES),
    'temperature': 1.0,
    'cross_heads': 1,
    'batch': 1,
    's2_height': 64,
    's2_width': 64,
    'seed': 42,
    'variant': 'opnet',
    'gradcheck': {
        'epsilon': 1e-5,
        'threshold': 1e-4,
        'seeds': 3,
        'samples': None,
    },
    'sgd': {
        'learning_rate': 0.005,
        'weight_decay': 0.0001,
        'momentum': 0.95,
    },
    'toy': {
        'channels': 4,
        'heads': 2,
        'batch': 1,
        's2_height': 8,
        's2_width': 8,
        'steps': 200,
        'weight_decay': 0.0,
    },
    'experiment': {
        'boxes': 1000,
        'perturb': 0.0,
    },
}

_POSITIVE_INTEGERS = (
    'channels', 'heads', 'cross_heads', 'batch', 's2_height', 's2_width')


class Section(object):

    """Read-only attribute view over a configuration block."""

    def __init__(self, values):
        """Keep block values."""
        self._values = values

    def __getattr__(self, name):
        """Return a block value."""
        try:
            return self._values[name]
        except KeyError:
            raise AttributeError(name)


class HarnessConfig(object):

    """Every parameter of a command run.

    :param values: Values overriding :data:`DEFAULTS`
    :type values: dict

    """

    def __init__(self, values=None):
        """Merge values over the defaults and validate the result."""
        merged = copy.deepcopy(DEFAULTS)
        _merge(merged, values or {}, path=())
        self._values = merged
        self.validate()

    @classmethod
    def load(cls, path=None, overrides=None):
        """Build configuration from an optional JSON file and overrides.

        :param path: JSON configuration file
        :type path: str | None
        :param overrides: Dotted keys (``sgd.momentum``) mapped to values
        :type overrides: dict
        :rtype: HarnessConfig

        """
        values = {}
        if path is not None:
            logger.debug('Reading configuration from %r', path)
            try:
                with open(path) as config_file:
                    values = json.load(config_file)
            except (IOError, OSError) as exc:
                raise ConfigurationError(
                    'cannot read configuration {!r}: {}'.format(path, exc))
            except ValueError as exc:
                raise ConfigurationError(
                    'invalid JSON in {!r}: {}'.format(path, exc))
            if not isinstance(values, dict):
                raise ConfigurationError(
                    '{!r} must contain a JSON object'.format(path))

        for key, value in (overrides or {}).items():
            if value is None:
                continue
            block = values
            parts = key.split('.')
            for part in parts[:-1]:
                block = block.setdefault(part, {})
            block[parts[-1]] = value
        return cls(values)

    def __getattr__(self, name):
        """Return a top-level value or a block view."""
        values = self.__dict__.get('_values')
        if values is None or name not in values:
            raise AttributeError(name)
        value = values[name]
        if isinstance(value, dict):
            return Section(value)
        return value

    def as_dict(self):
        """Return a deep copy of all values."""
        return copy.deepcopy(self._values)

    def validate(self):
        """Check value ranges and cross-field constraints."""
        values = self._values
        for key in _POSITIVE_INTEGERS:
            _check_positive_integer(key, values[key])
        if values['channels'] % values['heads'] != 0:
            raise ConfigurationError(
                'channels C={} not divisible by heads P={}'.format(
                    values['channels'], values['heads']))
        if len(STRIDES) % values['cross_heads'] != 0:
            raise ConfigurationError(
                'cross_heads must divide the {} pyramid levels, got {}'.format(
                    len(STRIDES), values['cross_heads']))
        if list(values['strides']) != list(STRIDES):
            raise ConfigurationError(
                'strides must be {}, got {!r}'.format(
                    list(STRIDES), values['strides']))
        if values['variant'] not in VARIANTS:
            raise ConfigurationError(
                'variant must be one of {}, got {!r}'.format(
                    ', '.join(sorted(VARIANTS)), values['variant']))
        seed = values['seed']
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigurationError(
                'seed must be a non-negative integer, got {!r}'.format(seed))

        toy = values['toy']
        for key in ('channels', 'heads', 'batch', 's2_height', 's2_width',
                    'steps'):
            _check_positive_integer('toy.' + key, toy[key])
        if toy['channels'] % toy['heads'] != 0:
            raise ConfigurationError(
                'toy.channels C={} not divisible by toy.heads P={}'.format(
                    toy['channels'], toy['heads']))

        gradcheck = values['gradcheck']
        if not gradcheck['epsilon'] > 0:
            raise ConfigurationError('gradcheck.epsilon must be positive')
        if not gradcheck['threshold'] >= 0:
            raise ConfigurationError(
                'gradcheck.threshold must not be negative')
        _check_positive_integer('gradcheck.seeds', gradcheck['seeds'])
        if gradcheck['samples'] is not None:
            _check_positive_integer('gradcheck.samples', gradcheck['samples'])

        experiment = values['experiment']
        _check_positive_integer('experiment.boxes', experiment['boxes'])
        if not 0.0 <= experiment['perturb'] <= 1.0:
            raise ConfigurationError(
                'experiment.perturb must be in [0, 1], got {!r}'.format(
                    experiment['perturb']))

        # Raises ConfigurationError on invalid values
        self.op_config()
        self.sgd_config()

    def op_config(self):
        """Base OP head configuration."""
        return OpConfig(self.heads, self.temperature)

    def cross_config(self):
        """Cross-level block head configuration."""
        return OpConfig(self.cross_heads, self.temperature)

    def sgd_config(self, weight_decay=None):
        """Optimizer settings, optionally with another weight decay."""
        sgd = self._values['sgd']
        return SgdConfig(
            learning_rate=sgd['learning_rate'],
            weight_decay=(sgd['weight_decay'] if weight_decay is None
                          else weight_decay),
            momentum=sgd['momentum'],
        )

    @property
    def stages(self):
        """Feature path stages enabled by the variant."""
        return VARIANTS[self.variant]


def _merge(base, values, path):
    """Recursively merge values into base, rejecting unknown keys."""
    if not isinstance(values, dict):
        raise ConfigurationError(
            '{} must be an object'.format('.'.join(path) or 'configuration'))
    for key, value in values.items():
        dotted = '.'.join(path + (key,))
        if key not in base:
            raise ConfigurationError(
                'unknown configuration key: {!r}'.format(dotted))
        if isinstance(base[key], dict):
            _merge(base[key], value, path + (key,))
        else:
            base[key] = value


def _check_positive_integer(key, value):
    """Raise ConfigurationError unless value is a positive integer."""
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigurationError(
            '{} must be a positive integer, got {!r}'.format(key, value))
