# -*- coding: utf-8 -*-
"""Utility tools test cases."""

import contextvars
import threading
import unittest

from mock import patch

from opnet.errors import ConfigurationError
from opnet.util import (
    parallel_map,
    thread_count,
)

_marker = contextvars.ContextVar('marker', default=None)


class ThreadCountTest(unittest.TestCase):

    """Thread count test cases."""

    def test_default(self):
        """One thread when the variable is unset."""
        with patch.dict('os.environ', clear=True):
            self.assertEqual(thread_count(), 1)

    def test_value(self):
        """Value is read from the environment."""
        with patch.dict('os.environ', {'OPNET_THREADS': '3'}):
            self.assertEqual(thread_count(), 3)

    def test_invalid(self):
        """Non-integer and non-positive values are rejected."""
        for value in ('many', '0', '-2'):
            with patch.dict('os.environ', {'OPNET_THREADS': value}):
                with self.assertRaises(ConfigurationError):
                    thread_count()


class ParallelMapTest(unittest.TestCase):

    """Parallel map test cases."""

    def test_order(self):
        """Results keep the input order."""
        with patch.dict('os.environ', {'OPNET_THREADS': '4'}):
            self.assertEqual(
                parallel_map(lambda value: value * value, range(10)),
                [value * value for value in range(10)])

    def test_serial(self):
        """A single thread runs in the calling thread."""
        with patch.dict('os.environ', {'OPNET_THREADS': '1'}):
            names = parallel_map(
                lambda _: threading.current_thread().name, range(3))
        self.assertEqual(set(names), {threading.current_thread().name})

    def test_context(self):
        """Worker threads see the caller's context."""
        token = _marker.set('caller')
        try:
            with patch.dict('os.environ', {'OPNET_THREADS': '2'}):
                values = parallel_map(lambda _: _marker.get(), range(4))
        finally:
            _marker.reset(token)
        self.assertEqual(values, ['caller'] * 4)
