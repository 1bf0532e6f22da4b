# -*- coding: utf-8 -*-
"""Utility functionality."""
import contextvars
import logging
import os

from concurrent.futures import ThreadPoolExecutor

from opnet.errors import ConfigurationError

logger = logging.getLogger(__name__)

THREADS_VARIABLE = 'OPNET_THREADS'


def thread_count():
    """Return the number of worker threads allowed by the environment.

    :return: Value of OPNET_THREADS (1 when unset)
    :rtype: int

    """
    value = os.environ.get(THREADS_VARIABLE)
    if value is None or value == '':
        return 1

    try:
        threads = int(value)
    except ValueError:
        raise ConfigurationError(
            '{}={!r} is not an integer'.format(THREADS_VARIABLE, value))

    if threads < 1:
        raise ConfigurationError(
            '{}={!r} must be at least 1'.format(THREADS_VARIABLE, value))
    return threads


def parallel_map(func, items):
    """Apply a function to every item, in threads when allowed.

    Results come back in input order whatever the thread count. Each call
    runs in its own copy of the caller context so that context-bound state
    (MAC counters, stage labels) follows the work into the worker thread.

    :param func: Function to apply
    :type func: callable
    :param items: Arguments for each call
    :type items: list
    :return: Results in the same order as items
    :rtype: list

    """
    items = list(items)
    threads = min(thread_count(), len(items))
    if threads <= 1:
        return [func(item) for item in items]

    logger.debug('Running %d tasks in %d threads', len(items), threads)
    with ThreadPoolExecutor(max_workers=threads) as executor:
        futures = [
            executor.submit(contextvars.copy_context().run, func, item)
            for item in items
        ]
        return [future.result() for future in futures]
