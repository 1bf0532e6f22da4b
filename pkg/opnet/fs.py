# -*- coding: utf-8 -*-
"""Filesystem functionality.

Tensors are stored in the OPT1 format: the magic bytes ``OPT1``, a dtype
code (1 for float64), the rank (always 4), four little-endian u64 extents
and the row-major little-endian float64 payload.
"""
import json
import logging
import math
import os
import struct

import numpy as np

from opnet.errors import (
    ContractError,
    FormatError,
    LengthError,
    TensorFileError,
)
from opnet.pyramid import (
    FeaturePyramid,
    LEVEL_NAMES,
    STRIDES,
)

logger = logging.getLogger(__name__)

MAGIC = b'OPT1'
FLOAT64 = 1
RANK = 4
HEADER = struct.Struct('<4sBB4Q')
PAYLOAD_DTYPE = np.dtype('<f8')

TENSOR_EXTENSION = '.opt1'
META_FILENAME = 'meta.json'


def write_tensor(tensor, path):
    """Write a rank-4 array as an OPT1 file.

    :param tensor: Array to write
    :type tensor: numpy.ndarray
    :param path: Destination file
    :type path: str

    """
    array = np.asarray(tensor)
    if array.ndim != RANK:
        raise ContractError(
            'OPT1 stores rank {} tensors, got shape {}'.format(
                RANK, array.shape))
    payload = np.ascontiguousarray(array, dtype=PAYLOAD_DTYPE).tobytes()
    try:
        with open(path, 'wb') as tensor_file:
            tensor_file.write(HEADER.pack(MAGIC, FLOAT64, RANK, *array.shape))
            tensor_file.write(payload)
    except (IOError, OSError) as exc:
        raise TensorFileError('{}: {}'.format(path, exc.strerror or exc))
    logger.debug('Wrote %s with shape %s', path, array.shape)


def read_tensor(path):
    """Read an OPT1 file.

    :param path: File to read
    :type path: str
    :return: Array with the stored shape and values
    :rtype: numpy.ndarray

    """
    try:
        with open(path, 'rb') as tensor_file:
            data = tensor_file.read()
    except (IOError, OSError) as exc:
        raise TensorFileError('{}: {}'.format(path, exc.strerror or exc))

    if len(data) < HEADER.size:
        if not MAGIC.startswith(data[:len(MAGIC)]):
            raise FormatError('{}: not an OPT1 file'.format(path))
        raise FormatError(
            '{}: truncated header ({} of {} bytes)'.format(
                path, len(data), HEADER.size))

    magic, dtype_code, rank, *extents = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(
            '{}: bad magic {!r} (expected {!r})'.format(path, magic, MAGIC))
    if dtype_code != FLOAT64:
        raise FormatError(
            '{}: unsupported dtype code {}'.format(path, dtype_code))
    if rank != RANK:
        raise FormatError('{}: unsupported rank {}'.format(path, rank))

    if max(extents) > np.iinfo(np.intp).max:
        raise FormatError(
            '{}: extents {} exceed the addressable size'.format(
                path, tuple(extents)))

    expected = math.prod(extents) * PAYLOAD_DTYPE.itemsize
    actual = len(data) - HEADER.size
    if actual != expected:
        raise LengthError(path, expected, actual)

    array = np.frombuffer(data, dtype=PAYLOAD_DTYPE, offset=HEADER.size)
    try:
        array = array.reshape(extents)
    except ValueError as exc:
        raise FormatError('{}: bad extents {}: {}'.format(
            path, tuple(extents), exc))
    return array.astype(np.float64)


def write_json(data, path):
    """Write JSON with sorted keys and a two-space indent."""
    try:
        with open(path, 'w') as json_file:
            json.dump(data, json_file, indent=2, sort_keys=True)
            json_file.write('\n')
    except (IOError, OSError) as exc:
        raise TensorFileError('{}: {}'.format(path, exc.strerror or exc))


def read_json(path):
    """Read a JSON document."""
    try:
        with open(path) as json_file:
            return json.load(json_file)
    except (IOError, OSError) as exc:
        raise TensorFileError('{}: {}'.format(path, exc.strerror or exc))
    except ValueError as exc:
        raise FormatError('{}: invalid JSON ({})'.format(path, exc))


def _make_directory(directory):
    """Create a directory (and parents) unless it exists."""
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise TensorFileError(
            '{}: {}'.format(directory, exc.strerror or exc))


def level_path(directory, name):
    """Path of a level file inside a pyramid directory."""
    return os.path.join(directory, name + TENSOR_EXTENSION)


def write_pyramid(pyramid, directory):
    """Write a pyramid as S2..S6 OPT1 files plus ``meta.json``.

    :param pyramid: Pyramid to write
    :type pyramid: opnet.pyramid.FeaturePyramid
    :param directory: Destination directory (created if needed)
    :type directory: str

    """
    _make_directory(directory)
    for name, level in zip(LEVEL_NAMES, pyramid.levels):
        write_tensor(level, level_path(directory, name))
    write_json(
        {'channels': pyramid.channels, 'strides': list(pyramid.strides)},
        os.path.join(directory, META_FILENAME))
    logger.info('Pyramid with shapes %s written to %s',
                pyramid.shapes, directory)


def read_pyramid(directory):
    """Read a pyramid directory.

    :param directory: Directory holding S2..S6 and ``meta.json``
    :type directory: str
    :rtype: opnet.pyramid.FeaturePyramid

    """
    meta_path = os.path.join(directory, META_FILENAME)
    meta = read_json(meta_path)
    if not isinstance(meta, dict) or 'channels' not in meta or \
            'strides' not in meta:
        raise FormatError(
            '{}: expected an object with channels and strides'.format(
                meta_path))

    levels = []
    for name in LEVEL_NAMES:
        level = read_tensor(level_path(directory, name))
        if level.shape[1] != meta['channels']:
            raise ContractError(
                '{} has {} channels, {} declares {}'.format(
                    name, level.shape[1], META_FILENAME, meta['channels']))
        levels.append(level)

    if list(meta['strides']) != list(STRIDES):
        raise ContractError(
            '{} declares strides {}, expected {}'.format(
                META_FILENAME, meta['strides'], list(STRIDES)))
    return FeaturePyramid(levels, meta['strides'])


def write_parameters(params, directory):
    """Write every named array of a container as an OPT1 file.

    Arrays of rank below 4 are stored with leading unit extents.

    :param params: Parameter container
    :type params: opnet.tensor.Parameters
    :param directory: Destination directory (created if needed)
    :type directory: str

    """
    _make_directory(directory)
    for name, array in params.named_arrays().items():
        shape = (1,) * (RANK - array.ndim) + array.shape
        write_tensor(
            array.reshape(shape),
            os.path.join(directory, name + TENSOR_EXTENSION))
    logger.info('%d parameters written to %s', params.size, directory)


def read_parameters(params, directory):
    """Load a parameter directory into a container in place.

    :param params: Container whose array names and shapes are expected
    :type params: opnet.tensor.Parameters
    :param directory: Directory written by :func:`write_parameters`
    :type directory: str
    :return: The updated container
    :rtype: opnet.tensor.Parameters

    """
    values = {}
    for name, array in params.named_arrays().items():
        path = os.path.join(directory, name + TENSOR_EXTENSION)
        stored = read_tensor(path)
        if stored.size != array.size:
            raise ContractError(
                '{}: {} values stored, parameter {} has shape {}'.format(
                    path, stored.size, name, array.shape))
        values[name] = stored.reshape(array.shape)
    params.load(values)
    logger.debug('Parameters read from %s', directory)
    return params
