# -*- coding: utf-8 -*-
"""Exceptions raised by opnet.

Every exception carries the exit status the command line tool returns when
it escapes a command.
"""


class OpnetError(Exception):

    """Base class for all opnet errors."""

    exit_code = 1


class ConfigurationError(OpnetError, ValueError):

    """Invalid run configuration (bad head count, unknown stage, ...)."""

    exit_code = 1


class TensorFileError(OpnetError, IOError):

    """Tensor, pyramid or parameter file cannot be read."""

    exit_code = 2


class FormatError(TensorFileError):

    """File content does not follow the expected format."""


class LengthError(TensorFileError):

    """Payload size doesn't match the size declared in the header.

    :param filename: File being read
    :type filename: str
    :param expected: Bytes expected from the header
    :type expected: int
    :param actual: Bytes found in the file
    :type actual: int

    """

    def __init__(self, filename, expected, actual):
        """Build message from expected and actual byte counts."""
        super(LengthError, self).__init__(
            '{}: expected {} payload bytes, found {}'.format(
                filename, expected, actual))
        self.filename = filename
        self.expected = expected
        self.actual = actual


class ContractError(OpnetError, ValueError):

    """Operation called with arguments that break its contract."""

    exit_code = 3


class EmptyAxisError(ContractError):

    """Reduction requested over an axis of zero extent."""


class NumericalError(OpnetError, ArithmeticError):

    """Computation produced unusable numbers."""

    exit_code = 4


class TrainingError(NumericalError):

    """Training diverged.

    :param step: Step index where the loss stopped being finite
    :type step: int
    :param loss: Loss value observed at that step
    :type loss: float

    """

    def __init__(self, step, loss):
        """Build message from step index and loss value."""
        super(TrainingError, self).__init__(
            'training diverged at step {} (loss={!r})'.format(step, loss))
        self.step = step
        self.loss = loss


class DeterminismError(NumericalError):

    """Function evaluated twice on the same input gave different results."""
