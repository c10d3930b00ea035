"""Exception hierarchy shared by every dycklab module."""


class DyckLabError(Exception):
    """Base class for all domain errors raised by dycklab."""


class InputError(DyckLabError, ValueError):
    pass


class ConfigError(DyckLabError, ValueError):
    pass


class SamplingError(DyckLabError, RuntimeError):
    pass


class ResourceError(DyckLabError, RuntimeError):
    pass


class CorruptionError(DyckLabError, RuntimeError):
    pass


class UndefinedTransitionError(DyckLabError, KeyError):
    """No transition exists for (input, state, stack top). Not a rejection."""

    def __str__(self):
        return str(self.args[0]) if self.args else "undefined transition"


class StackUnderflowError(DyckLabError, IndexError):
    pass


class UnsupportedOpError(DyckLabError, ValueError):
    pass


class ConstructionError(DyckLabError, ValueError):
    pass


class TrainingError(DyckLabError, RuntimeError):
    pass


class LengthError(InputError):
    pass


class LabelError(InputError):
    pass


class AutodiffError(DyckLabError, RuntimeError):
    pass
