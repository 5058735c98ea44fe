"""
Error types shared across the MLCAT lab.
Every error raised deliberately by the library derives from MlcatError so the
experiment runner can map it onto an exit code.
"""


class MlcatError(Exception):
    """Base class for all library errors."""


class DimensionError(MlcatError, ValueError):
    """Raised when array shapes do not line up."""


class InputError(MlcatError, ValueError):
    """Raised for invalid argument values (labels out of range, empty series...)."""


class FormatError(MlcatError, ValueError):
    """Raised when a file does not follow the expected binary or JSON layout."""


class ConsistencyError(MlcatError, ValueError):
    """Raised when two pieces of data that must agree do not."""


class NumericError(MlcatError, ArithmeticError):
    """
    Raised when a non-finite value appears.
    Carries whatever context is known at the point of failure.
    """

    def __init__(self, message, layer=None, epoch=None, batch=None):
        self.layer = layer
        self.epoch = epoch
        self.batch = batch
        context = []
        if layer is not None:
            context.append(f"layer {layer}")
        if epoch is not None:
            context.append(f"epoch {epoch}")
        if batch is not None:
            context.append(f"batch {batch}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)

    def with_context(self, epoch=None, batch=None):
        """Returns a copy with training-loop context filled in."""
        base = self.args[0].split(' (')[0]
        return NumericError(
            base,
            layer=self.layer,
            epoch=self.epoch if epoch is None else epoch,
            batch=self.batch if batch is None else batch,
        )


class ConfigError(MlcatError, ValueError):
    """Raised for an invalid configuration value. `field` is the dotted path."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def exit_code_for(error: BaseException) -> int:
    """0 success, 2 configuration or unreadable input, 3 numeric abort."""
    if isinstance(error, NumericError):
        return EXIT_NUMERIC
    return EXIT_CONFIG


def guarded_run(func, *args, **kwargs) -> int:
    """
    Runs an experiment entry point and maps library errors onto exit codes.
    The error is printed in the usual console format before returning.
    """
    try:
        func(*args, **kwargs)
    except NumericError as e:
        print(f"Error: numeric failure, training aborted: {e}")
        return EXIT_NUMERIC
    except (ConfigError, FormatError) as e:
        print(f"Error: {e}")
        return EXIT_CONFIG
    except MlcatError as e:
        print(f"Error: {e}")
        return exit_code_for(e)
    return EXIT_OK
