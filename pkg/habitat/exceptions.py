"""Error types raised by the habitat pipeline.

Every error derives from HabitatError so management commands can turn any
pipeline failure into a one-line CommandError. Each family also inherits the
closest builtin so plain ``except ValueError`` keeps working.
"""


class HabitatError(Exception):
    """Base class for pipeline errors."""


class TaxonomyError(HabitatError, ValueError):
    pass


class UnknownClassError(TaxonomyError, KeyError):
    def __str__(self):
        # KeyError quotes its argument; keep the message readable
        return str(self.args[0]) if self.args else ''


class ManifestError(HabitatError, ValueError):
    pass


class SplitError(HabitatError, ValueError):
    pass


class ImageDecodeError(HabitatError, ValueError):
    pass


class AugmentationError(HabitatError, ValueError):
    pass


class AttentionShapeError(HabitatError, ValueError):
    pass


class EncoderContractError(HabitatError, ValueError):
    pass


class UninitializedEncoderError(HabitatError, RuntimeError):
    pass


class DegenerateProjectionError(HabitatError, ValueError):
    pass


class DegenerateBatchError(HabitatError, ValueError):
    pass


class NonFiniteLossError(HabitatError, RuntimeError):
    pass


class EmptySplitError(HabitatError, ValueError):
    pass


class FrozenEncoderViolation(HabitatError, RuntimeError):
    pass


class CheckpointError(HabitatError, ValueError):
    pass


class MetricsError(HabitatError, ValueError):
    pass


class ClusterIndexError(HabitatError, ValueError):
    pass


class SaliencyError(HabitatError, ValueError):
    pass


class GradientUnavailableError(SaliencyError):
    pass


class AnnotationError(HabitatError, ValueError):
    pass


class ConfigError(HabitatError, ValueError):
    pass
