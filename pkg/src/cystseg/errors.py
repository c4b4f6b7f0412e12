"""Exception types raised across the package."""


class CystSegError(Exception):
    """Base class for all package errors."""


# volume / io
class MissingFile(CystSegError, FileNotFoundError):
    pass


class MalformedManifest(CystSegError, ValueError):
    pass


class UnsupportedImageFormat(CystSegError, ValueError):
    pass


class DimensionMismatch(CystSegError, ValueError):
    pass


class DegenerateSlice(CystSegError, ValueError):
    pass


class DegenerateTarget(CystSegError, ValueError):
    pass


# phantom
class InfeasibleSpec(CystSegError, ValueError):
    pass


# denoise
class NonFiniteInput(CystSegError, ValueError):
    pass


# saliency
class TooManyLevels(CystSegError, ValueError):
    pass


class InvalidScalePair(CystSegError, ValueError):
    pass


# layers
class LayersCrossed(CystSegError):
    pass


# classify
class DegenerateRegion(CystSegError, ValueError):
    pass


class SingleClassTrainingSet(CystSegError, ValueError):
    pass


class TooFewSamples(CystSegError, ValueError):
    pass


class FeatureLengthMismatch(CystSegError, ValueError):
    pass


class CorruptModelFile(CystSegError):
    pass


class VersionMismatch(CystSegError):
    pass


# eval
class EmptyAfterExclusion(CystSegError, ValueError):
    pass


class InsufficientVolumes(CystSegError, ValueError):
    pass
