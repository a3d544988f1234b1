"""Exception hierarchy shared by all layermesh modules."""


class LayerMeshError(Exception):
    """Base class for all domain errors raised by this package."""


class NonPositiveDepth(LayerMeshError):
    """A depth value was zero or negative where a positive one is required."""


class InvalidRange(LayerMeshError):
    """A (near, far) depth range is empty, inverted, or non-positive."""


class TooFewPlanes(LayerMeshError):
    """A plane stack needs at least two planes."""


class IndivisibleGroups(LayerMeshError):
    """The layer count does not evenly divide the plane count."""


class BetaOutOfRange(LayerMeshError):
    """A blend/opacity coefficient left the closed interval [0, 1]."""


class SchemeShapeMismatch(LayerMeshError):
    """Tensor shapes do not match the declared coloring/aggregation scheme."""


class AlphaOutOfRange(LayerMeshError):
    """An opacity value left the closed interval [0, 1]."""


class DegenerateCamera(LayerMeshError):
    """Camera intrinsics are invalid (non-positive focals, empty sensor)."""


class RowOutOfRange(LayerMeshError):
    """A requested slice row lies outside the vertex grid."""


class ShapeMismatch(LayerMeshError):
    """Two buffers that must share a shape do not."""


class SingleLayer(LayerMeshError):
    """An operation over adjacent layer pairs needs at least two layers."""


class DegenerateGrid(LayerMeshError):
    """A grid is too small for finite differences (needs h, w >= 2)."""


class ImageTooSmall(LayerMeshError):
    """Image is smaller than the metric's filter window."""


class CropTooLarge(LayerMeshError):
    """Central crop margin would leave no pixels."""


class ConventionMismatch(LayerMeshError):
    """Flow fields with incompatible direction conventions were combined."""


class DepthOutOfRange(LayerMeshError):
    """A ground-truth depth lies outside the plane stack's range."""


class InvalidSpec(LayerMeshError):
    """A synthetic scene specification is inconsistent."""


class InvalidScene(LayerMeshError):
    """A scene archive or scene object fails structural validation."""


class IoError(LayerMeshError):
    """File could not be read or written in the expected format."""
