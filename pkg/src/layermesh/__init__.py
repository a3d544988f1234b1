"""Multi-layer semitransparent scene toolkit.

Builds few-layer deformable textured meshes from calibrated stereo pairs:
plane sweep volumes, per-scheme depth aggregation with analytic Jacobians,
grid meshing, texture blending, a deterministic differentiable rasterizer,
plane-stack coalescing, flow-cycle occlusion reasoning, reference losses,
synthetic ground-truth scenes, and a bit-exact scene archive format.
"""

from .aggregate import (
    SCHEMES,
    BetaVolume,
    DepthLayerSet,
    aggregate,
    aggregate_bi,
    aggregate_gc,
    aggregate_sa,
    group_bounds,
    jacobian,
    jacobian_bi,
    jacobian_gc,
    jacobian_sa,
)
from .cli import SceneArchive, export_scene, import_scene, load_archive, main, manifest_hash
from .coalesce import (
    CoalesceConfig,
    MultiPlaneImage,
    merge_depths,
    merge_textures,
    read_mpi_bundle,
    write_mpi_bundle,
)
from .core import (
    CameraIntrinsics,
    CameraRig,
    PosedCamera,
    RigidPose,
    backproject,
    bilinear_sample,
    pixel_grid,
    project,
    ray_directions,
)
from .errors import LayerMeshError
from .losses import (
    DEFAULT_LOSS_WEIGHTS,
    LossReport,
    central_crop,
    l1_loss,
    ordering_loss,
    psnr,
    ssim,
    tv_loss,
)
from .meshing import LayeredMeshSet, LayerMesh, grid_triangles, mesh_layers, slice_table
from .occlusion import FlowField, OcclusionMask, backward_warp, cycle_residual, occlusion_mask
from .predict import (
    ColoringPredictor,
    GeometryPredictor,
    matching_cost,
    predict_coloring_oracle,
    predict_coloring_passthrough,
    predict_geometry_constant,
    predict_geometry_oracle,
    predict_geometry_photoconsistency,
)
from .psv import PlaneStack, PlaneSweepVolume, build_psv, place_planes, plane_homography, warp_side_to_plane
from .render import (
    FragmentBuffer,
    RenderOutput,
    compose_over,
    fd_gradcheck,
    rasterize,
    render,
    render_backward,
)
from .scenegen import SceneSpec, SyntheticScene, generate, ground_truth_views, to_textured_scene
from .texture import ColoringOutput, TexturedScene, blend_textures, softmax_weights, unproject_side_onto_layers

__version__ = "0.1.0"

__all__ = [
    "SCHEMES",
    "BetaVolume",
    "DepthLayerSet",
    "aggregate",
    "aggregate_bi",
    "aggregate_gc",
    "aggregate_sa",
    "group_bounds",
    "jacobian",
    "jacobian_bi",
    "jacobian_gc",
    "jacobian_sa",
    "SceneArchive",
    "export_scene",
    "import_scene",
    "load_archive",
    "main",
    "manifest_hash",
    "CoalesceConfig",
    "MultiPlaneImage",
    "merge_depths",
    "merge_textures",
    "read_mpi_bundle",
    "write_mpi_bundle",
    "CameraIntrinsics",
    "CameraRig",
    "PosedCamera",
    "RigidPose",
    "backproject",
    "bilinear_sample",
    "pixel_grid",
    "project",
    "ray_directions",
    "LayerMeshError",
    "DEFAULT_LOSS_WEIGHTS",
    "LossReport",
    "central_crop",
    "l1_loss",
    "ordering_loss",
    "psnr",
    "ssim",
    "tv_loss",
    "LayeredMeshSet",
    "LayerMesh",
    "grid_triangles",
    "mesh_layers",
    "slice_table",
    "FlowField",
    "OcclusionMask",
    "backward_warp",
    "cycle_residual",
    "occlusion_mask",
    "ColoringPredictor",
    "GeometryPredictor",
    "matching_cost",
    "predict_coloring_oracle",
    "predict_coloring_passthrough",
    "predict_geometry_constant",
    "predict_geometry_oracle",
    "predict_geometry_photoconsistency",
    "PlaneStack",
    "PlaneSweepVolume",
    "build_psv",
    "place_planes",
    "plane_homography",
    "warp_side_to_plane",
    "FragmentBuffer",
    "RenderOutput",
    "compose_over",
    "fd_gradcheck",
    "rasterize",
    "render",
    "render_backward",
    "SceneSpec",
    "SyntheticScene",
    "generate",
    "ground_truth_views",
    "to_textured_scene",
    "ColoringOutput",
    "TexturedScene",
    "blend_textures",
    "softmax_weights",
    "unproject_side_onto_layers",
    "__version__",
]
