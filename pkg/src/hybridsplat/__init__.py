"""Relightable Gaussian splatting with a radiance-transfer branch and a physically based branch."""
from .errors import InputError, PreconditionError, SceneParseError
from .scene import Camera, GaussianSplat, Scene, Splats, SyntheticSpec, TransferDecoder, init_synthetic, scene_load, scene_save
from .sh import ShTransferMatrix, ShVector, sh_eval_basis, sh_project
from .cubemap import Cubemap
from .raster import GBuffer, rasterize
from .shading import deferred_reflection, render_hybrid
from .pbr import VisibilityGrid, bake_visibility, query_visibility, render_pbr
from .optimize import Schedule, TrainConfig, Trainer, train_step

__version__ = "0.1.0"
