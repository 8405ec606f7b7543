"""Torch view of a :class:`~hybridsplat.scene.Scene` used for rendering and training."""
from __future__ import annotations

import numpy as np
import torch

from .cubemap import Cubemap
from .scene import SPLAT_FIELDS, Scene, ShVector, Splats, TransferDecoder

DTYPE = torch.float64


class SceneTensors:
    """All differentiable quantities of a scene as float64 tensors.

    Splat fields keep their storage width (1-wide fields are ``(N,)``).
    """

    def __init__(self, splat_fields: dict, sh_light, decoder: dict, reflection_map, env_map, visibility=None):
        self.splat = splat_fields
        self.sh_light = sh_light
        self.decoder = decoder
        self.reflection_map = reflection_map
        self.env_map = env_map
        self.visibility = visibility

    @classmethod
    def from_scene(cls, scene: Scene, requires_grad: bool = False) -> "SceneTensors":
        t = lambda a: torch.tensor(np.asarray(a, dtype=np.float64), dtype=DTYPE, requires_grad=requires_grad)
        fields = {name: t(getattr(scene.splats, name)) for name, _, _, _ in SPLAT_FIELDS}
        dec = {p: t(getattr(scene.decoder, p)) for p in TransferDecoder.PARAMS}
        return cls(
            fields,
            t(scene.sh_light.coeffs),
            dec,
            t(scene.reflection_map.faces),
            t(scene.env_map.faces),
            scene.visibility,
        )

    def __len__(self):
        return self.splat["position"].shape[0]

    def field(self, name: str) -> torch.Tensor:
        return self.splat[name]

    def tensors(self) -> dict:
        return self.splat

    def parameters(self) -> dict:
        """Name -> tensor for every trainable quantity."""
        out = {f"splat.{k}": v for k, v in self.splat.items()}
        out["sh_light"] = self.sh_light
        out.update({f"decoder.{k}": v for k, v in self.decoder.items()})
        out["reflection_map"] = self.reflection_map
        out["env_map"] = self.env_map
        return out

    def write_back(self, scene: Scene) -> Scene:
        """Copy tensor values into a new :class:`Scene` (cubemaps rounded to float32)."""
        a = lambda x: x.detach().numpy().astype(np.float64).copy()
        splats = Splats(**{k: a(v) for k, v in self.splat.items()})
        return Scene(
            splats,
            ShVector(a(self.sh_light), scene.sh_light.bands),
            TransferDecoder(**{k: a(v) for k, v in self.decoder.items()}),
            Cubemap(np.maximum(a(self.reflection_map), 0.0)),
            Cubemap(np.maximum(a(self.env_map), 0.0)),
            self.visibility,
        )
