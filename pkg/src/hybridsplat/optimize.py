"""Two-stage optimization: hybrid branch alone, then both branches jointly."""
from __future__ import annotations

import configparser
import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from .errors import InputError, PreconditionError
from .ibl import build_brdf_lut, mip_chain_t
from .losses import (LossWeights, loss_light, loss_mask, loss_metal, loss_normal, loss_render, loss_smooth,
                     total_loss)
from .model import SceneTensors
from .pbr import BAKE_FACE_RES, GRID_RES, PBR_CHANNELS, VIS_OFFSET, bake_visibility, irradiance_texture_t, render_pbr
from .raster import depth_to_pseudo_normals
from .scene import FIELD_BOUNDS, Camera, Scene, logit, sigmoid
from .shading import render_hybrid

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("hybrid", "pbr", "light", "metal", "normal", "smooth", "mask")
APPEARANCE_FIELDS = ("rho_d", "c_t", "rho_s", "f_t", "R_t", "R_r", "R_i", "albedo", "metallic", "roughness", "L_ind")


class TrainingError(RuntimeError):
    pass


@dataclass
class Schedule:
    stage1_iters: int = 30_000
    view_dep_start: int = 3_000
    stage2_iters: int = 10_000
    bake_at: int | None = None  # defaults to stage1_iters
    prop_period: int = 1_000
    prop_boost: float = 1.5

    def __post_init__(self):
        if not (0 <= self.view_dep_start < self.stage1_iters or self.stage1_iters == 0):
            raise InputError("view_dep_start must precede the end of stage 1")
        if self.stage2_iters < 0 or self.stage1_iters < 0:
            raise InputError("iteration counts must be non-negative")
        if self.prop_period <= 0 or self.prop_boost < 1.0:
            raise InputError("propagation needs a positive period and a boost >= 1")

    @property
    def total(self) -> int:
        return self.stage1_iters + self.stage2_iters

    @property
    def bake_iter(self) -> int:
        return self.stage1_iters if self.bake_at is None else self.bake_at

    def stage(self, it: int) -> int:
        return 1 if it < self.stage1_iters else 2


@dataclass
class LearningRates:
    position: float = 1.6e-4
    position_final: float = 1.6e-6
    position_scale: float = 1.0  # scene-extent multiplier for the position rate
    log_scale: float = 5e-3
    rotation: float = 1e-3
    opacity: float = 5e-2
    appearance: float = 2.5e-3
    sh_light: float = 2.5e-3
    decoder: float = 1e-3
    cubemap: float = 1e-2

    def position_at(self, it: int, total: int) -> float:
        t = min(max(it / max(total, 1), 0.0), 1.0)
        lo, hi = self.position_final, self.position
        return self.position_scale * math.exp((1 - t) * math.log(hi) + t * math.log(lo))


@dataclass
class TrainConfig:
    schedule: Schedule = field(default_factory=Schedule)
    lr: LearningRates = field(default_factory=LearningRates)
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    batch: int = 1
    grid_res: int = GRID_RES
    bake_face_res: int = BAKE_FACE_RES
    vis_offset: float = VIS_OFFSET
    spec_occlusion: bool = True
    background: float = 0.0
    train_env: bool = True
    train_reflection: bool = True
    train_geometry: bool = True
    log_every: int = 100

    SECTIONS = ("schedule", "lr", "weights")

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        """Read ``key = value`` lines; keys are ``name`` or ``section.name``."""
        parser = configparser.ConfigParser()
        try:
            parser.read_string("[train]\n" + Path(path).read_text())
        except configparser.Error as exc:
            raise InputError(f"{path}: {exc}") from None
        return cls().with_overrides(dict(parser["train"]))

    def with_overrides(self, items: dict) -> "TrainConfig":
        cfg = replace(self, schedule=replace(self.schedule), lr=replace(self.lr), weights=replace(self.weights))
        for key, raw in items.items():
            key = key.strip()
            if "." in key:
                sect, name = key.split(".", 1)
                if sect not in self.SECTIONS:
                    raise InputError(f"unknown config section {sect!r}")
                target = getattr(cfg, sect)
            else:
                target, name = cfg, key
            types = {f.name: f.type for f in fields(target)}
            if name not in types or name in self.SECTIONS:
                raise InputError(f"unknown config key {key!r}")
            setattr(target, name, _parse_value(str(raw), getattr(target, name), key))
        cfg.schedule.__post_init__()
        cfg.weights.__post_init__()
        return cfg

    def to_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            if isinstance(v, dict):
                lines += [f"{k}.{kk} = {vv}" for kk, vv in v.items()]
            else:
                lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def _parse_value(raw: str, current, key: str):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            if raw.lower() in ("1", "true", "on", "yes"):
                return True
            if raw.lower() in ("0", "false", "off", "no"):
                return False
            raise ValueError(raw)
        if raw.lower() == "none":
            return None
        if isinstance(current, int) and not isinstance(current, bool) and current is not None:
            return int(float(raw)) if float(raw).is_integer() else float(raw)
        return float(raw)
    except ValueError:
        raise InputError(f"bad value for {key}: {raw!r}") from None


@dataclass
class View:
    camera: Camera
    image: np.ndarray  # (H, W, 3)
    mask: np.ndarray | None = None  # (H, W) in {0, 1}

    def tensors(self):
        img = torch.as_tensor(np.asarray(self.image, dtype=np.float64))
        m = None if self.mask is None else torch.as_tensor(np.asarray(self.mask, dtype=np.float64))
        return img, m


# ---------------------------------------------------------------- propagation


def propagate_normals(scene: Scene, it: int, schedule: Schedule) -> Scene:
    """Periodic opacity boost for splats whose reflection intensity exceeds the median.

    Active on multiples of ``prop_period`` during stage 1 (iteration 0 excluded).
    """
    if not _propagation_due(it, schedule) or len(scene.splats) == 0:
        return scene
    out = scene.copy()
    s = out.splats
    sel = s.R_i.reshape(-1) > np.median(s.R_i)
    op = np.minimum(0.99, schedule.prop_boost * sigmoid(s.opacity_logit[sel]))
    s.opacity_logit[sel] = np.maximum(s.opacity_logit[sel], logit(op))
    return out


def _propagation_due(it: int, schedule: Schedule) -> bool:
    return it > 0 and it % schedule.prop_period == 0 and schedule.stage(it) == 1 and schedule.prop_boost != 1.0


@torch.no_grad()
def _propagate_t(model: SceneTensors, boost: float) -> int:
    ri = model.splat["R_i"]
    if ri.numel() == 0:
        return 0
    sel = ri > torch.quantile(ri, 0.5)  # interpolated median, same as numpy
    ol = model.splat["opacity_logit"]
    op = torch.clamp(boost * torch.sigmoid(ol[sel]), max=0.99)
    ol[sel] = torch.maximum(ol[sel], torch.logit(op))
    return int(sel.sum())


# ---------------------------------------------------------------- trainer


class Trainer:
    """Holds the differentiable scene, the optimizer and the loss log."""

    def __init__(self, scene: Scene, views: list[View], config: TrainConfig | None = None, dump_dir=None):
        if not views:
            raise InputError("training needs at least one view")
        self.config = config or TrainConfig()
        self.views = views
        self.model = SceneTensors.from_scene(scene, requires_grad=True)
        self.template = scene
        self.lut = build_brdf_lut()
        self.dump_dir = dump_dir
        self.history: list[dict] = []
        self.iteration = 0
        self.optimizer = torch.optim.Adam(self._param_groups(), eps=1e-15)

    def _param_groups(self):
        lr = self.config.lr
        s = self.model.splat
        groups = []
        if self.config.train_geometry:
            groups += [
                {"name": "position", "params": [s["position"]], "lr": lr.position_at(0, self.config.schedule.total)},
                {"name": "log_scale", "params": [s["log_scale"]], "lr": lr.log_scale},
                {"name": "rotation", "params": [s["rotation"]], "lr": lr.rotation},
                {"name": "opacity_logit", "params": [s["opacity_logit"]], "lr": lr.opacity},
            ]
        groups += [{"name": k, "params": [s[k]], "lr": lr.appearance} for k in APPEARANCE_FIELDS]
        groups.append({"name": "sh_light", "params": [self.model.sh_light], "lr": lr.sh_light})
        groups.append({"name": "decoder", "params": list(self.model.decoder.values()), "lr": lr.decoder})
        if self.config.train_reflection:
            groups.append({"name": "reflection_map", "params": [self.model.reflection_map], "lr": lr.cubemap})
        if self.config.train_env:
            groups.append({"name": "env_map", "params": [self.model.env_map], "lr": lr.cubemap})
        return groups

    # -- bookkeeping

    def scene(self) -> Scene:
        return self.model.write_back(self.template)

    def bake(self):
        grid = bake_visibility(self.scene(), res=self.config.grid_res, face_res=self.config.bake_face_res)
        self.model.visibility = grid
        return grid

    def _pick_views(self, it: int) -> list[View]:
        rng = np.random.default_rng([self.config.seed, it])
        k = min(self.config.batch, len(self.views))
        return [self.views[i] for i in rng.choice(len(self.views), size=k, replace=False)]

    # -- one update

    def losses(self, batch: list[View], it: int) -> dict:
        cfg = self.config
        sched = cfg.schedule
        stage = sched.stage(it)
        w = cfg.weights
        m = self.model
        refl_mips = mip_chain_t(m.reflection_map)
        env_mips = irr = None
        if stage == 2:
            if m.visibility is None:
                raise PreconditionError("stage 2 needs a baked visibility grid")
            env_mips = mip_chain_t(m.env_map)
            irr = irradiance_texture_t(m.env_map)
        acc = {k: 0.0 for k in LOSS_COLUMNS}
        for view in batch:
            gt, mask = view.tensors()
            extra = {k: m.splat[k] for k in PBR_CHANNELS} if stage == 2 else None
            hyb = render_hybrid(m, view.camera, self.lut, refl_mips, it >= sched.view_dep_start, cfg.background, extra=extra)
            gb = hyb.gbuffer
            acc["hybrid"] = acc["hybrid"] + loss_render(hyb.image, gt, w.dssim)
            n_hat, valid = depth_to_pseudo_normals(gb.depth(), view.camera, gb.alpha)
            acc["normal"] = acc["normal"] + loss_normal(gb.normal(), n_hat, valid)
            smooth = loss_smooth(gb["normal"], gt) + loss_smooth(gb["R_i"], gt) + loss_smooth(gb["R_r"], gt)
            if mask is not None:
                acc["mask"] = acc["mask"] + loss_mask(gb.alpha, mask)
            if stage == 2:
                pbr = render_pbr(m, view.camera, self.lut, env_mips, irr, cfg.spec_occlusion, cfg.background,
                                 vis_offset=cfg.vis_offset, gbuffer=gb)
                acc["pbr"] = acc["pbr"] + loss_render(pbr.image, gt, w.dssim)
                fg = gb.alpha.detach() >= 0.5
                cov = torch.clamp(gb.alpha, min=1e-8)[..., None]
                acc["metal"] = acc["metal"] + loss_metal((gb["metallic"] / cov)[..., 0], hyb.intensity, fg)
                smooth = smooth + loss_smooth(gb["metallic"], gt) + loss_smooth(gb["roughness"], gt)
            acc["smooth"] = acc["smooth"] + smooth
        if stage == 2:
            acc["light"] = loss_light(m.env_map) * len(batch)
        terms = {k: v / len(batch) for k, v in acc.items() if isinstance(v, torch.Tensor)}
        terms["total"] = total_loss(terms, w, stage)
        return terms

    def step(self, batch: list[View] | None = None, it: int | None = None) -> dict:
        it = self.iteration if it is None else it
        sched = self.config.schedule
        if it == sched.bake_iter and self.model.visibility is None and sched.stage2_iters > 0:
            self.bake()
        batch = batch if batch is not None else self._pick_views(it)
        for g in self.optimizer.param_groups:
            if g["name"] == "position":
                g["lr"] = self.config.lr.position_at(it, sched.total)
        self.optimizer.zero_grad(set_to_none=True)
        terms = self.losses(batch, it)
        total = terms["total"]
        if not torch.isfinite(total):
            self._dump(it, terms)
            raise TrainingError(f"non-finite loss at iteration {it}: " + ", ".join(f"{k}={float(v.detach())}" for k, v in terms.items()))
        total.backward()
        self.optimizer.step()
        self._project()
        if _propagation_due(it, sched):
            _propagate_t(self.model, sched.prop_boost)
        report = {"iter": it, "stage": sched.stage(it)}
        report.update({k: float(terms[k].detach()) if k in terms else 0.0 for k in LOSS_COLUMNS})
        report["total"] = float(total.detach())
        self.history.append(report)
        self.iteration = it + 1
        return report

    @torch.no_grad()
    def _project(self):
        s = self.model.splat
        for name, (lo, hi) in FIELD_BOUNDS.items():
            if lo is not None or hi is not None:
                s[name].clamp_(min=lo, max=hi)
        norm = s["rotation"].norm(dim=-1, keepdim=True)
        drift = (norm - 1.0).abs() > 1e-12
        s["rotation"].copy_(torch.where(drift, s["rotation"] / torch.clamp(norm, min=1e-12), s["rotation"]))
        self.model.reflection_map.clamp_(min=0.0)
        self.model.env_map.clamp_(min=0.0)

    def _dump(self, it, terms):
        if self.dump_dir is None:
            return
        from .scene import scene_save

        d = Path(self.dump_dir) / f"nonfinite_{it:06d}"
        scene_save(self.scene(), d)
        (d / "losses.txt").write_text("".join(f"{k} {float(v.detach())!r}\n" for k, v in terms.items()))
        log.error("non-finite loss; scene dumped to %s", d)

    def run(self, until: int | None = None, log_path=None, checkpoint_every: int = 0, checkpoint_dir=None) -> list[dict]:
        """Step until iteration ``until`` (default: end of schedule)."""
        until = self.config.schedule.total if until is None else until
        writer = fh = None
        if log_path is not None:
            new = not Path(log_path).exists() or self.iteration == 0
            fh = open(log_path, "w" if new else "a", newline="")
            writer = csv.writer(fh)
            if new:
                writer.writerow(("iter", "stage") + LOSS_COLUMNS + ("total",))
        try:
            while self.iteration < until:
                r = self.step()
                if writer is not None:
                    writer.writerow([r["iter"], r["stage"]] + [repr(r[k]) for k in LOSS_COLUMNS] + [repr(r["total"])])
                if self.config.log_every and r["iter"] % self.config.log_every == 0:
                    log.info("iter %d stage %d loss %.6f", r["iter"], r["stage"], r["total"])
                if checkpoint_every and checkpoint_dir and self.iteration % checkpoint_every == 0:
                    self.save_checkpoint(Path(checkpoint_dir) / f"ckpt_{self.iteration:06d}.pt")
        finally:
            if fh is not None:
                fh.close()
        return self.history

    # -- checkpoints

    def save_checkpoint(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save({
            "iteration": self.iteration,
            "params": {k: v.detach().clone() for k, v in self.model.parameters().items()},
            "optimizer": self.optimizer.state_dict(),
            "visibility": None if self.model.visibility is None else _grid_state(self.model.visibility),
        }, path)
        return path

    def load_checkpoint(self, path) -> None:
        state = torch.load(path, weights_only=False)
        with torch.no_grad():
            for k, v in self.model.parameters().items():
                v.copy_(state["params"][k])
        self.optimizer.load_state_dict(state["optimizer"])
        self.iteration = state["iteration"]
        if state["visibility"] is not None:
            from .pbr import VisibilityGrid

            self.model.visibility = VisibilityGrid(*state["visibility"])


def _grid_state(grid):
    return (grid.lo.copy(), grid.hi.copy(), grid.coeffs.copy())


def train_step(trainer: Trainer, batch: list[View], it: int) -> tuple[Scene, dict]:
    """One optimizer update at iteration ``it``; returns the updated scene and loss report."""
    report = trainer.step(batch, it)
    return trainer.scene(), report
