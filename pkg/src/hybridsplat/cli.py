"""``rtr`` command-line interface."""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import InputError, PreconditionError
from .imageio import read_pfm, write_pfm, write_ppm
from .losses import normal_mae, psnr, ssim
from .model import SceneTensors
from .optimize import TrainConfig, Trainer, View
from .pbr import bake_visibility, render_pbr
from .raster import backend_name
from .scene import Scene, SyntheticSpec, init_synthetic, load_cameras, load_cubemap, scene_load, scene_save
from .shading import render_hybrid

log = logging.getLogger("rtr")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_TOLERANCE = 3

COMMANDS = ("render", "bake", "train", "relight", "edit", "metrics", "validate")
EDITABLE = ("albedo", "metallic", "roughness")

# keys consumed by the commands themselves; everything else configures training
RUN_KEYS = {
    "cameras": str, "images": str, "masks": str, "resume": str, "checkpoint_every": int,
    "init": str, "init_count": int, "init_size": float, "init_flatten": float, "init_face_res": int,
    "env": str, "env_equirect": str, "env_res": int,
    "field": str, "value": float, "scale": float,
    "a": str, "b": str, "normals_a": str, "normals_b": str,
    "suite": str, "cases": str,
}


@dataclass
class RunConfig:
    command: str
    out: Path
    scene: Path | None = None
    config_path: Path | None = None
    branch: str = "hybrid"
    seed: int = 0
    threads: int | None = None
    dump_gbuffer: bool = False
    options: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)

    def path(self, key: str, required: bool = True) -> Path | None:
        """An option interpreted as a path relative to the config file."""
        raw = self.options.get(key)
        if raw is None:
            if required:
                raise InputError(f"config key {key!r} is required for `{self.command}`")
            return None
        p = Path(raw)
        if not p.is_absolute() and self.config_path is not None:
            p = self.config_path.parent / p
        if not p.exists():
            raise InputError(f"{key}: {p} does not exist")
        return p

    def cameras(self):
        p = self.path("cameras", required=False)
        if p is None and self.scene is not None and (self.scene_dir() / "cameras.txt").exists():
            p = self.scene_dir() / "cameras.txt"
        if p is None:
            raise InputError("no camera set: give `cameras = FILE` in the config or put cameras.txt next to the scene")
        return load_cameras(p)

    def scene_dir(self) -> Path:
        return self.scene if self.scene.suffix != ".txt" else self.scene.parent

    def load_scene(self) -> Scene:
        if self.scene is None:
            raise InputError(f"`{self.command}` needs --scene")
        return scene_load(self.scene)


def parse_config(path: Path | None) -> tuple[dict, dict]:
    """Split a key-value config file into run options and training overrides."""
    if path is None:
        return {}, {}
    if not path.exists():
        raise InputError(f"config file {path} does not exist")
    parser = configparser.ConfigParser()
    try:
        parser.read_string("[run]\n" + path.read_text())
    except configparser.Error as exc:
        raise InputError(f"{path}: {exc}") from None
    run, train = {}, {}
    for k, v in parser["run"].items():
        if k in RUN_KEYS:
            try:
                run[k] = RUN_KEYS[k](v.strip())
            except ValueError:
                raise InputError(f"bad value for {k}: {v!r}") from None
        else:
            train[k] = v
    return run, train


# ---------------------------------------------------------------- library-level helpers


@torch.no_grad()
def render_images(scene: Scene, cameras, branch: str = "hybrid", config: TrainConfig | None = None):
    """Render every camera; returns a list of ``(image (H, W, 3), gbuffer)``."""
    cfg = config or TrainConfig()
    if branch not in ("hybrid", "pbr"):
        raise InputError(f"unknown branch {branch!r}")
    model = SceneTensors.from_scene(scene)
    if branch == "pbr" and model.visibility is None:
        raise PreconditionError("scene has no visibility grid; run `rtr bake` first")
    out = []
    for cam in cameras:
        if branch == "hybrid":
            r = render_hybrid(model, cam, background=cfg.background)
        else:
            r = render_pbr(model, cam, spec_occlusion=cfg.spec_occlusion, background=cfg.background,
                           vis_offset=cfg.vis_offset)
        out.append((r.image.numpy(), r.gbuffer))
    return out


def relight_scene(scene: Scene, env) -> Scene:
    """Copy of ``scene`` lit by a new environment cubemap (mips are rebuilt at render time)."""
    out = scene.copy()
    out.env_map = env.copy()
    out.env_map.mips = None
    return out


def edit_material(scene: Scene, name: str, value: float | None = None, scale: float | None = None) -> Scene:
    """Bulk-set or scale albedo, metallic or roughness, clamped to [0, 1]."""
    if name not in EDITABLE:
        raise InputError(f"editable fields are {', '.join(EDITABLE)}; got {name!r}")
    if (value is None) == (scale is None):
        raise InputError("give exactly one of `value` or `scale`")
    out = scene.copy()
    arr = getattr(out.splats, name)
    new = np.full_like(arr, value) if value is not None else arr * scale
    setattr(out.splats, name, np.clip(new, 0.0, 1.0))
    return out


def image_metrics(a: np.ndarray, b: np.ndarray) -> dict:
    ta, tb = torch.as_tensor(np.asarray(a, dtype=np.float64)), torch.as_tensor(np.asarray(b, dtype=np.float64))
    if ta.shape != tb.shape:
        raise InputError(f"image size mismatch: {tuple(ta.shape)} vs {tuple(tb.shape)}")
    return {"psnr": psnr(ta, tb), "ssim": float(ssim(ta, tb))}


def normal_metrics(a: np.ndarray, b: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    valid = (np.linalg.norm(a, axis=-1) > 0.5) & (np.linalg.norm(b, axis=-1) > 0.5)
    unit = lambda x: x / np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), 1e-12)
    return {"mae_deg": normal_mae(unit(a), unit(b), valid)}


# ---------------------------------------------------------------- commands


def _write_image(out: Path, stem: str, image) -> list[Path]:
    write_pfm(out / f"{stem}.pfm", image)
    write_ppm(out / f"{stem}.ppm", image)
    return [out / f"{stem}.pfm", out / f"{stem}.ppm"]


def _dump_gbuffer(out: Path, stem: str, gb) -> list[Path]:
    files = []
    bufs = {"alpha": gb.alpha, "normal": gb.normal(), "depth": gb.depth()}
    bufs.update({k: gb.normalized(k) for k in gb.channels if k not in ("normal", "depth")})
    for name, buf in bufs.items():
        arr = buf.detach().numpy()
        if arr.ndim == 3 and arr.shape[2] not in (1, 3):
            continue
        p = out / f"{stem}_{name}.pfm"
        write_pfm(p, arr)
        files.append(p)
    return files


def cmd_render(run: RunConfig) -> tuple[int, list]:
    scene = run.load_scene()
    files = []
    for i, (img, gb) in enumerate(render_images(scene, run.cameras(), run.branch, run.train)):
        files += _write_image(run.out, f"{run.branch}_{i:03d}", img)
        if run.dump_gbuffer:
            files += _dump_gbuffer(run.out, f"gbuffer_{i:03d}", gb)
    return EXIT_OK, files


def cmd_bake(run: RunConfig) -> tuple[int, list]:
    scene = run.load_scene()
    grid = bake_visibility(scene, res=run.train.grid_res, face_res=run.train.bake_face_res,
                           progress=lambda v, n: log.info("bake %d / %d voxels", v, n))
    path = grid.save(run.out / "visibility.visgrid")
    scene.visibility = grid
    sf = scene_save(scene, run.out / "scene")
    return EXIT_OK, [path, sf]


def _training_scene(run: RunConfig) -> Scene:
    if run.scene is not None:
        return run.load_scene()
    kind = run.options.get("init")
    if kind is None:
        raise InputError("`train` needs --scene or `init = sphere|plane|box` in the config")
    spec = SyntheticSpec(primitive=kind, seed=run.seed)
    for key in ("count", "size", "flatten", "face_res"):
        if f"init_{key}" in run.options:
            setattr(spec, key, run.options[f"init_{key}"])
    return init_synthetic(spec)


def _load_views(run: RunConfig) -> list[View]:
    cams = run.cameras()
    img_dir = run.path("images")
    mask_dir = run.path("masks", required=False)
    views = []
    for i, cam in enumerate(cams):
        f = img_dir / f"image_{i:03d}.pfm"
        if not f.exists():
            raise InputError(f"missing training image {f}")
        img = read_pfm(f).astype(np.float64)
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=2)
        if img.shape[:2] != (cam.height, cam.width):
            raise InputError(f"{f}: size {img.shape[1]}x{img.shape[0]} does not match camera {cam.width}x{cam.height}")
        mask = None
        if mask_dir is not None:
            m = read_pfm(mask_dir / f"mask_{i:03d}.pfm").astype(np.float64)
            mask = m if m.ndim == 2 else m.mean(-1)
        views.append(View(cam, img, mask))
    return views


def cmd_train(run: RunConfig) -> tuple[int, list]:
    scene = _training_scene(run)
    views = _load_views(run)
    trainer = Trainer(scene, views, run.train, dump_dir=run.out)
    resume = run.path("resume", required=False)
    if resume is not None:
        trainer.load_checkpoint(resume)
    every = run.options.get("checkpoint_every", 1000)
    log_path = run.out / "losses.csv"
    trainer.run(log_path=log_path, checkpoint_every=every, checkpoint_dir=run.out / "checkpoints")
    sf = scene_save(trainer.scene(), run.out / "scene")
    final = trainer.save_checkpoint(run.out / "checkpoints" / "final.pt")
    return EXIT_OK, [sf, log_path, final]


def cmd_relight(run: RunConfig) -> tuple[int, list]:
    from .cubemap import Cubemap

    scene = run.load_scene()
    if "env" in run.options:
        env = load_cubemap(run.path("env"))
    elif "env_equirect" in run.options:
        img = read_pfm(run.path("env_equirect")).astype(np.float64)
        env = Cubemap.from_equirect(img if img.ndim == 3 else img[..., None], run.options.get("env_res", scene.env_map.face_res))
    else:
        raise InputError("`relight` needs `env = DIR` (six-face PFM set) or `env_equirect = FILE`")
    lit = relight_scene(scene, env)
    files = []
    for i, (img, _) in enumerate(render_images(lit, run.cameras(), "pbr", run.train)):
        files += _write_image(run.out, f"relight_{i:03d}", img)
    return EXIT_OK, files


def cmd_edit(run: RunConfig) -> tuple[int, list]:
    scene = run.load_scene()
    edited = edit_material(scene, run.options.get("field", ""), run.options.get("value"), run.options.get("scale"))
    return EXIT_OK, [scene_save(edited, run.out / "scene")]


def cmd_metrics(run: RunConfig) -> tuple[int, list]:
    rows = []
    if "a" in run.options or "b" in run.options:
        da, db = run.path("a"), run.path("b")
        # images pair up in sorted-name order, so `render` and `relight` outputs compare directly
        fa, fb = sorted(da.glob("*.pfm")), sorted(db.glob("*.pfm"))
        if not fa:
            raise InputError(f"no PFM images in {da}")
        if len(fa) != len(fb):
            raise InputError(f"{da} has {len(fa)} images but {db} has {len(fb)}")
        for pa, pb in zip(fa, fb):
            name = pa.name if pa.name == pb.name else f"{pa.name}:{pb.name}"
            rows.append({"name": name, **image_metrics(read_pfm(pa), read_pfm(pb))})
    if "normals_a" in run.options:
        na, nb = run.path("normals_a"), run.path("normals_b")
        rows.append({"name": "normals", **normal_metrics(read_pfm(na), read_pfm(nb))})
    if not rows:
        raise InputError("`metrics` needs `a`/`b` image directories or `normals_a`/`normals_b` files")
    summary = {}
    for key in ("psnr", "ssim", "mae_deg"):
        vals = [r[key] for r in rows if key in r]
        if vals:
            summary[key] = float(np.mean(vals))
    path = run.out / "metrics.json"
    path.write_text(json.dumps({"images": rows, "mean": summary}, indent=2) + "\n")
    print(" ".join(f"{k}={v:.4f}" for k, v in summary.items()))
    return EXIT_OK, [path]


def cmd_validate(run: RunConfig) -> tuple[int, list]:
    from .oracle import write_report
    from .validation import run_suite

    cases = run.options.get("cases")
    ids = [c.strip() for c in cases.split(",")] if cases else None
    rows = run_suite(ids, seed=run.seed, quick=run.options.get("suite", "full") == "quick")
    path = write_report(run.out / "report.csv", rows)
    failed = [r.case for r in rows if not r.passed]
    for r in rows:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.case} err={r.rel_error:.4g} tol={r.tolerance:.4g}")
    return (EXIT_TOLERANCE if failed else EXIT_OK), [path]


HANDLERS = {
    "render": cmd_render, "bake": cmd_bake, "train": cmd_train, "relight": cmd_relight,
    "edit": cmd_edit, "metrics": cmd_metrics, "validate": cmd_validate,
}


# ---------------------------------------------------------------- entry point


def _sha256(path: Path) -> str | None:
    if not path.is_file():
        return None
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    import scipy

    from . import __version__

    return {"hybridsplat": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "torch": torch.__version__, "raster_backend": backend_name()}


def write_manifest(run: RunConfig, argv, outputs, code: int, elapsed: float) -> Path:
    inputs = {}
    for p in (run.scene, run.config_path):
        if p is not None:
            f = p if p.is_file() else p / "scene.txt"
            inputs[str(p)] = _sha256(f)
    manifest = {
        "command": run.command,
        "argv": list(argv),
        "exit_code": code,
        "seed": run.seed,
        "threads": torch.get_num_threads(),
        "branch": run.branch,
        "options": run.options,
        "train_config": run.train.to_text().splitlines(),
        "inputs": inputs,
        "outputs": [str(p) for p in outputs],
        "versions": _versions(),
        "elapsed_s": round(elapsed, 3),
    }
    path = run.out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rtr", description="Relightable Gaussian splat rendering, baking and training.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--scene", type=Path)
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--branch", choices=("hybrid", "pbr"), default="hybrid")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--dump-gbuffer", action="store_true")
    p.add_argument("--spec-occlusion", choices=("on", "off"), default=None, help="visibility on the PBR specular term")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def make_run(args) -> RunConfig:
    options, overrides = parse_config(args.config)
    train = TrainConfig().with_overrides(overrides)
    seed = args.seed if args.seed is not None else train.seed
    train.seed = seed
    if args.spec_occlusion is not None:
        train.spec_occlusion = args.spec_occlusion == "on"
    if args.scene is not None and not args.scene.exists():
        raise InputError(f"scene {args.scene} does not exist")
    return RunConfig(args.command, args.out, args.scene, args.config, args.branch, seed, args.threads,
                     args.dump_gbuffer, options, train)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        run = make_run(args)
        if run.threads is not None:
            if run.threads < 1:
                raise InputError("--threads must be positive")
            torch.set_num_threads(run.threads)
        torch.manual_seed(run.seed)
        run.out.mkdir(parents=True, exist_ok=True)
        code, outputs = HANDLERS[run.command](run)
    except (InputError, PreconditionError, FileNotFoundError) as exc:
        print(f"rtr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    write_manifest(run, argv, outputs, code, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
