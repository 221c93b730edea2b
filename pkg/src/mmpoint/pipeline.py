"""Config-driven end-to-end runs: scene -> echoes -> maps -> points -> clusters -> reports."""

from __future__ import annotations

import hashlib
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from mmpoint import __version__
from mmpoint.array import ArrayLayout, build_virtual_array, default_layout, layout_to_text, load_layout
from mmpoint.clustering import ClusteringConfig, dynamic_dbscan, overlay_frames
from mmpoint.detection import DetectionConfig, PointCloud, generate_point_cloud
from mmpoint.echo import RadarParams, synthesize_echo
from mmpoint.errors import DomainError, MmpointError, SchemaError
from mmpoint.imaging import compute_ram, compute_rdm, range_axis, velocity_axis
from mmpoint.io import write_json, read_pgm, sha256_file, write_cloud_csv, write_jsonl, write_pgm, write_ply
from mmpoint.metrics import MaskGrid, Region2D, density_profile, iou, rasterize
from mmpoint.scene import Label, Scene, load_scene, sample_scene

log = logging.getLogger(__name__)

PRODUCTS = ("rdm", "ram", "cloud", "ply", "clusters", "metrics")
MANIFEST = "manifest.json"
EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class RamConfig:
    mode: str = "zero_doppler_slice"
    az_bins: int = 256
    max_angle_deg: float = 60.0
    pixel_pitch: float = 0.25

    @classmethod
    def from_dict(cls, doc: dict) -> "RamConfig":
        for key in doc:
            if key not in cls.__dataclass_fields__:
                raise SchemaError("unknown key", f"ram.{key}")
        return cls(**doc)


@dataclass(frozen=True)
class RunConfig:
    scene_text: str
    layout: ArrayLayout
    radar: RadarParams
    seed: int
    noise_power: float = 0.0
    cfar: DetectionConfig = DetectionConfig()
    clustering: ClusteringConfig = ClusteringConfig()
    ram: RamConfig = RamConfig()
    overlay_window: int = 1
    output_dir: Path = Path("out")
    products: tuple[str, ...] = ("cloud", "clusters", "metrics")
    density_edges: tuple[float, ...] = (0.0, 30.0, 60.0, 90.0, 120.0, 150.0)
    source: dict = field(default_factory=dict, compare=False)

    def resolved(self) -> dict:
        """Everything that determines the outputs; inputs by content hash, no absolute paths."""
        return {
            "scene_sha256": _sha(self.scene_text),
            "layout_sha256": _sha(layout_to_text(self.layout)),
            "radar": dict(vars(self.radar)),
            "seed": self.seed,
            "noise_power": self.noise_power,
            "cfar": self.cfar.to_dict(),
            "clustering": dict(vars(self.clustering)),
            "ram": dict(vars(self.ram)),
            "overlay_window": self.overlay_window,
            "products": list(self.products),
            "density_edges": list(self.density_edges),
        }


def _products(value) -> tuple[str, ...]:
    items = value.split(",") if isinstance(value, str) else list(value or [])
    items = [s.strip() for s in items if s.strip()]
    for item in items:
        if item not in PRODUCTS:
            raise SchemaError(f"unknown product {item!r} (expected some of {', '.join(PRODUCTS)})", "products")
    return tuple(dict.fromkeys(items))


def load_run_config(path: str | Path, *, seed: int | None = None, output_dir: str | Path | None = None,
                    products=None) -> RunConfig:
    """Read a run config.

    ``scene`` and ``layout`` paths resolve against the config's directory;
    ``output_dir`` resolves against the working directory.
    """
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise SchemaError(f"cannot read config: {exc}", str(path)) from exc
    except yaml.YAMLError as exc:
        raise SchemaError(f"unparseable config: {exc}", str(path)) from exc
    if not isinstance(doc, dict):
        raise SchemaError("config must be a mapping", str(path))
    known = {"scene", "layout", "radar", "seed", "noise_power", "cfar", "clustering", "ram",
             "overlay_window", "output_dir", "products", "density_edges"}
    for key in doc:
        if key not in known:
            raise SchemaError("unknown key", key)
    base = path.parent

    if "scene" not in doc:
        raise SchemaError("missing required key", "scene")
    scene_path = base / doc["scene"]
    if not scene_path.is_file():
        raise SchemaError(f"file not found: {scene_path}", "scene")
    layout_ref = doc.get("layout", "default")
    if layout_ref == "default":
        layout = default_layout()
    else:
        layout_path = base / layout_ref
        if not layout_path.is_file():
            raise SchemaError(f"file not found: {layout_path}", "layout")
        layout = load_layout(layout_path.read_text())

    scene_text = scene_path.read_text()
    load_scene(scene_text)  # schema problems are config errors, not stage failures

    seed = doc.get("seed") if seed is None else seed
    if seed is None or isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise SchemaError("a non-negative integer seed is required", "seed")
    try:
        return RunConfig(
            scene_text=scene_text,
            layout=layout,
            radar=RadarParams.from_dict(doc.get("radar") or {}),
            seed=seed,
            noise_power=float(doc.get("noise_power", 0.0)),
            cfar=DetectionConfig.from_dict(doc.get("cfar") or {}),
            clustering=ClusteringConfig.from_dict(doc.get("clustering") or {}),
            ram=RamConfig.from_dict(doc.get("ram") or {}),
            overlay_window=int(doc.get("overlay_window", 1)),
            output_dir=Path(output_dir if output_dir is not None else doc.get("output_dir", "out")),
            products=_products(products if products is not None else doc.get("products", ["cloud", "clusters", "metrics"])),
            density_edges=tuple(float(e) for e in doc.get("density_edges", RunConfig.density_edges)),
            source={"config": str(path)},
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, MmpointError):
            raise
        raise SchemaError(str(exc), str(path)) from exc


# ------------------------------------------------------------------ running


class StageError(MmpointError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunResult:
    status: int
    manifest_path: Path
    manifest: dict

    @property
    def manifest_sha256(self) -> str:
        return sha256_file(self.manifest_path)


def max_workers() -> int:
    cap = os.environ.get("MMPOINT_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            log.warning("ignoring non-integer MMPOINT_THREADS=%r", cap)
    return n


@dataclass
class FrameResult:
    index: int
    cloud: PointCloud
    rdm_power: np.ndarray | None
    ram: object | None


def _process_frame(cfg: RunConfig, scene: Scene, array, f: int) -> FrameResult:
    states = sample_scene(scene, f * scene.frame_interval)
    cube = synthesize_echo(states, cfg.radar, array, cfg.noise_power, cfg.seed, frame_index=f)
    rdm = compute_rdm(cube, cfg.cfar.window)
    cloud = generate_point_cloud(cube, cfg.cfar, rdm)
    ram = None
    if "ram" in cfg.products:
        ram = compute_ram(cube, array, cfg.ram.mode, az_bins=cfg.ram.az_bins, max_angle_deg=cfg.ram.max_angle_deg,
                          window=cfg.cfar.window, pixel_pitch=cfg.ram.pixel_pitch)
    return FrameResult(f, cloud, rdm.power() if "rdm" in cfg.products else None, ram)


def roadside_ious(scene: Scene, x_axis, y_axis) -> list[dict]:
    """IoU of each roadside block's box against the hull of its scatterers, on the given grid."""
    out = []
    roadside = [s for s in scene.scatterers if s.label is Label.ROADSIDE]
    for i, t in enumerate(b for b in scene.targets if b["label"] == Label.ROADSIDE.value):
        (cx, cy, _), (ex, ey, _) = t["center"], t["extent"]
        box = Region2D.box(cx - ex / 2, cy - ey / 2, cx + ex / 2, cy + ey / 2)
        pts = np.array([s.position[:2] for s in roadside if box.contains(*s.position[:2])])
        try:
            derived = rasterize(Region2D.hull(pts), x_axis, y_axis)
            value = iou(rasterize(box, x_axis, y_axis), derived)
        except DomainError:
            value = None
        out.append({"block": i, "iou": value})
    return out


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except MmpointError as exc:
        raise StageError(name, exc) from exc
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def run_pipeline(cfg: RunConfig) -> RunResult:
    """Execute one run and write its products plus ``manifest.json`` into ``cfg.output_dir``.

    On failure every product written so far is removed and the manifest
    records the failing stage.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    manifest = {"version": __version__, "config": cfg.resolved(), "outputs": [], "status": "ok"}

    def emit(name: str, writer, *args):
        path = out / name
        writer(path, *args)
        written.append(path)
        if writer is write_pgm:
            written.append(path.with_name(path.name + ".json"))

    try:
        scene = _stage("scene", load_scene, cfg.scene_text)
        array = _stage("array", build_virtual_array, cfg.layout)
        wants = set(cfg.products)
        frames: list[FrameResult] = []
        if wants:
            with ThreadPoolExecutor(max_workers=max_workers()) as pool:
                jobs = [pool.submit(_stage, "frame", _process_frame, cfg, scene, array, f) for f in range(scene.n_frames)]
                frames = [j.result() for j in jobs]
        clouds = [fr.cloud for fr in frames]

        for fr in frames:
            if fr.rdm_power is not None:
                rdm_axes = compute_axes(cfg.radar)
                emit(f"rdm_{fr.index:04d}.pgm", write_pgm, np.sqrt(fr.rdm_power), rdm_axes)
            if fr.ram is not None:
                emit(f"ram_{fr.index:04d}.pgm", write_pgm, fr.ram.values,
                     {"range_m": fr.ram.range_axis, "azimuth_rad": fr.ram.azimuth_axis})
                c = fr.ram.cartesian
                emit(f"ram_xy_{fr.index:04d}.pgm", write_pgm, c.values, {"y_m": c.y_axis, "x_m": c.x_axis})
        if "cloud" in wants:
            emit("cloud.csv", write_cloud_csv, clouds)
        if "ply" in wants:
            emit("cloud.ply", write_ply, clouds)

        clusters = []
        if {"clusters", "metrics"} & wants and clouds:
            merged = _stage("overlay", overlay_frames, clouds, min(cfg.overlay_window, len(clouds)), scene.frame_interval)
            clusters = _stage("clustering", dynamic_dbscan, merged, cfg.clustering) if len(merged) else []
            if "clusters" in wants:
                emit("clusters.jsonl", write_jsonl, [c.to_dict() for c in clusters])

        if "metrics" in wants:
            report = _stage("metrics", build_metrics, cfg, scene, clouds, clusters, frames)
            emit("metrics.json", write_json, report)
    except StageError as exc:
        for p in written:
            p.unlink(missing_ok=True)
        manifest.update(status="failed", failed_stage=exc.stage, error=str(exc.cause))
        path = out / MANIFEST
        write_json(path, manifest)
        return RunResult(EXIT_STAGE, path, manifest)

    manifest["outputs"] = [{"path": p.name, "sha256": sha256_file(p)} for p in sorted(written)]
    path = out / MANIFEST
    write_json(path, manifest)
    return RunResult(EXIT_OK, path, manifest)


def compute_axes(radar: RadarParams) -> dict:
    return {"range_m": range_axis(radar), "velocity_mps": velocity_axis(radar)}


def build_metrics(cfg: RunConfig, scene: Scene, clouds, clusters, frames) -> dict:
    report = {
        "points_per_frame": [len(c) for c in clouds],
        "density_edges_m": list(cfg.density_edges),
        "density_per_frame": [density_profile(c, cfg.density_edges).tolist() for c in clouds],
        "n_clusters": len(clusters),
        "cluster_sizes": [c.size for c in clusters],
    }
    carto = next((fr.ram.cartesian for fr in frames if fr.ram is not None), None)
    if carto is not None:
        x_axis, y_axis = carto.x_axis, carto.y_axis
    else:
        pitch = cfg.ram.pixel_pitch
        r_max = cfg.radar.range_bin * (cfg.radar.n_samples - 1)
        x_axis = np.arange(-np.ceil(r_max / pitch), np.ceil(r_max / pitch) + 1) * pitch
        y_axis = np.arange(np.ceil(r_max / pitch) + 1) * pitch
    report["roadside_iou"] = roadside_ious(scene, x_axis, y_axis)
    return report


# --------------------------------------------------------------- mask review


def _load_mask(path: Path, grid_meta: dict) -> MaskGrid:
    values, meta = read_pgm(path)
    top = values.max(initial=0.0)
    norm = values / top if top > 0 else values
    axes = grid_meta.get("axes", {})
    if "x_m" not in axes or "y_m" not in axes:
        raise DomainError("reference RAM sidecar lacks Cartesian axes (x_m, y_m)")
    if list(norm.shape) != [len(axes["y_m"]), len(axes["x_m"])]:
        raise DomainError(f"mask {path} shape {norm.shape} does not match the RAM grid")
    return MaskGrid(np.clip(norm, 0.0, 1.0), axes["x_m"], axes["y_m"])


def _truth_regions(path: Path) -> list[tuple[str, Region2D]]:
    doc = yaml.safe_load(path.read_text())
    if not isinstance(doc, dict) or "regions" not in doc:
        raise SchemaError("truth region file needs a 'regions' list", str(path))
    out = []
    for i, r in enumerate(doc["regions"]):
        name = str(r.get("name", f"region_{i}"))
        if "box" in r:
            out.append((name, Region2D.box(*r["box"])))
        elif "corners" in r:
            out.append((name, Region2D(np.asarray(r["corners"], dtype=float))))
        else:
            raise SchemaError("region needs 'box' or 'corners'", f"regions[{i}]")
    return out


def evaluate_masks(ram_path: str | Path, pred_path: str | Path, truth_path: str | Path) -> dict:
    """IoU of a predicted mask against a truth mask (PGM) or truth regions (YAML).

    Both masks must sit on the Cartesian grid recorded in the RAM product's
    sidecar. With regions, each is scored inside its own bounding box and
    all of them together give the overall figure.
    """
    _, grid_meta = read_pgm(ram_path)
    pred = _load_mask(Path(pred_path), grid_meta)
    truth_path = Path(truth_path)
    report: dict = {"ram": Path(ram_path).name}
    if truth_path.suffix.lower() in (".yaml", ".yml", ".json"):
        regions = _truth_regions(truth_path)
        union = np.zeros(pred.values.shape)
        per = []
        for name, region in regions:
            t = rasterize(region, pred.x_axis, pred.y_axis)
            union = np.maximum(union, t.values)
            lo, hi = region.vertices.min(axis=0), region.vertices.max(axis=0)
            xs = (pred.x_axis >= lo[0]) & (pred.x_axis <= hi[0])
            ys = (pred.y_axis >= lo[1]) & (pred.y_axis <= hi[1])
            sub = np.ix_(ys, xs)
            score = iou(MaskGrid(pred.values[sub], pred.x_axis[xs], pred.y_axis[ys]),
                        MaskGrid(t.values[sub], t.x_axis[xs], t.y_axis[ys]))
            per.append({"name": name, "iou": score})
        report["regions"] = per
        report["overall_iou"] = iou(pred, MaskGrid(union, pred.x_axis, pred.y_axis))
    else:
        truth = _load_mask(truth_path, grid_meta)
        report["overall_iou"] = iou(pred, truth)
    return report
