"""``sarannot`` command-line front end.

Every command reads an optional ``--config`` file, applies ``--set``
overrides and its own flags (flags win), and writes its outputs atomically
into ``--out`` together with ``run_meta.json`` (config, config hash, seed,
input checksums, package versions).  Thread count and output directory are
deliberately kept out of the metadata so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import math
import platform
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__, parallel
from .cloud import PointClass, PointCloud, read_csv, write_csv
from .config import ConfigError, RunConfig
from .fileio import (atomic_write_text, read_image, read_label_raster, read_mask, read_unary,
                     unary_from_probabilities, write_json, write_mask_pgm, write_pgm)

log = logging.getLogger("sarannot")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:  # surfaced with the stage name by main()
        raise StageError(name, exc) from exc


class Run:
    """Per-invocation state shared by the command implementations."""

    def __init__(self, command: str, cfg: RunConfig, out: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []

    @property
    def seed(self):
        return self.cfg.get("run", "seed")

    def require_seed(self) -> int:
        seed = self.seed
        if seed is None:
            raise ConfigError("this step is stochastic and needs a seed (--seed N or run.seed)")
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
        return seed

    def io(self, key: str, required: bool = True):
        v = self.cfg.get("io", key)
        if required and v in (None, "", []):
            raise ConfigError(f"missing input io.{key}")
        return v

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def write_meta(self, extra: dict | None = None) -> None:
        import scipy

        meta = {
            "command": self.command,
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.hash(),
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
            "versions": {
                "sarannot": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
        }
        if extra:
            meta.update(extra)
        write_json(self.out / "run_meta.json", meta)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def check_inputs(run: Run, keys: list[str]) -> None:
    """Every referenced input path must exist before any work starts."""
    missing = []
    for key in keys:
        v = run.cfg.get("io", key)
        if v in (None, "", []):
            continue
        for p in (v if isinstance(v, list) else [v]):
            if not Path(p).is_file():
                missing.append(f"io.{key} = {p}")
            else:
                run.inputs[f"{key}:{p}"] = _sha256(p)
    if missing:
        raise FileNotFoundError("input file(s) not found: " + ", ".join(missing))


# ---------------------------------------------------------------------------
# shared builders
# ---------------------------------------------------------------------------

def _geometry_params(cfg: RunConfig) -> dict:
    g = cfg["geometry"]
    heading = np.asarray(g["heading"], dtype=np.float64)
    heading = heading / np.linalg.norm(heading)
    return dict(heading=(float(heading[0]), float(heading[1])), look_side=g["look_side"],
                incidence_deg=float(g["incidence_deg"]), altitude=float(g["altitude"]),
                az_spacing=float(g["az_spacing"]), rg_spacing=float(g["rg_spacing"]), margin=int(g["margin"]))


def frame_geometry(cfg: RunConfig, extent, ground: float, top: float):
    from .sargeom import SensorGeometry

    return SensorGeometry.framing(tuple(float(v) for v in extent), ground, top, **_geometry_params(cfg))


def load_geometry(run: Run, cloud: PointCloud):
    """Geometry from ``io.geometry`` (JSON), else framed around the cloud."""
    import json

    from .sargeom import SensorGeometry

    path = run.io("geometry", required=False)
    if path:
        return SensorGeometry.from_dict(json.loads(Path(path).read_text()))
    if len(cloud) == 0:
        raise ValueError("cannot frame a SAR geometry around an empty cloud without io.geometry")
    lo = cloud.xyz.min(axis=0)
    hi = cloud.xyz.max(axis=0)
    return frame_geometry(run.cfg, (lo[0], lo[1], hi[0], hi[1]), float(lo[2]), float(hi[2]))


def _mask_outputs(run: Run, cloud: PointCloud, g, stats: dict) -> None:
    from .label import dilate, rasterize_building_points

    lab = run.cfg["label"]
    with stage("rasterize"):
        raw = rasterize_building_points(cloud, g)
    with stage("dilate"):
        dense = dilate(raw, int(lab["dilation_radius"]), int(lab["dilation_iterations"]))
    with stage("write"):
        write_csv(run.path("labeled_cloud.csv"), cloud)
        write_mask_pgm(run.path("mask_raw.pgm"), raw.raster)
        write_mask_pgm(run.path("mask.pgm"), dense.raster)
        write_json(run.path("geometry.json"), g.to_dict())
        stats.update({
            "n_points": len(cloud),
            "n_building_points": raw.n_points,
            "n_out_of_frame": raw.n_out_of_frame,
            "mask_shape": list(raw.shape),
            "mask_pixels_raw": int(raw.raster.sum()),
            "mask_pixels": int(dense.raster.sum()),
        })
        write_json(run.path("label_stats.json"), stats)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _roof_height(props: dict, where: str) -> float:
    for key in ("roof_height", "height"):
        if key in props:
            return float(props[key])
    raise ValueError(f"{where} has no roof_height property")


def cmd_simulate(run: Run) -> None:
    from .label import analytic_roof_mask, footprints_to_geojson, read_footprints
    from .tomosim import (DEMO_EXTENT, BaselineSet, ElevationGrid, SceneSpec, demo_district,
                          generate_scene_cloud, reestimate_heights)

    cfg = run.cfg["tomosim"]
    with stage("config"):
        seed = run.require_seed()
        check_inputs(run, ["footprints"])
    ground = float(cfg["ground_height"])
    with stage("footprints"):
        path = run.io("footprints", required=False)
        if path:
            items = read_footprints(path)
            buildings = [(p, _roof_height(props, f"footprint {k}")) for k, (p, props) in enumerate(items)]
        else:
            buildings = demo_district(cfg["origin"], ground)
        if cfg["extent"] is not None:
            extent = tuple(float(v) for v in cfg["extent"])
        elif path:
            b = np.array([p.bounds for p, _ in buildings])
            extent = (b[:, 0].min() - 20, b[:, 1].min() - 20, b[:, 2].max() + 20, b[:, 3].max() + 20)
        else:
            o = cfg["origin"]
            extent = (DEMO_EXTENT[0] + o[0], DEMO_EXTENT[1] + o[1], DEMO_EXTENT[2] + o[0], DEMO_EXTENT[3] + o[1])
    with stage("scene"):
        spec = SceneSpec(buildings, extent, ground,
                         {"ground": float(cfg["density_ground"]), "roof": float(cfg["density_roof"]),
                          "facade": float(cfg["density_facade"])},
                         float(cfg["position_noise"]), float(cfg["outlier_fraction"]))
        cloud = generate_scene_cloud(spec, seed)
    top = max([h for _, h in buildings], default=ground)
    with stage("geometry"):
        g = frame_geometry(run.cfg, extent, ground, top)
    if cfg["reestimate"]:
        with stage("tomography"):
            bs = BaselineSet.uniform(int(cfg["n_baselines"]), (float(cfg["baseline_min"]), float(cfg["baseline_max"])),
                                     wavelength=float(cfg["wavelength"]), slant_range=float(cfg["slant_range"]))
            grid = ElevationGrid.uniform(float(cfg["grid_min"]), float(cfg["grid_max"]), int(cfg["grid_q"]))
            cloud = reestimate_heights(cloud, g, bs, grid, float(cfg["noise_sigma"]), seed + 1, ground)
    with stage("oracle"):
        oracle = analytic_roof_mask(buildings, g)
    with stage("write"):
        write_csv(run.path("cloud.csv"), cloud)
        props = [{"roof_height": h} for _, h in buildings]
        write_json(run.path("footprints.geojson"),
                   footprints_to_geojson([(p, pr) for (p, _), pr in zip(buildings, props)]))
        write_json(run.path("geometry.json"), g.to_dict())
        write_mask_pgm(run.path("roof_oracle.pgm"), oracle)
        counts = {PointClass(int(c)).name.lower(): int(n)
                  for c, n in zip(*np.unique(cloud.cls, return_counts=True))}
        write_json(run.path("simulate_stats.json"), {"n_points": len(cloud), "class_counts": counts,
                                                      "extent": list(extent), "n_buildings": len(buildings)})


def cmd_label(run: Run) -> None:
    from .label import classify_cloud, read_footprints

    with stage("config"):
        run.io("cloud")
        run.io("footprints")
        check_inputs(run, ["cloud", "footprints", "geometry"])
    with stage("read"):
        cloud = read_csv(run.io("cloud"))
        polys = [p for p, _ in read_footprints(run.io("footprints"))]
    with stage("geometry"):
        g = load_geometry(run, cloud)
    with stage("classify"):
        labeled = classify_cloud(cloud, polys)
    _mask_outputs(run, labeled, g, {"source": "footprints", "n_footprints": len(polys)})


def cmd_coregister(run: Run) -> None:
    from .coreg import GridNeighbors, coregister

    c = run.cfg["coreg"]
    with stage("config"):
        run.io("tomo_cloud")
        run.io("optical_cloud")
        check_inputs(run, ["tomo_cloud", "optical_cloud"])
    with stage("read"):
        tomo = read_csv(run.io("tomo_cloud"))
        optical = read_csv(run.io("optical_cloud"))
    with stage("coregister"):
        res = coregister(tomo, optical, float(c["cell_size"]), int(c["max_shift"]), float(c["z_bin"]),
                         float(c["facade_cell"]), float(c["facade_spread"]), int(c["facade_dilate"]),
                         int(c["max_iter"]), float(c["huber_delta"]), float(c["tol"]))
    with stage("residuals"):
        T = res.transform
        aligned = tomo.with_xyz(T.apply(tomo.xyz))
        dist, _ = GridNeighbors(optical.xyz).query(aligned.xyz)
        stats = {
            "rms": float(np.sqrt(np.mean(dist ** 2))),
            "mean": float(dist.mean()),
            "median": float(np.median(dist)),
            "p90": float(np.percentile(dist, 90)),
            "icp_rms": res.icp.rms,
            "icp_iterations": res.icp.iterations,
            "icp_converged": res.icp.converged,
            "icp_loss_history": res.icp.loss_history,
            "coarse_shift_cells": list(res.coarse_shift_cells),
            "coarse_score": res.coarse_score,
            "coarse_dz": res.coarse_dz,
            "n_source": res.n_source,
            "n_source_after_facade_removal": res.n_source_after_facade_removal,
        }
    with stage("write"):
        d = T.to_dict()
        d["rotation_angle_deg"] = math.degrees(T.rotation_angle())
        write_json(run.path("transform.json"), d)
        write_json(run.path("coreg_stats.json"), stats)
        write_csv(run.path("aligned_cloud.csv"), aligned)


def cmd_label_optical(run: Run) -> None:
    import json

    from .coreg import RigidTransform3, transfer_labels

    with stage("config"):
        run.io("cloud")
        run.io("label_raster")
        check_inputs(run, ["cloud", "label_raster", "georef", "transform", "geometry"])
    with stage("read"):
        cloud = read_csv(run.io("cloud"))
        raster, frame = read_label_raster(run.io("label_raster"), run.io("georef", required=False))
        tpath = run.io("transform", required=False)
        T = RigidTransform3.from_dict(json.loads(Path(tpath).read_text())) if tpath else None
    with stage("geometry"):
        g = load_geometry(run, cloud)
    with stage("transfer"):
        values = run.cfg.get("label", "building_values")
        if values is not None and not isinstance(values, list):
            values = [values]
        labeled = transfer_labels(raster, frame, cloud, T, values)
    n_unknown = int(np.sum(labeled.cls == PointClass.UNKNOWN))
    _mask_outputs(run, labeled, g, {"source": "optical", "n_unknown": n_unknown})


def _crf_params(cfg: RunConfig):
    from .densecrf import Kernel, PairwiseParams

    c = cfg["crf"]
    return PairwiseParams((Kernel.spatial(float(c["w_spatial"]), float(c["theta_gamma"])),
                           Kernel.bilateral(float(c["w_bilateral"]), float(c["theta_alpha"]),
                                            float(c["theta_beta"]))))


def scale_intensity(image: np.ndarray, mode: str) -> np.ndarray:
    """Bilateral feature: ``log`` gives 20*log10(1 + v), ``linear`` the raw value."""
    v = np.asarray(image, dtype=np.float64)
    if mode == "log":
        return 20.0 * np.log10(1.0 + v)
    if mode == "linear":
        return v
    raise ValueError(f"crf.intensity_scale must be 'log' or 'linear', got {mode!r}")


def cmd_crf_refine(run: Run) -> None:
    from .densecrf import map_labeling, mean_field_infer

    c = run.cfg["crf"]
    with stage("config"):
        if not run.io("unary", required=False) and not run.io("prob", required=False):
            raise ConfigError("crf-refine needs io.unary or io.prob")
        check_inputs(run, ["unary", "prob", "intensity"])
        window = c["window"]
        if window == "exact":
            window = None
        elif window == "auto":
            window = -1
        elif not isinstance(window, int) or window < 0:
            raise ConfigError(f"crf.window must be 'exact', 'auto', or a radius >= 0, got {window!r}")
        pw = _crf_params(run.cfg)
    with stage("read"):
        if run.io("unary", required=False):
            unary = read_unary(run.io("unary"))
        else:
            probs = run.io("prob")
            probs = probs if isinstance(probs, list) else [probs]
            unary = unary_from_probabilities([read_image(p) for p in probs])
        ipath = run.io("intensity", required=False)
        image = scale_intensity(read_image(ipath), c["intensity_scale"]) if ipath else None
    with stage("infer"):
        Q = mean_field_infer(unary, pw, image, int(c["iterations"]), window=window)
        labels = map_labeling(Q)
        before = np.argmin(unary, axis=-1)
    with stage("write"):
        if unary.shape[2] == 2:
            write_mask_pgm(run.path("refined_mask.pgm"), labels)
            write_pgm(run.path("refined_prob.pgm"), np.round(255.0 * Q[..., 1]).astype(np.uint8))
        else:
            write_pgm(run.path("refined_labels.pgm"), labels.astype(np.uint8))
        write_json(run.path("crf_stats.json"), {
            "shape": list(unary.shape),
            "iterations": int(c["iterations"]),
            "window": window,
            "changed_pixels": int(np.sum(labels != before)),
        })


def _parse_counts(v) -> dict:
    vals = v if isinstance(v, list) else [int(t) for t in str(v).split(",")]
    if len(vals) != 4:
        raise ValueError("counts must be tp,fp,fn,tn")
    return dict(zip(("tp", "fp", "fn", "tn"), (int(x) for x in vals)))


def cmd_evaluate(run: Run) -> None:
    from .metrics import ConfusionMatrix, confusion, format_report, full_report, per_image_mean

    with stage("config"):
        counts = run.io("counts", required=False)
        if counts is None:
            preds, refs = run.io("pred"), run.io("ref")
            preds = preds if isinstance(preds, list) else [preds]
            refs = refs if isinstance(refs, list) else [refs]
            if len(preds) != len(refs):
                raise ConfigError(f"{len(preds)} prediction masks but {len(refs)} reference masks")
            check_inputs(run, ["pred", "ref"])
    with stage("confusion"):
        if counts is not None:
            cms = [ConfusionMatrix.from_binary_counts(**_parse_counts(counts))]
        else:
            cms = [confusion(read_mask(p), read_mask(r), 2) for p, r in zip(preds, refs)]
        total = cms[0]
        for cm in cms[1:]:
            total = total + cm
    with stage("metrics"):
        report = full_report(total)
    with stage("write"):
        write_json(run.path("metrics.json"), report)
        atomic_write_text(run.path("metrics.txt"), format_report(report))
        if len(cms) > 1:
            write_json(run.path("per_image_mean.json"), per_image_mean(cms))


def cmd_patchify(run: Run) -> None:
    from .dataprep import PatchSpec, augment, extract_patches, patch_filename, split_train_test

    d = run.cfg["dataprep"]
    with stage("config"):
        images, masks = run.io("images"), run.io("masks")
        images = images if isinstance(images, list) else [images]
        masks = masks if isinstance(masks, list) else [masks]
        if len(images) != len(masks):
            raise ConfigError(f"{len(images)} images but {len(masks)} masks")
        check_inputs(run, ["images", "masks"])
        ids = [Path(p).stem for p in images]
        if len(set(ids)) != len(ids):
            raise ConfigError("image file names must be unique (they become tile ids)")
        spec = PatchSpec(int(d["size"]), int(d["overlap"]))
        ops = d["augment"] if isinstance(d["augment"], list) else [d["augment"]]
        explicit = d["train"] is not None or d["test"] is not None
        seed = 0 if explicit else run.require_seed()
    with stage("split"):
        as_list = lambda v: None if v is None else [str(x) for x in (v if isinstance(v, list) else [v])]
        train, test = split_train_test(ids, None if explicit else float(d["split_ratio"]),
                                       as_list(d["train"]), as_list(d["test"]), seed)
    manifest = ["source,row,col,aug,image,mask"]
    with stage("patchify"):
        for tile, ipath, mpath in zip(ids, images, masks):
            image = read_image(ipath)
            mask = read_mask(mpath)
            for patch in extract_patches(image, mask, spec, source=tile):
                for p in augment(patch, ops):
                    name = patch_filename(p)
                    img_rel = f"{tile}/{name}.img.pgm"
                    msk_rel = f"{tile}/{name}.mask.pgm"
                    write_pgm(run.path(img_rel), p.image)
                    write_mask_pgm(run.path(msk_rel), p.mask)
                    manifest.append(f"{tile},{p.row},{p.col},{p.aug},{img_rel},{msk_rel}")
    with stage("write"):
        atomic_write_text(run.path("manifest.csv"), "\n".join(manifest) + "\n")
        write_json(run.path("split.json"), {"train": train, "test": test})
    run.extra_meta = {"preprocessing": "input images are taken as already speckle-filtered"}


COMMANDS = {
    "simulate": (cmd_simulate, "synthetic TomoSAR-like cloud with truth classes",
                 [("--footprints", "footprints", "GeoJSON footprints with roof_height (default: demo district)")]),
    "label": (cmd_label, "footprint labeling and SAR building mask",
              [("--cloud", "cloud", "point cloud CSV"), ("--footprints", "footprints", "GeoJSON footprints"),
               ("--geometry", "geometry", "SensorGeometry JSON (default: framed around the cloud)")]),
    "coregister": (cmd_coregister, "align a TomoSAR cloud to an optical cloud",
                   [("--tomo", "tomo_cloud", "TomoSAR cloud CSV"), ("--optical", "optical_cloud", "optical cloud CSV")]),
    "label-optical": (cmd_label_optical, "label a cloud from a georeferenced optical class raster",
                      [("--cloud", "cloud", "point cloud CSV"),
                       ("--label-raster", "label_raster", "PGM/PNG class raster"),
                       ("--georef", "georef", "georeference sidecar (default: <raster>.georef)"),
                       ("--transform", "transform", "transform JSON from coregister (default: identity)"),
                       ("--geometry", "geometry", "SensorGeometry JSON")]),
    "crf-refine": (cmd_crf_refine, "dense-CRF refinement of per-pixel scores",
                   [("--unary", "unary", "binary unary file"),
                    ("--prob", "prob", "probability PGM (repeatable; one image = P(building))"),
                    ("--intensity", "intensity", "intensity PGM for the bilateral kernel")]),
    "evaluate": (cmd_evaluate, "segmentation metrics",
                 [("--pred", "pred", "predicted mask (repeatable)"), ("--ref", "ref", "reference mask (repeatable)"),
                  ("--counts", "counts", "counts-only mode: tp,fp,fn,tn")]),
    "patchify": (cmd_patchify, "overlapping patches, augmentation, and split",
                 [("--image", "images", "image PGM/PNG (repeatable)"), ("--mask", "masks", "mask PGM/PNG (repeatable)")]),
}

_REPEATABLE = {"prob", "pred", "ref", "images", "masks"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sarannot", description="Automatic SAR building annotation pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text, flags) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="config file (section.key = value lines)")
        p.add_argument("--seed", type=int, help="random seed (overrides run.seed)")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config entry (repeatable)")
        p.add_argument("-v", "--verbose", action="store_true")
        for flag, key, h in flags:
            p.add_argument(flag, dest=f"io_{key}", action="append" if key in _REPEATABLE else "store", help=h)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg.override(args.set)
    for k, v in vars(args).items():
        if k.startswith("io_") and v is not None:
            cfg.set("io", k[3:], v if not isinstance(v, list) or len(v) > 1 else v[0])
    if args.seed is not None:
        cfg.set("run", "seed", args.seed)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    fn = COMMANDS[args.command][0]
    try:
        with stage("config"):
            cfg = resolve_config(args)
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
        run = Run(args.command, cfg, Path(args.out))
        run.extra_meta = None
        with parallel.threads(args.threads):
            fn(run)
        with stage("write"):
            run.write_meta(run.extra_meta)
    except StageError as exc:
        print(f"sarannot {args.command}: failed in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
