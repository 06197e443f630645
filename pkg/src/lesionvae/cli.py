"""Command-line entry point orchestrating the full pipeline.

Every subcommand resolves its parameters from built-in defaults, an optional
JSON config file and explicit flags (flags win), validates them fully, and
only then writes artifacts into the run directory together with a config
snapshot (``config.json``) and a metadata record (``meta.json``).  Rerunning
a subcommand from its snapshot reproduces all numeric outputs exactly.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Sequence

import numpy as np
import torch

from . import __version__, ltf
from .checkpoint import load_mlp, load_vae, save_mlp, save_vae
from .cluster import (
    BACKEND,
    ClusterReport,
    averaged_statistics,
    classix,
    density_grid_search,
    elbow,
    find_direction,
    interpolate,
    kmeans,
    traverse,
)
from .cluster.stats import STATISTIC_KEYS, cluster_statistics
from .imaging import image_grid, save_frames, save_png
from .losses import LossConfig
from .metrics import reconstruction_report
from .nets import MlpConfig, VaeConfig
from .phantom import generate_dataset
from .pipeline import HuWindow, kfold_split, load_rois, preprocess_manifest, save_rois
from .priors import PriorConfig
from .training import (
    SearchSpace,
    SliceDataset,
    em_optimize,
    extract_latents,
    reconstruct_images,
    search_mlp,
    search_vae,
    train_mlp,
    train_vae,
)

OUT_ROOT_ENV = "LESIONVAE_OUT_ROOT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class ConfigError(Exception):
    """Invalid configuration; nothing has been written."""


# ---------------------------------------------------------------------------
# Parameter schemas


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("true", "1", "yes"):
        return True
    if value in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Param:
    name: str
    type: Callable
    default: object = None
    help: str = ""
    choices: tuple | None = None
    required: bool = False

    @property
    def flag(self) -> str:
        return "--" + self.name.rstrip("_").replace("_", "-")


_VAE_KNOBS = [
    Param("prior", str, "gaussian", "latent prior", choices=("gaussian", "dirichlet")),
    Param("base", int, 16, "channel multiplier / loss scale"),
    Param("latent_size", int, 32, "latent dimensionality"),
    Param("lambda_", float, 0.5, "L1 vs SSIM mix in [0, 1]"),
    Param("psi", int, 1, "L1 multiplier", choices=(1, 2, 3)),
    Param("gamma_mode", str, "one", "SSIM weight mode", choices=("off", "one", "batch")),
    Param("beta", float, 1.0, "KLD weight before normalisation"),
    Param("anneal", _parse_bool, False, "linear KLD annealing"),
    Param("ssim_variant", str, "ssim", "reconstruction similarity", choices=("ssim", "ms_ssim")),
    Param("learning_rate", float, 1e-3, "Adam learning rate"),
    Param("batch_size", int, 32, "training batch size"),
    Param("target_alpha", float, 0.9, "Dirichlet prior concentration per coordinate"),
]

SCHEMAS: Dict[str, List[Param]] = {
    "phantom-gen": [
        Param("patients", int, 8, "number of synthetic patients"),
        Param("slices_per_patient", int, 4, "slices per patient"),
        Param("balance", float, 0.5, "malignant patient fraction"),
        Param("pixel_spacing_mm", float, 0.7, "pixel spacing written to the manifest"),
    ],
    "preprocess": [
        Param("manifest", str, required=True, help="line-delimited JSON manifest"),
        Param("window", str, "-1000,400", "HU window as LOWER,UPPER"),
    ],
    "train": [
        Param("rois", str, required=True, help="preprocessed ROI directory"),
        Param("epochs", int, 50, "training epochs"),
        Param("split", str, "train", "train on the first fold's train split or all slices",
              choices=("train", "all")),
        *_VAE_KNOBS,
    ],
    "search": [
        Param("rois", str, required=True, help="preprocessed ROI directory"),
        Param("kind", str, "vae", "which model family to search", choices=("vae", "mlp")),
        Param("budget", int, 8, "number of sampled candidates"),
        Param("prior", str, "gaussian", "latent prior for VAE search",
              choices=("gaussian", "dirichlet")),
        Param("epochs", int, 4, "epochs per VAE candidate"),
        Param("mlp_epochs", int, 40, "epochs per MLP candidate"),
        Param("vae", str, None, "VAE checkpoint supplying latents (kind=mlp)"),
    ],
    "em": [
        Param("rois", str, required=True, help="preprocessed ROI directory"),
        Param("rounds", int, 3, "maximum EM rounds after round 0"),
        Param("init_epochs", int, 30, "round-0 VAE epochs"),
        Param("round_epochs", int, 10, "VAE epochs per later round"),
        Param("mlp_budget", int, 4, "MLP search budget per round"),
        Param("mlp_epochs", int, 30, "epochs per MLP candidate"),
        Param("bce_weight", float, 1.0, "classifier loss weight in rounds >= 1"),
        *_VAE_KNOBS,
    ],
    "evaluate": [
        Param("rois", str, required=True, help="preprocessed ROI directory"),
        Param("vae", str, required=True, help="VAE checkpoint"),
        Param("mlp", str, None, "MLP checkpoint supplying the classifier config"),
        Param("folds", int, 5, "cross-validation folds"),
        Param("mlp_epochs", int, 60, "epochs per fold model"),
        Param("mlp_lr", float, 1e-3, "fold-model learning rate"),
        Param("mlp_batch_size", int, 32, "fold-model batch size"),
        Param("tau", float, 0.5, "decision threshold when no MLP checkpoint given"),
    ],
    "cluster": [
        Param("rois", str, required=True, help="preprocessed ROI directory"),
        Param("vae", str, required=True, help="VAE checkpoint"),
        Param("method", str, "kmeans", "clustering method", choices=("kmeans", "classix")),
        Param("k", int, 10, "number of K-Means clusters"),
        Param("runs", int, 50, "K-Means restarts"),
        Param("radius", float, 0.5, "aggregation radius"),
        Param("min_group_size", int, 1, "dissolve smaller groups"),
        Param("grid", str, None, "comma-separated radius grid (classix search)"),
        Param("elbow", str, None, "k range LO:HI for an elbow curve instead"),
    ],
    "direction": [
        Param("rois", str, required=True, help="preprocessed ROI directory"),
        Param("vae", str, required=True, help="VAE checkpoint"),
        Param("filter_a", str, required=True, help="predicate for the with-feature group"),
        Param("filter_b", str, required=True, help="predicate for the without-feature group"),
        Param("name", str, "direction", "direction name"),
    ],
    "traverse": [
        Param("rois", str, required=True, help="preprocessed ROI directory"),
        Param("vae", str, required=True, help="VAE checkpoint"),
        Param("slice", str, required=True, help="slice id of the base latent"),
        Param("direction", str, None, "direction .ltf file (direction mode)"),
        Param("steps", str, "0,0.5,1,1.5", "comma-separated multipliers"),
        Param("interpolate_to", str, None, "target slice id (interpolation mode)"),
        Param("frames", int, 8, "frame count for interpolation"),
        Param("n_cols", int, 8, "grid columns"),
    ],
    "report": [
        Param("evaluate_runs", str, None, "comma-separated evaluate run directories"),
        Param("cluster_runs", str, None, "comma-separated cluster run directories"),
        Param("labels", str, None, "comma-separated model labels"),
    ],
}

_COMMON = [
    Param("seed", int, 0, "global seed"),
    Param("out", str, None, f"run directory (default ${OUT_ROOT_ENV}/<command>)"),
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lesionvae",
        description="CT lesion patch VAE pipeline: preprocessing, training, "
        "EM co-training, latent clustering and traversals.",
    )
    parser.add_argument("--version", action="version", version=f"lesionvae {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, schema in SCHEMAS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="JSON config file (flags override)")
        for param in schema + _COMMON:
            kwargs = {"dest": param.name, "default": None, "help": param.help}
            if param.choices and param.type in (str, int):
                kwargs["choices"] = param.choices
            if param.type is not _parse_bool:
                kwargs["type"] = param.type
            p.add_argument(param.flag, **kwargs)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    command = args.command
    schema = SCHEMAS[command] + _COMMON
    known = {p.name for p in schema}
    file_cfg: dict = {}
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            file_cfg = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file is not valid JSON: {err}") from err
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        if file_cfg.get("command", command) != command:
            raise ConfigError(
                f"config is for {file_cfg['command']!r}, not {command!r}"
            )
        for key in file_cfg:
            if key != "command" and key not in known:
                raise ConfigError(f"unknown config key {key!r} for {command}")

    cfg: dict = {"command": command}
    for param in schema:
        value = getattr(args, param.name)
        if value is None and param.name in file_cfg:
            value = file_cfg[param.name]
        if value is None:
            value = param.default
        if value is None:
            if param.required:
                raise ConfigError(f"missing required option {param.flag}")
            cfg[param.name] = None
            continue
        try:
            value = param.type(value)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"bad value for {param.flag}: {err}") from err
        if param.choices is not None and value not in param.choices:
            raise ConfigError(
                f"{param.flag} must be one of {param.choices}, got {value!r}"
            )
        cfg[param.name] = value
    return cfg


# ---------------------------------------------------------------------------
# Shared pieces


def _require_file(cfg: dict, key: str) -> Path:
    path = Path(cfg[key])
    if not path.is_file():
        raise ConfigError(f"--{key.replace('_', '-')} file not found: {path}")
    return path


def _require_rois(cfg: dict) -> Path:
    path = Path(cfg["rois"])
    if not (path / "index.json").is_file():
        raise ConfigError(f"--rois has no index.json: {path}")
    return path


def _vae_configs(cfg: dict):
    """Build (VaeConfig, LossConfig, lr) from resolved CLI parameters."""
    gamma = {"off": 0, "one": 1, "batch": cfg["batch_size"]}[cfg["gamma_mode"]]
    try:
        prior = PriorConfig(kind=cfg["prior"], target_alpha=cfg["target_alpha"])
        vae_cfg = VaeConfig(
            base=cfg["base"], latent_size=cfg["latent_size"], prior=prior
        )
        loss_cfg = LossConfig(
            lambda_=cfg["lambda_"],
            psi=cfg["psi"],
            gamma=gamma,
            beta=cfg["beta"],
            anneal=cfg["anneal"],
            ssim_variant=cfg["ssim_variant"],
            base=cfg["base"],
            batch_size=cfg["batch_size"],
            latent_size=cfg["latent_size"],
            image_size=vae_cfg.input_size ** 2,
        )
    except ValueError as err:
        raise ConfigError(str(err)) from err
    if cfg["learning_rate"] <= 0:
        raise ConfigError(f"--learning-rate must be > 0, got {cfg['learning_rate']}")
    if cfg["epochs" if "epochs" in cfg else "init_epochs"] < 1:
        raise ConfigError("epoch count must be >= 1")
    return vae_cfg, loss_cfg, cfg["learning_rate"]


def _parse_floats(text: str, flag: str) -> List[float]:
    try:
        values = [float(tok) for tok in str(text).split(",") if tok.strip() != ""]
    except ValueError as err:
        raise ConfigError(f"{flag} must be comma-separated numbers: {err}") from err
    if not values:
        raise ConfigError(f"{flag} is empty")
    return values


def _parse_k_range(text: str) -> List[int]:
    match = re.fullmatch(r"\s*(\d+)\s*:\s*(\d+)\s*", str(text))
    if not match:
        raise ConfigError(f"--elbow must look like LO:HI, got {text!r}")
    lo, hi = int(match.group(1)), int(match.group(2))
    if lo < 1 or hi < lo:
        raise ConfigError(f"--elbow range invalid: {lo}:{hi}")
    return list(range(lo, hi + 1))


_FILTER_RE = re.compile(r"\s*([a-z_]+)\s*(<=|>=|!=|=|<|>)\s*(.+?)\s*$")
_NUMERIC_FIELDS = ("mask_px", "area_q")
_STRING_FIELDS = ("label", "patient_id", "slice_id")


def parse_filter(expr: str) -> Callable[[dict], bool]:
    """Compile 'field OP value' clauses joined by '&' into a predicate.

    Numeric fields: mask_px (mask pixel count), area_q (its quantile rank in
    [0, 1]).  String fields (label, patient_id, slice_id) allow = and != only.
    """
    clauses = []
    for raw in str(expr).split("&"):
        match = _FILTER_RE.fullmatch(raw)
        if not match:
            raise ConfigError(f"bad filter clause {raw.strip()!r}")
        field, op, value = match.group(1), match.group(2), match.group(3)
        if field in _NUMERIC_FIELDS:
            try:
                target = float(value)
            except ValueError as err:
                raise ConfigError(f"filter {field} needs a number: {value!r}") from err
            ops = {
                "=": lambda a, b: a == b, "!=": lambda a, b: a != b,
                "<": lambda a, b: a < b, "<=": lambda a, b: a <= b,
                ">": lambda a, b: a > b, ">=": lambda a, b: a >= b,
            }
            clauses.append((field, ops[op], target))
        elif field in _STRING_FIELDS:
            if op not in ("=", "!="):
                raise ConfigError(f"filter {field} only supports = and !=")
            ops = {"=": lambda a, b: a == b, "!=": lambda a, b: a != b}
            clauses.append((field, ops[op], value))
        else:
            raise ConfigError(
                f"unknown filter field {field!r}; "
                f"use one of {_NUMERIC_FIELDS + _STRING_FIELDS}"
            )

    def predicate(record: dict) -> bool:
        return all(op(record[field], target) for field, op, target in clauses)

    return predicate


def _slice_records(rois) -> List[dict]:
    areas = np.array([r.mask_pixel_count for r in rois], dtype=np.float64)
    sorted_areas = np.sort(areas)
    n = areas.size
    return [
        {
            "label": r.label,
            "patient_id": r.patient_id,
            "slice_id": r.slice_id,
            "mask_px": float(r.mask_pixel_count),
            # fraction of slices with mask area <= this one
            "area_q": float(np.searchsorted(sorted_areas, areas[i], side="right") / n),
        }
        for i, r in enumerate(rois)
    ]


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _snapshot(cfg: dict, out: Path) -> None:
    snapshot = {k: v for k, v in cfg.items() if k != "out"}
    text = json.dumps(snapshot, indent=1, sort_keys=True)
    (out / "config.json").write_text(text)
    meta = {
        "command": cfg["command"],
        "config_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "seed": cfg.get("seed"),
        "versions": {
            "lesionvae": __version__,
            "numpy": np.__version__,
            "torch": torch.__version__,
        },
        "cluster_backend": BACKEND,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def _out_dir(cfg: dict) -> Path:
    if cfg.get("out"):
        return Path(cfg["out"])
    root = Path(os.environ.get(OUT_ROOT_ENV, "runs"))
    return root / cfg["command"]


def _load_dataset(cfg: dict) -> SliceDataset:
    return SliceDataset.from_rois(load_rois(_require_rois(cfg)))


def _write_report(out: Path, report: ClusterReport, rois, extra_rows=()) -> None:
    by_slice = {r.slice_id: r for r in rois}
    _write_csv(
        out / "assignments.csv",
        ("slice_id", "patient_id", "label", "cluster"),
        [
            (sid, by_slice[sid].patient_id, by_slice[sid].label, cid)
            for sid, cid in report.assignments.items()
        ],
    )
    stat_rows = [(key, report.statistics[key]) for key in STATISTIC_KEYS]
    stat_rows.append(("n_clusters", report.k))
    stat_rows.extend(extra_rows)
    _write_csv(out / "statistics.csv", ("statistic", "value"), stat_rows)
    hist_rows = [
        (cid, label, count)
        for cid in sorted(report.histograms)
        for label, count in sorted(report.histograms[cid].items())
    ]
    _write_csv(out / "histogram.csv", ("cluster", "label", "count"), hist_rows)


# ---------------------------------------------------------------------------
# Command implementations.  Each returns extra validation work via closures:
# `prepare` runs before anything is written, `execute` performs the run.


def _cmd_phantom_gen(cfg: dict, out: Path) -> None:
    generate_dataset(
        n_patients=cfg["patients"],
        slices_per_patient=cfg["slices_per_patient"],
        class_balance=cfg["balance"],
        seed=cfg["seed"],
        out_dir=out,
        pixel_spacing_mm=cfg["pixel_spacing_mm"],
    )


def _cmd_preprocess(cfg: dict, out: Path) -> None:
    window = cfg["_window"]
    rois, report = preprocess_manifest(cfg["_manifest"], window=window)
    if not rois:
        raise RuntimeError("no slices survived preprocessing")
    save_rois(rois, out / "rois")
    _write_csv(
        out / "exclusions.csv",
        ("reason", "count"),
        sorted(report["excluded"].items()),
    )
    _write_csv(
        out / "summary.csv",
        ("kept", "excluded", "total"),
        [(report["kept"], sum(report["excluded"].values()), report["total"])],
    )


def _cmd_train(cfg: dict, out: Path) -> None:
    data = _load_dataset(cfg)
    vae_cfg, loss_cfg, lr = cfg["_models"]
    folds = kfold_split(range(len(data)), k=5, seed=cfg["seed"])
    train_idx, val_idx, test_idx = folds[0]
    images = data.images if cfg["split"] == "all" else data.images[train_idx]
    model, history = train_vae(
        images, vae_cfg, loss_cfg, cfg["epochs"], cfg["seed"], lr=lr
    )
    save_vae(out / "vae.ckpt", model, meta={"seed": cfg["seed"]})
    _write_csv(
        out / "curves.csv",
        ("epoch", "l1", "ssim", "kld", "bce", "total", "annealing"),
        [
            (h["epoch"], h["l1"], h["ssim"], h["kld"], h["bce"], h["total"], h["annealing"])
            for h in history
        ],
    )
    splits = {
        "train": [data.slice_ids[i] for i in train_idx],
        "val": [data.slice_ids[i] for i in val_idx],
        "test": [data.slice_ids[i] for i in test_idx],
    }
    (out / "splits.json").write_text(json.dumps(splits, indent=1))
    eval_idx = val_idx if cfg["split"] == "train" else np.arange(len(data))
    recon = reconstruct_images(model, data.images[eval_idx])
    report = reconstruction_report(data.images[eval_idx], recon)
    _write_csv(
        out / "recon.csv",
        ("split", "ssim_mean", "mse", "mae"),
        [("val" if cfg["split"] == "train" else "all",
          report["ssim_mean"], report["mse"], report["mae"])],
    )


def _cmd_search(cfg: dict, out: Path) -> None:
    data = _load_dataset(cfg)
    space = SearchSpace()
    if cfg["kind"] == "vae":
        ranked = search_vae(
            data, space, cfg["budget"], cfg["seed"],
            prior_kind=cfg["prior"], epochs=cfg["epochs"],
        )
    else:
        latents = extract_latents(cfg["_vae_model"], data.images)
        folds = kfold_split(range(len(data)), k=5, seed=cfg["seed"])
        _, _, ranked = search_mlp(
            latents, data.labels, [folds[0]], space, cfg["budget"], cfg["seed"],
            epochs=cfg["mlp_epochs"],
        )
    _write_csv(
        out / "ranked.csv",
        ("rank", "index", "objective", "params"),
        [
            (rank, c.index, c.objective, json.dumps(c.params, sort_keys=True))
            for rank, c in enumerate(ranked)
        ],
    )


def _cmd_em(cfg: dict, out: Path) -> None:
    data = _load_dataset(cfg)
    vae_cfg, loss_cfg, lr = cfg["_models"]
    state = em_optimize(
        data, vae_cfg, loss_cfg, SearchSpace(),
        max_rounds=cfg["rounds"], seed=cfg["seed"], lr=lr,
        init_epochs=cfg["init_epochs"], round_epochs=cfg["round_epochs"],
        mlp_budget=cfg["mlp_budget"], mlp_epochs=cfg["mlp_epochs"],
        bce_weight=cfg["bce_weight"],
    )
    state.audit.check()
    save_vae(out / "vae.ckpt", state.vae, meta={"seed": cfg["seed"], "round": state.round})
    save_mlp(out / "mlp.ckpt", state.mlp, input_size=vae_cfg.latent_size,
             meta={"seed": cfg["seed"], "round": state.round})
    _write_csv(
        out / "history.csv",
        ("round", "val_auc", "improvement", "accepted", "bce_weight"),
        [
            (h["round"], h["val_auc"], h["improvement"], h["accepted"], h["bce_weight"])
            for h in state.history
        ],
    )
    summary = {
        "best_round": state.round,
        "best_val_auc": state.best_val_auc,
        "mlp_params": state.mlp_params,
        "audit_events": state.audit.events,
    }
    (out / "em.json").write_text(json.dumps(summary, indent=1, sort_keys=True))


def _cmd_evaluate(cfg: dict, out: Path) -> None:
    data = _load_dataset(cfg)
    vae, _ = load_vae(cfg["_vae_path"])
    latents = extract_latents(vae, data.images)
    if cfg["mlp"] is not None:
        mlp_model, _ = load_mlp(cfg["_mlp_path"])
        mlp_cfg = mlp_model.cfg
    else:
        mlp_cfg = MlpConfig(tau=cfg["tau"])
    folds = kfold_split(range(len(data)), k=cfg["folds"], seed=cfg["seed"])
    results = train_mlp(
        latents, data.labels, mlp_cfg, folds,
        lr=cfg["mlp_lr"], batch_size=cfg["mlp_batch_size"],
        epochs=cfg["mlp_epochs"], seed=cfg["seed"],
    )
    metric_keys = ("auc", "accuracy", "precision", "recall", "specificity", "f1")
    rows = [
        (f, *[r[k] for k in metric_keys]) for f, r in enumerate(results["folds"])
    ]
    rows.append(("mean", *[results["mean"][k] for k in metric_keys]))
    rows.append(("std", *[results["std"][k] for k in metric_keys]))
    _write_csv(out / "metrics.csv", ("fold", *metric_keys), rows)

    train_idx, val_idx, test_idx = folds[0]
    recon_rows = []
    for split, idx in (
        ("all", np.arange(len(data))),
        ("train", train_idx),
        ("val", val_idx),
        ("test", test_idx),
    ):
        recon = reconstruct_images(vae, data.images[idx])
        report = reconstruction_report(data.images[idx], recon)
        recon_rows.append((split, report["ssim_mean"], report["mse"], report["mae"]))
    _write_csv(out / "recon.csv", ("split", "ssim_mean", "mse", "mae"), recon_rows)
    ltf.write(out / "latents.ltf", latents.astype(np.float32))


def _cmd_cluster(cfg: dict, out: Path) -> None:
    rois = load_rois(_require_rois(cfg))
    data = SliceDataset.from_rois(rois)
    vae, _ = load_vae(cfg["_vae_path"])
    latents = extract_latents(vae, data.images)
    labels = [r.label for r in rois]
    if cfg["elbow"] is not None:
        curve = elbow(latents, cfg["_k_range"], seed=cfg["seed"])
        _write_csv(out / "elbow.csv", ("k", "inertia"),
                   [(int(k), inertia) for k, inertia in curve])
        return
    if cfg["method"] == "kmeans":
        result = kmeans(latents, cfg["k"], runs=cfg["runs"], seed=cfg["seed"])
        stats = averaged_statistics(result.run_labels, data.patient_ids, labels)
        report = ClusterReport.from_arrays(
            data.slice_ids, result.labels, data.patient_ids, labels, statistics=stats
        )
        _write_report(out, report, rois, extra_rows=[("best_inertia", result.inertia)])
    elif cfg["grid"] is not None:
        best_radius, report = density_grid_search(
            latents, labels, cfg["_grid"],
            min_group_size=cfg["min_group_size"], patient_ids=data.patient_ids,
        )
        # grid-search report keys slices by position; rebuild with slice ids
        assignments = np.array(list(report.assignments.values()))
        report = ClusterReport.from_arrays(
            data.slice_ids, assignments, data.patient_ids, labels,
            statistics=report.statistics,
        )
        _write_report(out, report, rois, extra_rows=[("best_radius", best_radius)])
    else:
        result = classix(latents, cfg["radius"], cfg["min_group_size"])
        stats = cluster_statistics(result.labels, data.patient_ids, labels)
        report = ClusterReport.from_arrays(
            data.slice_ids, result.labels, data.patient_ids, labels, statistics=stats
        )
        _write_report(out, report, rois, extra_rows=[("radius", cfg["radius"])])


def _cmd_direction(cfg: dict, out: Path) -> None:
    rois = load_rois(_require_rois(cfg))
    data = SliceDataset.from_rois(rois)
    vae, _ = load_vae(cfg["_vae_path"])
    latents = extract_latents(vae, data.images)
    records = _slice_records(rois)
    mask_a = np.array([cfg["_pred_a"](rec) for rec in records])
    mask_b = np.array([cfg["_pred_b"](rec) for rec in records])
    if not mask_a.any() or not mask_b.any():
        raise RuntimeError(
            f"empty group: filter-a matched {int(mask_a.sum())}, "
            f"filter-b matched {int(mask_b.sum())}"
        )
    ids = np.array(data.slice_ids)
    dvec = find_direction(
        latents[mask_a], latents[mask_b], name=cfg["name"],
        ids_with=ids[mask_a].tolist(), ids_without=ids[mask_b].tolist(),
    )
    ltf.write(out / "direction.ltf", dvec.vector.astype(np.float32))
    payload = {
        "name": dvec.name,
        "filter_a": cfg["filter_a"],
        "filter_b": cfg["filter_b"],
        "n_a": len(dvec.group_a_ids),
        "n_b": len(dvec.group_b_ids),
        "group_a_ids": list(dvec.group_a_ids),
        "group_b_ids": list(dvec.group_b_ids),
    }
    (out / "direction.json").write_text(json.dumps(payload, indent=1))


def _cmd_traverse(cfg: dict, out: Path) -> None:
    rois = load_rois(_require_rois(cfg))
    data = SliceDataset.from_rois(rois)
    vae, _ = load_vae(cfg["_vae_path"])
    simplex = vae.cfg.prior.kind == "dirichlet"

    def latent_of(slice_id: str) -> np.ndarray:
        if slice_id not in data.slice_ids:
            raise RuntimeError(f"slice id {slice_id!r} not in {cfg['rois']}")
        i = data.slice_ids.index(slice_id)
        return extract_latents(vae, data.images[i : i + 1])[0]

    z0 = latent_of(cfg["slice"])
    if cfg["interpolate_to"] is not None:
        z1 = latent_of(cfg["interpolate_to"])
        frames = interpolate(z0, z1, cfg["frames"], vae.decoder, simplex=simplex)
        info = {"mode": "interpolate", "from": cfg["slice"],
                "to": cfg["interpolate_to"], "frames": cfg["frames"]}
    else:
        vector = ltf.read(cfg["_direction_path"])
        frames = traverse(z0, vector, cfg["_steps"], vae.decoder, simplex=simplex)
        info = {"mode": "direction", "slice": cfg["slice"],
                "steps": cfg["_steps"], "direction": str(cfg["direction"])}
    out.mkdir(parents=True, exist_ok=True)
    ltf.write(out / "frames.ltf", frames.astype(np.float32))
    save_frames(out / "frames", frames)
    save_png(out / "grid.png", image_grid(frames, n_cols=cfg["n_cols"]))
    (out / "traverse.json").write_text(json.dumps(info, indent=1))


def _format_pm(mean: float, std: float) -> str:
    return f"{mean:.3f} ± {std:.3f}"


def _cmd_report(cfg: dict, out: Path) -> None:
    eval_runs = cfg["_eval_runs"]
    cluster_runs = cfg["_cluster_runs"]
    labels = cfg["_labels"]
    if eval_runs:
        rows = []
        for label, run in zip(labels[: len(eval_runs)], eval_runs):
            table: Dict[str, dict] = {}
            with open(run / "metrics.csv") as fh:
                for record in csv.DictReader(fh):
                    table[record["fold"]] = record
            mean, std = table["mean"], table["std"]
            rows.append((
                label,
                _format_pm(float(mean["auc"]), float(std["auc"])),
                _format_pm(float(mean["accuracy"]), float(std["accuracy"])),
                f"{float(mean['precision']):.3f}",
                f"{float(mean['recall']):.3f}",
                f"{float(mean['specificity']):.3f}",
                f"{float(mean['f1']):.3f}",
            ))
        _write_csv(
            out / "table1.csv",
            ("Model", "AUC", "Accuracy", "Precision", "Recall", "Specificity", "F1"),
            rows,
        )
    if cluster_runs:
        offset = len(eval_runs)
        run_labels = labels[offset : offset + len(cluster_runs)]
        stats_by_run = []
        for run in cluster_runs:
            with open(run / "statistics.csv") as fh:
                stats_by_run.append({r["statistic"]: r["value"] for r in csv.DictReader(fh)})
        rows = []
        for key in (*STATISTIC_KEYS, "n_clusters"):
            row = [key]
            for stats in stats_by_run:
                value = stats.get(key, "")
                if value == "":
                    row.append("")
                elif key == "n_clusters":
                    row.append(str(int(float(value))))
                else:
                    row.append(f"{float(value):.1f}")
            rows.append(tuple(row))
        _write_csv(out / "table2.csv", ("Statistic", *run_labels), rows)


# ---------------------------------------------------------------------------
# Per-command validation that runs before anything is written


def _validate(cfg: dict) -> None:
    command = cfg["command"]
    if cfg["seed"] < 0:
        raise ConfigError(f"--seed must be >= 0, got {cfg['seed']}")
    if command == "phantom-gen":
        if cfg["patients"] < 2:
            raise ConfigError("--patients must be >= 2")
        if cfg["slices_per_patient"] < 1:
            raise ConfigError("--slices-per-patient must be >= 1")
        if not 0.0 <= cfg["balance"] <= 1.0:
            raise ConfigError("--balance must lie in [0, 1]")
    elif command == "preprocess":
        cfg["_manifest"] = _require_file(cfg, "manifest")
        bounds = _parse_floats(cfg["window"], "--window")
        if len(bounds) != 2:
            raise ConfigError(f"--window must be LOWER,UPPER, got {cfg['window']!r}")
        try:
            cfg["_window"] = HuWindow(int(bounds[0]), int(bounds[1]))
        except ValueError as err:
            raise ConfigError(str(err)) from err
    elif command in ("train", "em"):
        _require_rois(cfg)
        cfg["_models"] = _vae_configs(cfg)
        for key in ("epochs",) if command == "train" else (
            "rounds", "init_epochs", "round_epochs", "mlp_budget", "mlp_epochs",
        ):
            minimum = 0 if key == "rounds" else 1
            if cfg[key] < minimum:
                raise ConfigError(f"--{key.replace('_', '-')} must be >= {minimum}")
        if command == "em" and cfg["bce_weight"] <= 0:
            raise ConfigError("--bce-weight must be > 0")
    elif command == "search":
        _require_rois(cfg)
        if cfg["budget"] < 1:
            raise ConfigError("--budget must be >= 1")
        if cfg["kind"] == "mlp":
            if cfg["vae"] is None:
                raise ConfigError("search --kind mlp requires --vae")
            path = _require_file(cfg, "vae")
            try:
                cfg["_vae_model"], _ = load_vae(path)
            except Exception as err:
                raise ConfigError(f"cannot load VAE checkpoint: {err}") from err
    elif command == "evaluate":
        _require_rois(cfg)
        cfg["_vae_path"] = _require_file(cfg, "vae")
        if cfg["mlp"] is not None:
            cfg["_mlp_path"] = _require_file(cfg, "mlp")
        if cfg["folds"] < 2:
            raise ConfigError("--folds must be >= 2")
        try:
            MlpConfig(tau=cfg["tau"])
        except ValueError as err:
            raise ConfigError(str(err)) from err
    elif command == "cluster":
        _require_rois(cfg)
        cfg["_vae_path"] = _require_file(cfg, "vae")
        if cfg["elbow"] is not None:
            cfg["_k_range"] = _parse_k_range(cfg["elbow"])
        elif cfg["method"] == "kmeans":
            if cfg["k"] < 1 or cfg["runs"] < 1:
                raise ConfigError("--k and --runs must be >= 1")
        else:
            if cfg["grid"] is not None:
                cfg["_grid"] = _parse_floats(cfg["grid"], "--grid")
                if any(r <= 0 for r in cfg["_grid"]):
                    raise ConfigError("--grid radii must be > 0")
            elif cfg["radius"] <= 0:
                raise ConfigError("--radius must be > 0")
            if cfg["min_group_size"] < 1:
                raise ConfigError("--min-group-size must be >= 1")
    elif command == "direction":
        _require_rois(cfg)
        cfg["_vae_path"] = _require_file(cfg, "vae")
        cfg["_pred_a"] = parse_filter(cfg["filter_a"])
        cfg["_pred_b"] = parse_filter(cfg["filter_b"])
    elif command == "traverse":
        _require_rois(cfg)
        cfg["_vae_path"] = _require_file(cfg, "vae")
        modes = (cfg["direction"] is not None) + (cfg["interpolate_to"] is not None)
        if modes != 1:
            raise ConfigError("pass exactly one of --direction or --interpolate-to")
        if cfg["direction"] is not None:
            cfg["_direction_path"] = _require_file(cfg, "direction")
            cfg["_steps"] = _parse_floats(cfg["steps"], "--steps")
        elif cfg["frames"] < 2:
            raise ConfigError("--frames must be >= 2")
        if cfg["n_cols"] < 1:
            raise ConfigError("--n-cols must be >= 1")
    elif command == "report":
        eval_runs = [Path(p) for p in str(cfg["evaluate_runs"] or "").split(",") if p]
        cluster_runs = [Path(p) for p in str(cfg["cluster_runs"] or "").split(",") if p]
        if not eval_runs and not cluster_runs:
            raise ConfigError("report needs --evaluate-runs and/or --cluster-runs")
        for run in eval_runs:
            if not (run / "metrics.csv").is_file():
                raise ConfigError(f"no metrics.csv under {run}")
        for run in cluster_runs:
            if not (run / "statistics.csv").is_file():
                raise ConfigError(f"no statistics.csv under {run}")
        n_runs = len(eval_runs) + len(cluster_runs)
        if cfg["labels"] is not None:
            labels = [s.strip() for s in str(cfg["labels"]).split(",")]
            if len(labels) != n_runs:
                raise ConfigError(f"--labels needs {n_runs} entries, got {len(labels)}")
        else:
            labels = [run.name for run in (*eval_runs, *cluster_runs)]
        cfg["_eval_runs"] = eval_runs
        cfg["_cluster_runs"] = cluster_runs
        cfg["_labels"] = labels


_RUNNERS = {
    "phantom-gen": _cmd_phantom_gen,
    "preprocess": _cmd_preprocess,
    "train": _cmd_train,
    "search": _cmd_search,
    "em": _cmd_em,
    "evaluate": _cmd_evaluate,
    "cluster": _cmd_cluster,
    "direction": _cmd_direction,
    "traverse": _cmd_traverse,
    "report": _cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        _validate(cfg)
    except ConfigError as err:
        print(f"lesionvae: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(cfg)
    try:
        torch.set_num_threads(1)
        torch.manual_seed(cfg["seed"])
        out.mkdir(parents=True, exist_ok=True)
        _snapshot({k: v for k, v in cfg.items() if not k.startswith("_")}, out)
        _RUNNERS[cfg["command"]](cfg, out)
    except Exception as err:  # runtime failure: exit 3, partial artifacts possible
        print(f"lesionvae: error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"lesionvae: {cfg['command']} artifacts written to {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
