"""Model checkpoints: a zip archive of config JSON plus LTF1 parameter arrays.

Entries are written in sorted order with a fixed timestamp so identical
models produce byte-identical archives.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from . import ltf
from .nets import Mlp, MlpConfig, Vae, VaeConfig
from .priors import PriorConfig

_FIXED_STAMP = (2020, 1, 1, 0, 0, 0)


def _write_entry(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_FIXED_STAMP)
    info.compress_type = zipfile.ZIP_DEFLATED
    zf.writestr(info, payload)


def _state_to_arrays(state_dict) -> dict[str, np.ndarray]:
    arrays = {}
    for name, tensor in state_dict.items():
        arr = tensor.detach().cpu().numpy()
        # counters (int64) fit exactly in f32 at training scales
        arrays[name] = arr.astype(np.float32) if arr.dtype.kind in "iu" else arr
    return arrays


def save_checkpoint(path: str | Path, model: torch.nn.Module, config: dict, meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _write_entry(zf, "config.json", json.dumps(config, sort_keys=True).encode())
        if meta:
            _write_entry(zf, "meta.json", json.dumps(meta, sort_keys=True).encode())
        for name, arr in sorted(_state_to_arrays(model.state_dict()).items()):
            _write_entry(zf, f"params/{name}.ltf", ltf.encode(arr))
    path.write_bytes(buf.getvalue())


def load_arrays(path: str | Path) -> tuple[dict, dict[str, np.ndarray], dict]:
    with zipfile.ZipFile(path) as zf:
        config = json.loads(zf.read("config.json"))
        meta = json.loads(zf.read("meta.json")) if "meta.json" in zf.namelist() else {}
        arrays = {}
        for name in zf.namelist():
            if name.startswith("params/") and name.endswith(".ltf"):
                arrays[name[len("params/") : -len(".ltf")]] = ltf.decode(zf.read(name))
    return config, arrays, meta


def _load_state(model: torch.nn.Module, arrays: dict[str, np.ndarray]) -> None:
    state = model.state_dict()
    if set(state) != set(arrays):
        missing = set(state) ^ set(arrays)
        raise ValueError(f"checkpoint parameter mismatch: {sorted(missing)}")
    new_state = {
        name: torch.from_numpy(arrays[name]).to(state[name].dtype).reshape(state[name].shape)
        for name in state
    }
    model.load_state_dict(new_state)


def vae_config_to_dict(cfg: VaeConfig) -> dict:
    d = asdict(cfg)
    d["kind"] = "vae"
    return d


def vae_config_from_dict(d: dict) -> VaeConfig:
    prior = PriorConfig(**d["prior"])
    return VaeConfig(
        base=d["base"],
        latent_size=d["latent_size"],
        prior=prior,
        input_size=d["input_size"],
        n_blocks=d["n_blocks"],
    )


def save_vae(path: str | Path, model: Vae, meta: dict | None = None) -> None:
    save_checkpoint(path, model, vae_config_to_dict(model.cfg), meta)


def load_vae(path: str | Path) -> tuple[Vae, dict]:
    config, arrays, meta = load_arrays(path)
    if config.get("kind") != "vae":
        raise ValueError(f"not a VAE checkpoint: kind={config.get('kind')!r}")
    model = Vae(vae_config_from_dict(config))
    _load_state(model, arrays)
    model.eval()
    return model, meta


def save_mlp(path: str | Path, model: Mlp, input_size: int, meta: dict | None = None) -> None:
    config = {
        "kind": "mlp",
        "input_size": input_size,
        "layer_sizes": list(model.cfg.layer_sizes),
        "dropout_p": model.cfg.dropout_p,
        "tau": model.cfg.tau,
    }
    save_checkpoint(path, model, config, meta)


def load_mlp(path: str | Path) -> tuple[Mlp, dict]:
    config, arrays, meta = load_arrays(path)
    if config.get("kind") != "mlp":
        raise ValueError(f"not an MLP checkpoint: kind={config.get('kind')!r}")
    cfg = MlpConfig(
        layer_sizes=tuple(config["layer_sizes"]),
        dropout_p=config["dropout_p"],
        tau=config["tau"],
    )
    model = Mlp(config["input_size"], cfg)
    _load_state(model, arrays)
    model.eval()
    return model, meta
