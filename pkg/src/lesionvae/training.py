"""Training loops, EM-style co-optimisation, and random hyperparameter search."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import load_vae
from .losses import LossConfig, composite_loss
from .metrics import auc_score, classification_report, reconstruction_report
from .nets import Mlp, MlpConfig, Vae, VaeConfig
from .pipeline import binary_labels, kfold_split
from .priors import PriorConfig, TARGET_ALPHA_MAX, TARGET_ALPHA_MIN

EM_IMPROVEMENT_THRESHOLD = 0.002
EM_PATIENCE = 2


# ---------------------------------------------------------------------------
# Dataset view


@dataclass
class SliceDataset:
    """In-memory slice stack with aligned labels and ids."""

    images: np.ndarray          # (n, 64, 64) float32 in [0, 1]
    labels: np.ndarray          # (n,) int64 binary targets
    slice_ids: List[str]
    patient_ids: List[str]

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.images.shape[0]
        if self.images.ndim != 3 or n == 0:
            raise ValueError(f"expected (n, H, W) images, got {self.images.shape}")
        if not (self.labels.shape[0] == len(self.slice_ids) == len(self.patient_ids) == n):
            raise ValueError("images/labels/ids lengths differ")

    def __len__(self) -> int:
        return self.images.shape[0]

    @classmethod
    def from_rois(cls, rois, task: int = 1) -> "SliceDataset":
        return cls(
            images=np.stack([r.image for r in rois]),
            labels=binary_labels(rois, task=task),
            slice_ids=[r.slice_id for r in rois],
            patient_ids=[r.patient_id for r in rois],
        )

    def subset(self, idx) -> "SliceDataset":
        idx = np.asarray(idx)
        return SliceDataset(
            images=self.images[idx],
            labels=self.labels[idx],
            slice_ids=[self.slice_ids[i] for i in idx],
            patient_ids=[self.patient_ids[i] for i in idx],
        )


@dataclass
class SplitAudit:
    """Record which split every training/selection step consumed."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    events: List[Tuple[str, str]] = field(default_factory=list)

    def record(self, op: str, split: str) -> None:
        self.events.append((op, split))

    def check(self) -> None:
        """Splits must be disjoint and test data only feeds evaluate events."""
        train, val, test = set(self.train), set(self.val), set(self.test)
        if train & val or train & test or val & test:
            raise AssertionError("train/val/test overlap")
        for op, split in self.events:
            if "test" in split and not op.startswith("evaluate"):
                raise AssertionError(f"{op} consumed the test split")


# ---------------------------------------------------------------------------
# VAE training


def _batches(perm: np.ndarray, batch_size: int, merge_singleton: bool = False) -> List[np.ndarray]:
    out = [perm[i : i + batch_size] for i in range(0, len(perm), batch_size)]
    if merge_singleton and len(out) > 1 and len(out[-1]) == 1:
        out[-2] = np.concatenate([out[-2], out[-1]])
        out.pop()
    return out


def train_vae(
    images,
    vae_cfg: VaeConfig,
    loss_cfg: LossConfig,
    epochs: int,
    seed: int,
    lr: float = 1e-3,
    labels=None,
    mlp: Mlp | None = None,
    model: Vae | None = None,
) -> Tuple[Vae, List[Dict[str, float]]]:
    """Minimise the composite loss with Adam; returns model + per-epoch terms.

    Pass ``model`` to continue training an existing network.  When the loss
    config carries a positive bce_weight, a frozen ``mlp`` scores posterior
    features and ``labels`` supply the BCE targets; gradients still reach the
    encoder through those features.  Non-finite losses abort with a
    diagnostic rather than training onward.
    """
    x_all = np.asarray(images, dtype=np.float32)
    if x_all.ndim != 3 or x_all.shape[0] == 0:
        raise ValueError(f"expected (n, H, W) images, got {x_all.shape}")
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    needs_bce = loss_cfg.bce_weight > 0
    if needs_bce and (mlp is None or labels is None):
        raise ValueError("bce_weight > 0 requires an mlp and labels")
    if mlp is not None and not needs_bce:
        raise ValueError("mlp supplied but bce_weight is 0")

    torch.manual_seed(seed)
    if model is None:
        model = Vae(vae_cfg)
    if needs_bce:
        mlp.eval()
        for p in mlp.parameters():
            p.requires_grad_(False)
        y_all = torch.from_numpy(np.asarray(labels, dtype=np.int64))
        if y_all.shape[0] != x_all.shape[0]:
            raise ValueError("labels length differs from images")

    optimiser = torch.optim.Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    n = x_all.shape[0]
    history: List[Dict[str, float]] = []
    for epoch in range(epochs):
        model.train()
        sums: Dict[str, float] = {k: 0.0 for k in ("l1", "ssim", "kld", "bce", "total")}
        anneal_value = 1.0
        for idx in _batches(rng.permutation(n), loss_cfg.batch_size):
            x = torch.from_numpy(x_all[idx])
            cfg_b = loss_cfg.with_batch_size(len(idx))
            recon, posterior = model(x)
            probs = mlp(posterior.features()) if needs_bce else None
            targets = y_all[idx] if needs_bce else None
            try:
                loss, terms = composite_loss(
                    x, recon, posterior, cfg_b, epoch, epochs, probs, targets
                )
            except ValueError as err:
                raise RuntimeError(
                    f"training diverged at epoch {epoch}: {err}"
                ) from err
            optimiser.zero_grad()
            loss.backward()
            optimiser.step()
            for key in sums:
                sums[key] += terms[key] * len(idx)
            anneal_value = terms["annealing"]
        record = {key: value / n for key, value in sums.items()}
        record["annealing"] = anneal_value
        record["epoch"] = epoch
        history.append(record)
    model.eval()
    return model, history


def extract_latents(model, images, batch_size: int = 128) -> np.ndarray:
    """Deterministic latent features, one row per slice in input order.

    Gaussian models yield the posterior mean, Dirichlet models the expected
    simplex point.  ``model`` may be a Vae or a checkpoint path.
    """
    if not isinstance(model, Vae):
        model, _ = load_vae(model)
    x_all = np.asarray(images, dtype=np.float32)
    model.eval()
    rows = []
    with torch.no_grad():
        for start in range(0, x_all.shape[0], batch_size):
            x = torch.from_numpy(x_all[start : start + batch_size])
            rows.append(model.encoder(x).features().cpu().numpy())
    return np.concatenate(rows, axis=0)


def reconstruct_images(model, images, batch_size: int = 128) -> np.ndarray:
    """Deterministic reconstructions (posterior feature point decoded)."""
    if not isinstance(model, Vae):
        model, _ = load_vae(model)
    x_all = np.asarray(images, dtype=np.float32)
    model.eval()
    rows = []
    with torch.no_grad():
        for start in range(0, x_all.shape[0], batch_size):
            x = torch.from_numpy(x_all[start : start + batch_size])
            rows.append(model.reconstruct(x).squeeze(1).cpu().numpy())
    return np.concatenate(rows, axis=0)


# ---------------------------------------------------------------------------
# MLP training and cross-validated evaluation


def train_mlp_once(
    latents: np.ndarray,
    labels: np.ndarray,
    cfg: MlpConfig,
    lr: float = 1e-3,
    batch_size: int = 32,
    epochs: int = 60,
    seed: int = 0,
) -> Mlp:
    X = torch.from_numpy(np.asarray(latents, dtype=np.float32))
    y = torch.from_numpy(np.asarray(labels, dtype=np.float32))
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError(f"need a (n>=2, L) latent matrix, got {tuple(X.shape)}")
    torch.manual_seed(seed)
    model = Mlp(X.shape[1], cfg)
    optimiser = torch.optim.Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        model.train()
        # singleton batches break BatchNorm1d in train mode; fold them in
        for idx in _batches(rng.permutation(X.shape[0]), batch_size, merge_singleton=True):
            probs = model(X[idx])
            loss = F.binary_cross_entropy(probs, y[idx])
            optimiser.zero_grad()
            loss.backward()
            optimiser.step()
    model.eval()
    return model


def predict_probs(model: Mlp, latents: np.ndarray) -> np.ndarray:
    model.eval()
    with torch.no_grad():
        probs = model(torch.from_numpy(np.asarray(latents, dtype=np.float32)))
    return probs.cpu().numpy()


def train_mlp(
    latents: np.ndarray,
    labels: np.ndarray,
    mlp_cfg: MlpConfig,
    folds: Sequence[Tuple[np.ndarray, np.ndarray, np.ndarray]],
    lr: float = 1e-3,
    batch_size: int = 32,
    epochs: int = 60,
    seed: int = 0,
) -> Dict:
    """One model per fold, scored on that fold's test split.

    Returns per-fold reports plus the across-fold mean and standard
    deviation of every metric.
    """
    if not folds:
        raise ValueError("folds is empty")
    latents = np.asarray(latents, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    reports = []
    for f, (train_idx, _, test_idx) in enumerate(folds):
        model = train_mlp_once(
            latents[train_idx], labels[train_idx], mlp_cfg,
            lr=lr, batch_size=batch_size, epochs=epochs, seed=seed + f,
        )
        probs = predict_probs(model, latents[test_idx])
        reports.append(classification_report(probs, labels[test_idx], tau=mlp_cfg.tau))
    keys = reports[0].keys()
    mean = {k: float(np.mean([r[k] for r in reports])) for k in keys}
    std = {k: float(np.std([r[k] for r in reports])) for k in keys}
    return {"folds": reports, "mean": mean, "std": std, "k": len(folds)}


# ---------------------------------------------------------------------------
# Random hyperparameter search


def _log_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


@dataclass(frozen=True)
class SearchSpace:
    """Declared ranges for every searchable knob.

    Choice knobs are tuples of options; ``*_range`` knobs are (lo, hi)
    bounds, sampled uniformly except learning rates and beta (log-uniform).
    """

    hu_lower: tuple = (-1000, -900, -800)
    hu_upper: tuple = (200, 400, 600)
    base: tuple = (8, 16, 32)
    latent_size: tuple = (16, 32, 64, 128)
    lambda_range: tuple = (0.0, 1.0)
    psi: tuple = (1, 2, 3)
    gamma_mode: tuple = ("off", "one", "batch")
    beta_range: tuple = (1.0, 50.0)
    ssim_variant: tuple = ("ssim", "ms_ssim")
    anneal: tuple = (False, True)
    lr_range: tuple = (1e-4, 1e-2)
    batch_size: tuple = (16, 32, 64)
    target_alpha_range: tuple = (TARGET_ALPHA_MIN, TARGET_ALPHA_MAX)
    mlp_tau_range: tuple = (0.4, 0.6)
    mlp_lr_range: tuple = (1e-4, 1e-2)
    mlp_batch_size: tuple = (16, 32, 64)
    mlp_width: tuple = (64, 128, 256)
    mlp_depth: tuple = (4, 5)
    mlp_dropout_range: tuple = (0.0, 0.5)

    def sample_vae(self, rng: np.random.Generator, prior_kind: str = "gaussian") -> dict:
        def pick(options):
            return options[int(rng.integers(len(options)))]

        params = {
            "hu_lower": int(pick(self.hu_lower)),
            "hu_upper": int(pick(self.hu_upper)),
            "base": int(pick(self.base)),
            "latent_size": int(pick(self.latent_size)),
            "lambda_": float(rng.uniform(*self.lambda_range)),
            "psi": int(pick(self.psi)),
            "gamma_mode": pick(self.gamma_mode),
            "beta": _log_uniform(rng, *self.beta_range),
            "ssim_variant": pick(self.ssim_variant),
            "anneal": bool(pick(self.anneal)),
            "learning_rate": _log_uniform(rng, *self.lr_range),
            "batch_size": int(pick(self.batch_size)),
        }
        if prior_kind == "dirichlet":
            params["target_alpha"] = float(rng.uniform(*self.target_alpha_range))
        return params

    def sample_mlp(self, rng: np.random.Generator) -> dict:
        def pick(options):
            return options[int(rng.integers(len(options)))]

        width = int(pick(self.mlp_width))
        depth = int(pick(self.mlp_depth))
        layer_sizes = tuple(max(width >> i, 8) for i in range(depth - 1)) + (1,)
        return {
            "tau": float(rng.uniform(*self.mlp_tau_range)),
            "learning_rate": _log_uniform(rng, *self.mlp_lr_range),
            "batch_size": int(pick(self.mlp_batch_size)),
            "layer_sizes": layer_sizes,
            "dropout_p": float(rng.uniform(*self.mlp_dropout_range)),
        }


@dataclass
class Candidate:
    index: int
    params: dict
    objective: float


def random_search(
    space: SearchSpace,
    budget: int,
    seed: int,
    kind: str = "vae",
    objective: Callable[[int, dict], float] | None = None,
    prior_kind: str = "gaussian",
) -> List[Candidate]:
    """Sample ``budget`` candidates, score them, rank best first.

    The sample sequence depends only on (seed, kind, budget order); ties in
    the objective keep sample order.  Without an objective all candidates
    score 0 and the ranked list is simply the sample sequence.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if kind not in ("vae", "mlp"):
        raise ValueError(f"unknown search kind {kind!r}")
    rng = np.random.default_rng(seed)
    sampled = [
        space.sample_vae(rng, prior_kind) if kind == "vae" else space.sample_mlp(rng)
        for _ in range(budget)
    ]
    results = []
    for index, params in enumerate(sampled):
        score = 0.0 if objective is None else float(objective(index, params))
        if math.isnan(score):
            score = float("-inf")
        results.append(Candidate(index=index, params=params, objective=score))
    return sorted(results, key=lambda c: (-c.objective, c.index))


def vae_configs_from_params(
    params: dict, prior_kind: str = "gaussian", input_size: int = 64
) -> Tuple[VaeConfig, LossConfig, float]:
    """Resolve a sampled VAE point into (VaeConfig, LossConfig, lr)."""
    gamma = {"off": 0, "one": 1, "batch": params["batch_size"]}[params["gamma_mode"]]
    prior = PriorConfig(kind=prior_kind, target_alpha=params.get("target_alpha", 0.9))
    vae_cfg = VaeConfig(
        base=params["base"],
        latent_size=params["latent_size"],
        prior=prior,
        input_size=input_size,
    )
    loss_cfg = LossConfig(
        lambda_=params["lambda_"],
        psi=params["psi"],
        gamma=gamma,
        beta=params["beta"],
        anneal=params["anneal"],
        ssim_variant=params["ssim_variant"],
        base=params["base"],
        batch_size=params["batch_size"],
        latent_size=params["latent_size"],
        image_size=input_size * input_size,
    )
    return vae_cfg, loss_cfg, params["learning_rate"]


def mlp_config_from_params(params: dict) -> MlpConfig:
    return MlpConfig(
        layer_sizes=params["layer_sizes"],
        dropout_p=params["dropout_p"],
        tau=params["tau"],
    )


def search_vae(
    data: SliceDataset,
    space: SearchSpace,
    budget: int,
    seed: int,
    prior_kind: str = "gaussian",
    epochs: int = 4,
    dataset_builder: Callable[[dict], SliceDataset] | None = None,
) -> List[Candidate]:
    """Rank VAE candidates by held-out reconstruction SSIM.

    Each candidate trains briefly on the first fold's train split and is
    scored on its validation split.  ``dataset_builder`` may rebuild the
    dataset per candidate (e.g. re-windowing raw HU data); candidates whose
    training diverges rank last instead of aborting the search.
    """

    def objective(index: int, params: dict) -> float:
        candidate_data = data if dataset_builder is None else dataset_builder(params)
        folds = kfold_split(range(len(candidate_data)), k=5, seed=seed)
        train_idx, val_idx, _ = folds[0]
        vae_cfg, loss_cfg, lr = vae_configs_from_params(params, prior_kind)
        try:
            model, _ = train_vae(
                candidate_data.images[train_idx], vae_cfg, loss_cfg,
                epochs=epochs, seed=seed * 1009 + index, lr=lr,
            )
        except RuntimeError:
            return float("-inf")
        recon = reconstruct_images(model, candidate_data.images[val_idx])
        return reconstruction_report(candidate_data.images[val_idx], recon)["ssim_mean"]

    return random_search(space, budget, seed, kind="vae",
                         objective=objective, prior_kind=prior_kind)


def search_mlp(
    latents: np.ndarray,
    labels: np.ndarray,
    folds: Sequence[Tuple[np.ndarray, np.ndarray, np.ndarray]],
    space: SearchSpace,
    budget: int,
    seed: int,
    epochs: int = 40,
) -> Tuple[Mlp, dict, List[Candidate]]:
    """Random-search MLP knobs; objective is mean validation AUC over folds.

    Returns the best model retrained on the first fold's train split, its
    sampled parameters, and the full ranked list.
    """
    latents = np.asarray(latents, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)

    def objective(index: int, params: dict) -> float:
        cfg = mlp_config_from_params(params)
        aucs = []
        for train_idx, val_idx, _ in folds:
            model = train_mlp_once(
                latents[train_idx], labels[train_idx], cfg,
                lr=params["learning_rate"], batch_size=params["batch_size"],
                epochs=epochs, seed=seed * 1013 + index,
            )
            aucs.append(auc_score(predict_probs(model, latents[val_idx]), labels[val_idx]))
        return float(np.mean(aucs))

    ranked = random_search(space, budget, seed, kind="mlp", objective=objective)
    best = ranked[0]
    cfg = mlp_config_from_params(best.params)
    train_idx = folds[0][0]
    model = train_mlp_once(
        latents[train_idx], labels[train_idx], cfg,
        lr=best.params["learning_rate"], batch_size=best.params["batch_size"],
        epochs=epochs, seed=seed * 1013 + best.index,
    )
    return model, best.params, ranked


# ---------------------------------------------------------------------------
# EM-style greedy co-optimisation


@dataclass
class EmState:
    """Best accepted round of the alternating VAE/MLP optimisation."""

    round: int
    vae: Vae
    mlp: Mlp
    mlp_params: dict
    best_val_auc: float
    history: List[dict]
    audit: SplitAudit
    folds: list


def em_optimize(
    data: SliceDataset,
    vae_cfg: VaeConfig,
    loss_cfg: LossConfig,
    space: SearchSpace,
    max_rounds: int = 5,
    seed: int = 0,
    lr: float = 1e-3,
    init_epochs: int = 30,
    round_epochs: int = 10,
    mlp_budget: int = 6,
    mlp_epochs: int = 40,
    bce_weight: float = 1.0,
    improvement_threshold: float = EM_IMPROVEMENT_THRESHOLD,
    patience: int = EM_PATIENCE,
) -> EmState:
    """Alternate VAE training and MLP re-search, keeping the best round.

    Round 0 trains the VAE without any classifier term; later rounds append
    the frozen best MLP's BCE (weight ``bce_weight``) and then re-search the
    MLP on fresh latents.  A round is accepted only if validation AUC
    improves; improvements below ``improvement_threshold`` for ``patience``
    consecutive rounds stop the loop.  Rounds with non-finite metrics are
    rejected and the previous state kept.
    """
    if max_rounds < 0:
        raise ValueError(f"max_rounds must be >= 0, got {max_rounds}")
    if bce_weight <= 0:
        raise ValueError(f"bce_weight must be > 0 for EM rounds, got {bce_weight}")
    folds = kfold_split(range(len(data)), k=5, seed=seed)
    train_idx, val_idx, test_idx = folds[0]
    audit = SplitAudit(train=train_idx, val=val_idx, test=test_idx)

    def evaluate_round(vae: Vae, round_seed: int, tag: str):
        latents = extract_latents(vae, data.images)
        mlp, params, _ = search_mlp(
            latents, data.labels, [folds[0]], space, mlp_budget, round_seed,
            epochs=mlp_epochs,
        )
        audit.record(f"search_mlp[{tag}]", "train+val")
        val_auc = auc_score(predict_probs(mlp, latents[val_idx]), data.labels[val_idx])
        return mlp, params, float(val_auc)

    base_cfg = replace(loss_cfg, bce_weight=0.0)
    vae, _ = train_vae(
        data.images[train_idx], vae_cfg, base_cfg, init_epochs, seed, lr=lr
    )
    audit.record("train_vae[0]", "train")
    mlp, mlp_params, val_auc = evaluate_round(vae, seed, "0")
    history = [{"round": 0, "val_auc": val_auc, "improvement": float("nan"),
                "accepted": True, "bce_weight": 0.0}]
    state = EmState(
        round=0, vae=vae, mlp=mlp, mlp_params=mlp_params,
        best_val_auc=val_auc, history=history, audit=audit, folds=folds,
    )
    best_vae_state = copy.deepcopy(vae.state_dict())
    best_mlp = mlp

    em_cfg = replace(loss_cfg, bce_weight=bce_weight)
    no_improve = 0
    for r in range(1, max_rounds + 1):
        pre_state = copy.deepcopy(vae.state_dict())
        try:
            vae, _ = train_vae(
                data.images[train_idx], vae_cfg, em_cfg, round_epochs,
                seed=seed * 97 + r, lr=lr, labels=data.labels[train_idx],
                mlp=best_mlp, model=vae,
            )
            audit.record(f"train_vae[{r}]", "train")
            mlp_r, params_r, val_auc_r = evaluate_round(vae, seed * 131 + r, str(r))
        except RuntimeError as err:
            vae.load_state_dict(pre_state)
            history.append({"round": r, "val_auc": float("nan"),
                            "improvement": float("nan"), "accepted": False,
                            "rejected": str(err), "bce_weight": bce_weight})
            no_improve += 1
            if no_improve >= patience:
                break
            continue
        improvement = val_auc_r - state.best_val_auc
        accepted = improvement > 0
        history.append({"round": r, "val_auc": val_auc_r,
                        "improvement": improvement, "accepted": accepted,
                        "bce_weight": bce_weight})
        if accepted:
            state.round = r
            state.vae = vae
            state.mlp = mlp_r
            state.mlp_params = params_r
            state.best_val_auc = val_auc_r
            best_vae_state = copy.deepcopy(vae.state_dict())
            best_mlp = mlp_r
        no_improve = no_improve + 1 if improvement < improvement_threshold else 0
        if no_improve >= patience:
            break

    # hand back the best accepted round's weights, not the last round's
    state.vae.load_state_dict(best_vae_state)
    state.mlp = best_mlp
    return state
