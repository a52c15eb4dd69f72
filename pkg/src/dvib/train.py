"""Minibatch optimization loop, training log and checkpoints."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import bounds, container
from .data import MultiviewDataset
from .model import (
    DvibModel,
    ModelDims,
    NonFiniteLossError,
    build_model,
    dvib_loss,
    sample_noise,
    vib_baseline_loss,
)
from .ndmath import Adam

log = logging.getLogger(__name__)

LOG_COLUMNS = (
    "epoch", "total", "recon_x_s", "recon_x_p", "recon_y_s", "recon_y_p",
    "mi_shared", "rate_x", "rate_y", "enc_disagree", "seconds",
)

CHECKPOINT_MAGIC = b"DVCK"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    lr: float = 1e-3
    lam: float = 1.0
    beta: float = 1e-3
    seed: int = 0
    d_s: int = 32
    d_p: int = 16
    hidden: tuple = (256, 256)
    activation: str = "tanh"
    likelihood: str = "gaussian"
    eval_every: int = 10
    model: str = "dvib"
    probe_epochs: int = 500

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        for name in ("batch_size", "d_s", "d_p", "eval_every", "probe_epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.lam < 0 or self.beta < 0:
            raise ValueError("lambda and beta must be non-negative")
        if self.likelihood not in bounds.LIKELIHOODS:
            raise ValueError(f"likelihood must be one of {bounds.LIKELIHOODS}")
        if self.model not in ("dvib", "vib", "vae"):
            raise ValueError(f"model must be dvib, vib or vae, got {self.model!r}")
        if not self.hidden or min(self.hidden) <= 0:
            raise ValueError("hidden widths must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def model_dims(self, d_x: int, d_y: int) -> ModelDims:
        return ModelDims(d_x, d_y, self.d_s, self.d_p, self.hidden, self.activation)


def config_hash(d: dict) -> bytes:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode("utf-8")).digest()


@dataclass
class EpochRecord:
    epoch: int
    breakdown: bounds.LossBreakdown
    enc_disagree: float
    seconds: float
    disagree_note: str | None = None
    critic_paired: float | None = None
    critic_shuffled: float | None = None
    grid: list | None = None

    def row(self) -> list:
        b = self.breakdown
        return [self.epoch, b.total, b.recon_x_s, b.recon_x_p, b.recon_y_s, b.recon_y_p,
                b.mi_shared, b.rate_x, b.rate_y, self.enc_disagree, self.seconds]


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        idx = LOG_COLUMNS.index(name)
        return np.array([r.row()[idx] for r in self.records], dtype=np.float64)

    def to_csv(self, include_time: bool = True) -> str:
        """Fixed column order. Wall-clock seconds are blanked when ``include_time`` is false
        so that reruns produce byte-identical files."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.records:
            row = r.row()
            out = [row[0]] + [repr(float(v)) for v in row[1:-1]]
            out.append(f"{row[-1]:.3f}" if include_time else "")
            w.writerow(out)
        return buf.getvalue()


def _mean_breakdown(parts: list, weights: list, lam: float, beta: float) -> bounds.LossBreakdown:
    w = np.asarray(weights, dtype=np.float64) / float(np.sum(weights))
    terms = {k: float(sum(wi * getattr(p, k) for wi, p in zip(w, parts)))
             for k in ("recon_x_s", "recon_x_p", "recon_y_s", "recon_y_p", "mi_shared", "rate_x", "rate_y")}
    return bounds.total_objective(lam=lam, beta=beta, **terms)


def train_step(model, x, y, config: TrainConfig, rng: np.random.Generator, optimizer: Adam):
    """One joint Adam step on model and critic. Returns the batch breakdown."""
    n = x.shape[0]
    model.zero_grad()
    noise = sample_noise(model, n, rng)
    if isinstance(model, DvibModel):
        shuffle = rng.permutation(n)
        parts, _ = dvib_loss(model, x, y, noise, shuffle, config.lam, config.beta, config.likelihood)
    else:
        beta = 1.0 if model.kind == "vae" else config.beta
        parts, _ = vib_baseline_loss(model, x, y, noise, beta, config.likelihood)
    optimizer.step()
    return parts


def make_optimizer(model, config: TrainConfig) -> Adam:
    named = model.named_params()
    return Adam([p for _, p, _ in named], [g for _, _, g in named], lr=config.lr)


def heldout_critic_scores(model: DvibModel, data: MultiviewDataset, seed: int) -> tuple[float, float]:
    """Mean critic score on paired vs. row-shuffled shared latents (posterior means)."""
    codes = model.encode_means(data.x, data.y)
    shuffle = np.random.default_rng(seed).permutation(len(data))
    return bounds.critic_scores(model.critic, codes["z_x_s"], codes["z_y_s"], shuffle)


def train(model, dataset: MultiviewDataset, config: TrainConfig, heldout: MultiviewDataset | None = None,
          grid_fn=None):
    """Runs ``config.epochs`` epochs of seeded-shuffled minibatches (last partial batch kept).

    ``heldout`` enables per-epoch paired/shuffled critic scores; ``grid_fn(model)``
    is called every ``eval_every`` epochs and its result stored on the record.
    """
    if dataset.d_x != model.dims.d_x or dataset.d_y != model.dims.d_y:
        raise ValueError(
            f"dataset dims ({dataset.d_x}, {dataset.d_y}) do not match model ({model.dims.d_x}, {model.dims.d_y})"
        )
    rng = np.random.default_rng(config.seed)
    optimizer = make_optimizer(model, config)
    history = TrainLog()
    n = len(dataset)
    step = 0
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(n)
        parts, weights = [], []
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            try:
                parts.append(train_step(model, dataset.x[idx], dataset.y[idx], config, rng, optimizer))
            except NonFiniteLossError as exc:
                raise NonFiniteLossError(exc.term, step) from exc
            weights.append(idx.size)
            step += 1
        lam = config.lam if isinstance(model, DvibModel) else 0.0
        beta = parts[0].beta
        summary = _mean_breakdown(parts, weights, lam, beta)
        record = EpochRecord(epoch, summary, float("nan"), time.perf_counter() - start)
        if isinstance(model, DvibModel):
            diag = bounds.encoder_disagreement_diagnostic(model.enc_x_p, model.enc_y_p, dataset.y[: min(n, 1000)])
            record.enc_disagree, record.disagree_note = diag.value, diag.skipped_reason
            if heldout is not None:
                record.critic_paired, record.critic_shuffled = heldout_critic_scores(model, heldout, config.seed + epoch)
        if grid_fn is not None and epoch % config.eval_every == 0:
            record.grid = grid_fn(model)
        history.records.append(record)
        log.info("epoch %d total %.4f rate_x %.4f rate_y %.4f mi %.4f", epoch, summary.total,
                 summary.rate_x, summary.rate_y, summary.mi_shared)
    return model, history


# ---------------------------------------------------------------------------
# checkpoints


class CheckpointDimError(ValueError):
    pass


def checkpoint_bytes(model, config: TrainConfig | None = None) -> bytes:
    cfg = config.as_dict() if config is not None else {}
    d = model.dims
    header_info = {"kind": model.kind, "dims": {"d_x": d.d_x, "d_y": d.d_y, "d_s": d.d_s, "d_p": d.d_p,
                                                 "hidden": list(d.hidden), "activation": d.activation},
                   "config": cfg}
    arrays = {"__info__": np.frombuffer(json.dumps(header_info, sort_keys=True).encode("utf-8"), dtype=np.uint8)}
    for name, p, _ in model.named_params():
        arrays[name] = p
    return container.encode(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, arrays, config_hash(cfg))


def checkpoint_save(model, path, config: TrainConfig | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, config))


def checkpoint_load(path, expected: ModelDims | None = None):
    """Returns ``(model, config_dict)``."""
    header, arrays = container.decode(Path(path).read_bytes(), CHECKPOINT_MAGIC, CHECKPOINT_VERSION, 32)
    if "__info__" not in arrays:
        raise container.CorruptPayloadError("checkpoint lacks its info block")
    try:
        info = json.loads(arrays.pop("__info__").tobytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise container.CorruptPayloadError("checkpoint info block is unreadable") from exc
    if config_hash(info["config"]) != header:
        raise container.CorruptPayloadError("config hash does not match the stored config")
    d = info["dims"]
    dims = ModelDims(d["d_x"], d["d_y"], d["d_s"], d["d_p"], tuple(d["hidden"]), d["activation"])
    if expected is not None and expected != dims:
        raise CheckpointDimError(f"checkpoint dims {dims} differ from expected {expected}")
    model = build_model(info["kind"], dims, np.random.default_rng(0))
    named = model.named_params()
    if set(arrays) != {n for n, _, _ in named}:
        raise container.CorruptPayloadError("checkpoint parameters do not match the declared architecture")
    for name, p, _ in named:
        if arrays[name].shape != p.shape:
            raise CheckpointDimError(f"{name}: stored shape {arrays[name].shape}, architecture needs {p.shape}")
        p[...] = arrays[name]
    return model, info["config"]
