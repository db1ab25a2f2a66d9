"""Hybrid loss and the training loop."""
from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .. import ad
from .. import beamforming as bf
from ..ad.optim import OptimConfig, save_arrays, step
from ..errors import ConfigError, MissingLabels, ShapeMismatch
from . import recovery

LOG_FIELDS = ("epoch", "L_H", "L_P", "val_rate", "val_NMSE", "wall_time")


@dataclass
class LossWeights:
    """``alpha_H L_H + alpha_P L_P - |alpha_R| R``; the rate term always
    rewards rate whatever sign ``alpha_R`` is given with."""

    alpha_h: float = 1.0
    alpha_p: float = 1.0
    alpha_r: float = 0.001

    def __post_init__(self):
        if self.alpha_h == 0 and self.alpha_p == 0 and self.alpha_r == 0:
            raise ConfigError("at least one loss weight must be nonzero")
        if self.alpha_h < 0 or self.alpha_p < 0:
            raise ConfigError("alpha_h and alpha_p must be nonnegative")


@dataclass
class TrainConfig:
    batch_size: int = 100
    epochs: int = 200
    lr: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    true_channel_rate: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be at least 1")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainData:
    """Inputs ``X`` and downlink targets ``H`` of shape ``(T, N_t, U)``;
    label powers ``(T, K)`` when available."""

    X: np.ndarray
    H: Optional[np.ndarray] = None
    p: Optional[np.ndarray] = None
    q: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.H is not None and self.H.shape[0] != self.X.shape[0]:
            raise ShapeMismatch("inputs and targets have different sample counts")

    def __len__(self):
        return self.X.shape[0]

    def take(self, idx):
        pick = (lambda a: None if a is None else a[idx])
        return TrainData(X=self.X[idx], H=pick(self.H), p=pick(self.p), q=pick(self.q))


# --- loss ----------------------------------------------------------------------

def rate_node(model, fwd, H_true=None):
    """Per-sample training rate with beams recovered from the learned channel.

    ``H_true`` (numpy) replaces the learned channel in the SINR only.
    """
    s = model.spec
    H = fwd.H
    if s.role == "bf":
        rate = recovery.slnr_rate if s.multicell else recovery.sum_rate
        return rate(H if H_true is None else ad.constant(H_true), fwd.W, model.N0)
    which = s.rate_recovery
    if which == "slnr":
        W = recovery.recover_slnr(H, fwd.p, model.N0)
        return recovery.slnr_rate(H if H_true is None else ad.constant(H_true), W, model.N0)
    if H_true is None and which in ("reduced", "zf"):
        A = ad.matmul(ad.herm(H), H)
        C = (recovery.recover_reduced_coeffs(A, fwd.p, fwd.q, model.N0) if which == "reduced"
             else recovery.zf_coeffs(A, model.P))
        return recovery.rate_from_cross(ad.matmul(A, C), model.N0)
    W = model.recover(H, fwd.p, fwd.q, which)
    return recovery.sum_rate(H if H_true is None else ad.constant(H_true), W, model.N0)


def hybrid_loss(model, fwd, batch, weights, true_channel_rate=False):
    """Weighted loss and its parts (as floats).

    ``L_H`` is the per-real-entry channel MSE in normalized units (the
    normalizer scale divides both channels); ``L_P`` is the power MSE
    divided by ``P^2``; ``L_R`` is minus the mean sum rate.
    """
    parts = {}
    total = None

    def add(term, w):
        nonlocal total
        t = term * w
        total = t if total is None else total + t

    role = model.spec.role
    if weights.alpha_h and role != "bf":
        if batch.H is None:
            raise MissingLabels("alpha_h > 0 needs downlink channel targets")
        diff = fwd.H_norm - batch.H / model.norm.h_scale
        L_H = ad.mean(ad.abs2(diff)) * 0.5
        parts["L_H"] = float(L_H.data)
        add(L_H, weights.alpha_h)
    if weights.alpha_p and role == "proposed":
        if batch.p is None or (fwd.q is not None and batch.q is None):
            raise MissingLabels("alpha_p > 0 needs power labels")
        sq = ad.mean(ad.abs2(fwd.p - batch.p))
        if fwd.q is not None:
            sq = sq + ad.mean(ad.abs2(fwd.q - batch.q))
        L_P = sq * (0.5 / model.P ** 2)
        parts["L_P"] = float(L_P.data)
        add(L_P, weights.alpha_p)
    if weights.alpha_r and role != "csi":
        if true_channel_rate and batch.H is None:
            raise MissingLabels("true-channel rate needs downlink channels")
        R = ad.mean(rate_node(model, fwd, batch.H if true_channel_rate else None))
        parts["L_R"] = -float(R.data)
        add(-R, abs(weights.alpha_r))
    if total is None:
        raise ConfigError(f"no loss term applies to a {role!r} model with weights {weights}")
    return total, parts


# --- evaluation helpers --------------------------------------------------------------

def predict(model, X, batch=500, H_in=None):
    """Eval-mode learned channel, powers and beams as numpy arrays."""
    outs = {"H": [], "p": [], "q": [], "W": []}
    n = X.shape[0] if X is not None else H_in.shape[0]
    for s in range(0, n, batch):
        sl = slice(s, s + batch)
        fwd = model.forward(None if X is None else X[sl], train=False,
                            H_in=None if H_in is None else H_in[sl])
        outs["H"].append(fwd.H.data)
        if fwd.p is not None:
            outs["p"].append(fwd.p.data)
            if fwd.q is not None:
                outs["q"].append(fwd.q.data)
            outs["W"].append(model.beams(fwd).data)
        elif fwd.W is not None:
            outs["W"].append(fwd.W.data)
    return {k: np.concatenate(v) if v else None for k, v in outs.items()}


def nmse_per_sample(H_hat, H):
    return np.sum(np.abs(H_hat - H) ** 2, axis=(-2, -1)) / np.sum(np.abs(H) ** 2, axis=(-2, -1))


def _val_rate(model, H, W):
    """Mean true-channel sum rate; SLNR proxy on per-cell views in multicell."""
    if model.spec.multicell:
        K = model.spec.k
        rates = [sum(bf.slnr_rate(H[t], W[t][:, k], k, model.N0) for k in range(K)) for t in range(len(H))]
        return float(np.mean(rates))
    return float(np.mean(bf.sum_rate(H, W, model.N0)))


def validate(model, data):
    """Validation sum rate (true channel; SLNR proxy in multicell) and NMSE."""
    out = predict(model, data.X)
    nmse = float(np.mean(nmse_per_sample(out["H"], data.H))) if data.H is not None else float("nan")
    if out["W"] is None or data.H is None:
        return float("nan"), nmse
    return _val_rate(model, data.H, out["W"]), nmse


# --- training loop --------------------------------------------------------------

@dataclass
class TrainResult:
    log: list
    best_epoch: int
    best_score: float


def _score(model, val_rate, val_nmse):
    return -val_nmse if model.spec.role == "csi" else val_rate


def save_training_state(model, path, epoch, meta=None):
    info = {"epoch": epoch, "adam_steps": model.params.step_count}
    info.update(meta or {})
    arrays = model.state_arrays()
    for name, (m, v) in model.params.state.items():
        arrays[f"adam_m/{name}"] = m
        arrays[f"adam_v/{name}"] = v
    save_arrays(path, arrays, {"spec": model.spec.to_dict(), "P": model.P, "N0": model.N0,
                               "h_scale": model.norm.h_scale, **info})


def restore_training_state(model, arrays, meta):
    plain = {k: v for k, v in arrays.items() if not k.startswith("adam_")}
    model.restore(plain)
    model.params.state = {}
    for key, val in arrays.items():
        if key.startswith("adam_m/"):
            name = key.split("/", 1)[1]
            model.params.state[name] = (np.array(val), np.array(arrays[f"adam_v/{name}"]))
    model.params.step_count = int(meta.get("adam_steps", 0))


def train(model, train_data, val_data, weights, cfg, log_path=None, checkpoint_path=None,
          start_epoch=0, meta=None):
    """Mini-batch training with the hybrid loss.

    Keeps the parameters of the best validation epoch (highest rate, or
    lowest NMSE for a channel-only model) and restores them at the end.
    Log rows hold the epoch means of ``L_H``/``L_P`` over training batches.
    """
    opt = OptimConfig(kind=cfg.optimizer, lr=cfg.lr)
    n = len(train_data)
    if n == 0:
        raise ConfigError("empty training set")
    log, best, best_epoch = [], -np.inf, start_epoch
    best_state = model.snapshot()
    writer = fh = None
    if log_path is not None:
        fh = open(log_path, "a" if start_epoch else "w", newline="")
        writer = csv.writer(fh)
        if not start_epoch:
            writer.writerow(LOG_FIELDS)
    t0 = time.perf_counter()
    try:
        for epoch in range(start_epoch + 1, start_epoch + cfg.epochs + 1):
            rng = np.random.default_rng([cfg.seed, epoch])
            order = rng.permutation(n)
            sums = {"L_H": 0.0, "L_P": 0.0}
            batches = 0
            for s in range(0, n, cfg.batch_size):
                batch = train_data.take(order[s:s + cfg.batch_size])
                fwd = model.forward(batch.X, train=True, rng=rng,
                                    H_in=batch.X if model.spec.role == "bf" else None)
                loss, parts = hybrid_loss(model, fwd, batch, weights, cfg.true_channel_rate)
                model.params.zero_grad()
                ad.backward(loss)
                step(model.params, opt)
                for k in sums:
                    sums[k] += parts.get(k, 0.0)
                batches += 1
            val_rate, val_nmse = validate_any(model, val_data)
            row = {"epoch": epoch, "L_H": sums["L_H"] / batches, "L_P": sums["L_P"] / batches,
                   "val_rate": val_rate, "val_NMSE": val_nmse, "wall_time": time.perf_counter() - t0}
            log.append(row)
            if writer is not None:
                writer.writerow([row[f] if f == "epoch" else repr(float(row[f])) for f in LOG_FIELDS])
                fh.flush()
            score = _score(model, val_rate, val_nmse)
            if np.isfinite(score) and score > best:
                best, best_epoch = score, epoch
                best_state = model.snapshot()
    finally:
        if fh is not None:
            fh.close()
    last_epoch = start_epoch + cfg.epochs
    if checkpoint_path is not None:
        save_training_state(model, str(checkpoint_path) + ".last", last_epoch, meta)
    model.restore(best_state)
    if checkpoint_path is not None:
        save_training_state(model, checkpoint_path, last_epoch, {"best_epoch": best_epoch, **(meta or {})})
    return TrainResult(log=log, best_epoch=best_epoch, best_score=float(best))


def validate_any(model, data):
    if data is None or len(data) == 0:
        return float("nan"), float("nan")
    if model.spec.role == "bf":
        out = predict(model, None, H_in=data.X)
        return _val_rate(model, data.H, out["W"]), float("nan")
    return validate(model, data)


def config_dict(weights, cfg):
    return {"weights": asdict(weights), "train": asdict(cfg)}
