"""Scheme registry: training the models each scheme needs and scoring them.

Every scheme is scored with the true downlink channel and the actual SINR
(multicell: interference from every BS). Multicell models work on per-cell
views: BS ``j``'s channels to all users, reordered so that its own ``K``
users come first.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .. import beamforming as bf
from .. import pilots, solvers
from ..errors import ConfigError
from .models import BeamModel, NetSpec, Normalizer
from .training import LossWeights, TrainData, nmse_per_sample, predict, train

SCHEMES = ("proposed", "proposed_zf_loss", "proposed_reduced", "wmmse", "learned_ch_bf",
           "learned_ch_zf", "learned_ch_slnr", "lmmse_then_wmmse")
SINGLE_CELL_ONLY = ("proposed_zf_loss", "proposed_reduced", "learned_ch_zf")

# models each scheme needs; "lmmse" is the fitted pilot estimator
REQUIRES = {
    "proposed": ("proposed",),
    "proposed_zf_loss": ("proposed_zf_loss",),
    "proposed_reduced": ("proposed_reduced",),
    "wmmse": (),
    "learned_ch_bf": ("csi", "bf"),
    "learned_ch_zf": ("csi",),
    "learned_ch_slnr": ("csi",),
    "lmmse_then_wmmse": ("lmmse", "lmmse_csi"),
}


def check_schemes(schemes, multicell):
    for s in schemes:
        if s not in SCHEMES:
            raise ConfigError(f"unknown scheme {s!r}")
        if multicell and s in SINGLE_CELL_ONLY:
            raise ConfigError(f"scheme {s!r} is single-cell only")


def required_models(schemes):
    out = []
    for s in schemes:
        for m in REQUIRES[s]:
            if m not in out:
                out.append(m)
    return out


# --- data views --------------------------------------------------------------

def cell_order(cell, K, users):
    """Column order putting cell ``cell``'s users first."""
    own = list(range(cell * K, (cell + 1) * K))
    return np.array(own + [u for u in range(users) if u not in own])


def cell_views(arr, K):
    """``(T, N_c, N_t, U)`` -> ``(T * N_c, N_t, U)`` with own users first."""
    T, n_cells, nt, U = arr.shape
    views = np.stack([arr[:, j][:, :, cell_order(j, K, U)] for j in range(n_cells)], axis=1)
    return views.reshape(T * n_cells, nt, U)


def model_input(dataset, lmmse=None):
    """Network input of every sample: the LS pilot input when the scenario
    has pilots, otherwise the uplink channel; with ``lmmse`` the LMMSE
    estimate of the uplink channel instead."""
    cfg = dataset.config
    a = dataset.arrays
    if "y_ls" not in a:
        return a["h_up"]
    if lmmse is None:
        return a["y_ls"]
    return pilots.estimate_from_ls(lmmse, a["y_ls"], cfg.pilot_p)


def train_data(dataset, X):
    """Training view: per-cell samples in multicell, label powers if present."""
    a = dataset.arrays
    cfg = dataset.config
    p, q = a.get("label_p"), a.get("label_q")
    if cfg.kind == "multicell":
        K = cfg.k
        return TrainData(X=cell_views(X, K), H=cell_views(a["h_down"], K),
                         p=None if p is None else p.reshape(-1, K), q=None)
    return TrainData(X=X, H=a["h_down"], p=p, q=q)


def base_spec(cfg, **kw):
    variant = {"small_tdd": "small_fc", "toy_square": "small_fc", "massive_fdd": "massive_cnn",
               "multicell": "multicell_fc"}[cfg.kind]
    spec = dict(variant=variant, n_t=cfg.n_t, k=cfg.k, n_cells=cfg.n_cells,
                recovery="slnr" if cfg.kind == "multicell" else "full")
    spec.update(kw)
    return NetSpec(**spec)


# --- training ------------------------------------------------------------------

@dataclass
class SchemeSetup:
    """Per-model overrides: ``spec`` is a dict of NetSpec fields applied to
    every network, ``weights`` the hybrid-loss weights of the proposed models."""

    weights: LossWeights
    spec: dict
    train: object   # TrainConfig


def model_spec(name, cfg, spec_kw):
    """NetSpec of network ``name`` for scenario ``cfg``."""
    csi_kw = {k: v for k, v in spec_kw.items() if k not in ("recovery", "rate_recovery")}
    if name in ("csi", "lmmse_csi"):
        return base_spec(cfg, role="csi", **csi_kw)
    if name == "bf":
        return base_spec(cfg, role="bf", **{k: v for k, v in csi_kw.items() if k != "per_user"})
    proposed = base_spec(cfg, **spec_kw)
    if name == "proposed":
        return proposed
    if cfg.kind == "multicell":
        raise ConfigError(f"model {name!r} is single-cell only")
    if name == "proposed_zf_loss":
        return replace(proposed, recovery="full", rate_recovery="zf")
    if name == "proposed_reduced":
        return replace(proposed, recovery="reduced", rate_recovery="reduced")
    raise ConfigError(f"unknown model {name!r}")


def fit_lmmse(train_ds):
    """LMMSE pilot estimator fitted on the training uplink channels, or None
    when the scenario has no pilot stage."""
    cfg = train_ds.config
    if "y_ls" not in train_ds.arrays:
        return None
    H_up = train_ds.arrays["h_up"]
    if cfg.kind == "multicell":
        # every BS estimates its own view of all users with the same pilots
        H_up = H_up.reshape(-1, *H_up.shape[-2:])
    X = pilots.make_dft_pilots(H_up.shape[-1], cfg.pilot_length, cfg.pilot_p)
    return pilots.fit_lmmse(H_up, X, cfg.pilot_n0)


def model_data(name, dataset, models):
    """Training/validation view of ``dataset`` for network ``name``; needs
    the already-trained dependencies in ``models``."""
    if name == "lmmse_csi":
        return train_data(dataset, model_input(dataset, models.get("lmmse")))
    data = train_data(dataset, model_input(dataset))
    if name == "bf":
        data.X = predict(models["csi"], data.X)["H"]
    return data


def new_model(name, train_ds, setup, models):
    cfg = train_ds.config
    T = model_data(name, train_ds, models)
    return BeamModel(model_spec(name, cfg, setup.spec), cfg.power, cfg.noise, Normalizer.fit(T.X, T.H))


def model_weights(name, setup):
    if name in ("csi", "lmmse_csi"):
        return LossWeights(alpha_h=1.0, alpha_p=0.0, alpha_r=0.0)
    if name == "bf":
        # direct beamforming net on learned channels, trained without labels
        return LossWeights(alpha_h=0.0, alpha_p=0.0, alpha_r=1.0)
    return setup.weights


def fit_model(name, train_ds, val_ds, setup, models, model=None, log_path=None,
              checkpoint_path=None, start_epoch=0, meta=None):
    """Train network ``name`` (a fresh one unless ``model`` is given, e.g. a
    restored checkpoint) and return it with its TrainResult."""
    if model is None:
        model = new_model(name, train_ds, setup, models)
    T = model_data(name, train_ds, models)
    V = model_data(name, val_ds, models) if val_ds is not None else None
    res = train(model, T, V, model_weights(name, setup), setup.train, log_path, checkpoint_path,
                start_epoch=start_epoch, meta=meta)
    return model, res


def train_order(names):
    """Dependencies first: the LMMSE stage before its CSI-Net, the CSI-Net
    before the beamforming net."""
    rank = {"lmmse": 0, "csi": 1, "bf": 2}
    return sorted(names, key=lambda n: rank.get(n, 1))


def fit_models(names, train_ds, val_ds, setup, log_dir=None):
    """Train the named models (see ``REQUIRES``); returns a dict of them plus
    their training results under ``"_results"``."""
    models, results = {}, {}
    for name in train_order(names):
        if name == "lmmse":
            models["lmmse"] = fit_lmmse(train_ds)
            continue
        log = None if log_dir is None else f"{log_dir}/{name}_log.csv"
        models[name], results[name] = fit_model(name, train_ds, val_ds, setup, models, log_path=log)
    models["_results"] = results
    return models


# --- evaluation ---------------------------------------------------------------

@dataclass
class SchemeScore:
    rates: np.ndarray          # per test sample
    nmse: float = float("nan")

    @property
    def mean(self):
        return float(np.mean(self.rates))

    @property
    def stderr(self):
        n = len(self.rates)
        return float(np.std(self.rates, ddof=1) / np.sqrt(n)) if n > 1 else 0.0


def _true_rates(cfg, H_true, W):
    if cfg.kind == "multicell":
        return np.array([bf.multicell_sum_rate(H_true[t], W[t], cfg.noise) for t in range(len(H_true))])
    return bf.sum_rate(H_true, W, cfg.noise)


def _stack_cells(flat, T, n_cells):
    return flat.reshape(T, n_cells, *flat.shape[1:])


def _learned_channel(model, X, cfg):
    """Learned downlink channels in per-cell-view layout (multicell) or as is."""
    if cfg.kind == "multicell":
        X = cell_views(X, cfg.k)
    return predict(model, X)["H"]


def _wmmse_beams(cfg, H):
    """WMMSE (single cell) or the per-cell SLNR alternating optimization on
    per-cell views; returns beams in evaluation layout."""
    if cfg.kind == "multicell":
        K = cfg.k
        W = np.stack([solvers.multicell_ao(h, np.arange(K), cfg.power, cfg.noise).W for h in H])
        return _stack_cells(W, len(H) // cfg.n_cells, cfg.n_cells)
    W, _ = solvers.wmmse_batch(H, cfg.power, cfg.noise)
    return W


def _slnr_equal_power(cfg, H):
    K = cfg.k
    powers = np.full(K, cfg.power / K)
    W = np.stack([bf.slnr_beams(h, powers, np.arange(K), cfg.noise) for h in H])
    return W


def scheme_beams(scheme, dataset, models):
    """Beams ``(T, N_t, K)`` (multicell ``(T, N_c, N_t, K)``) and the learned
    channel when the scheme has one."""
    cfg = dataset.config
    a = dataset.arrays
    T = dataset.count
    multicell = cfg.kind == "multicell"
    if scheme == "wmmse":
        H = cell_views(a["h_down"], cfg.k) if multicell else a["h_down"]
        return _wmmse_beams(cfg, H), None
    if scheme.startswith("proposed"):
        model = models[scheme]
        X = model_input(dataset)
        out = predict(model, cell_views(X, cfg.k) if multicell else X)
        W = _stack_cells(out["W"], T, cfg.n_cells) if multicell else out["W"]
        return W, out["H"]
    if scheme == "lmmse_then_wmmse":
        X = model_input(dataset, models.get("lmmse"))
        H_hat = _learned_channel(models["lmmse_csi"], X, cfg)
        return _wmmse_beams(cfg, H_hat), H_hat
    H_hat = _learned_channel(models["csi"], model_input(dataset), cfg)
    if scheme == "learned_ch_zf":
        W = bf.zf(H_hat, cfg.power)
    elif scheme == "learned_ch_slnr":
        W = _slnr_equal_power(cfg, H_hat)
    else:
        W = predict(models["bf"], None, H_in=H_hat)["W"]
    if multicell:
        W = _stack_cells(W, T, cfg.n_cells)
    return W, H_hat


def evaluate(schemes, dataset, models):
    """Score each scheme on ``dataset``; returns ``{scheme: SchemeScore}``."""
    cfg = dataset.config
    check_schemes(schemes, cfg.kind == "multicell")
    H_true = dataset.arrays["h_down"]
    truth_views = cell_views(H_true, cfg.k) if cfg.kind == "multicell" else H_true
    out = {}
    for s in schemes:
        W, H_hat = scheme_beams(s, dataset, models)
        nmse = float(np.mean(nmse_per_sample(H_hat, truth_views))) if H_hat is not None else float("nan")
        out[s] = SchemeScore(rates=_true_rates(cfg, H_true, W), nmse=nmse)
    return out
