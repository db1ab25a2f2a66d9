"""Experiment pipeline: dataset generation, training, evaluation and sweeps.

Directory layout under an experiment's output directory::

    data/{train,val,test}/     datasets (channels module format)
    models/<name>.ckpt         best-validation checkpoint of each network
    models/<name>.ckpt.last    last-epoch state with optimizer moments (resume)
    models/<name>_log.csv      training log
    models/lmmse.ckpt          fitted LMMSE pilot estimator (pilot scenarios)
    summary.json               training summary
    results.csv, results.json  evaluation table
    sweep.csv, sweep.json      combined table of a sweep
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import beamforming as bf
from . import channels as ch
from . import pilots, solvers
from .ad.optim import load_arrays
from .errors import ConfigError, MissingCheckpoint, ShapeMismatch, SolverFailure
from .experiment import ExperimentConfig
from .nets import BeamModel, baselines
from .nets.training import restore_training_state
from .schema import RESULTS

SPLITS = ("train", "val", "test")
LABELED_SPLITS = ("train", "val")


def labeler_for(cfg):
    if cfg.kind == "multicell":
        return solvers.multicell_labeler(cfg.n_cells, cfg.k, cfg.power, cfg.noise)
    return solvers.wmmse_labeler(cfg.power, cfg.noise)


def audit_labels(ds):
    """Every label must be a valid power allocation of the budget."""
    cfg = ds.config
    a = ds.arrays
    for i in range(ds.count):
        try:
            if cfg.kind == "multicell":
                p = a["label_p"][i]
                if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - cfg.power) > bf.POWER_TOL * cfg.power):
                    raise ValueError("label powers violate the budget")
            else:
                bf.PowerPair(a["label_p"][i], a["label_q"][i], cfg.power).validate()
        except ValueError as exc:
            raise SolverFailure(i, exc) from exc


def data_dir(exp):
    return os.path.join(exp.output_dir(), "data")


def model_dir(exp):
    return os.path.join(exp.output_dir(), "models")


def gen_data(exp, out=None, splits=SPLITS):
    """Generate and save the experiment's datasets; returns their manifests."""
    out = out or data_dir(exp)
    sizes = {"train": exp.data.train, "val": exp.data.val, "test": exp.data.test}
    manifests = {}
    for split in splits:
        labeler = labeler_for(exp.scenario) if split in LABELED_SPLITS else None
        ds = ch.build_dataset(exp.scenario, sizes[split], labeler, split=split, workers=exp.data.workers)
        if labeler is not None:
            audit_labels(ds)
        ds.save(os.path.join(out, split))
        manifests[split] = ds.manifest()
    return manifests


def load_split(exp, split, path=None):
    ds = ch.Dataset.load(os.path.join(path or data_dir(exp), split))
    check_matches(exp, ds)
    return ds


def check_matches(exp, ds):
    a, b = exp.scenario, ds.config
    if (a.n_t, a.k, a.n_cells) != (b.n_t, b.k, b.n_cells):
        raise ShapeMismatch(f"dataset has n_t={b.n_t}, k={b.k}, n_cells={b.n_cells}; "
                            f"config has n_t={a.n_t}, k={a.k}, n_cells={a.n_cells}")
    if a.digest() != b.digest():
        raise ConfigError("dataset was generated from a different scenario config")


def _setup(exp):
    return baselines.SchemeSetup(weights=exp.loss, spec=dict(exp.net), train=exp.train)


def _final_row(res):
    if not res.log:
        return {}
    return {k: v for k, v in res.log[-1].items() if k != "wall_time"}


def train_models(exp, data_path=None, out=None, names=None, resume=False):
    """Train (or resume) every network the configured schemes need.

    Returns the summary dict that is also written to ``summary.json``.
    """
    out = out or model_dir(exp)
    os.makedirs(out, exist_ok=True)
    train_ds = load_split(exp, "train", data_path)
    val_ds = load_split(exp, "val", data_path)
    names = baselines.train_order(names or baselines.required_models(exp.schemes))
    setup = _setup(exp)
    models, summary = {}, {}
    for name in names:
        if name == "lmmse":
            est = baselines.fit_lmmse(train_ds)
            models["lmmse"] = est
            if est is not None:
                est.save(os.path.join(out, "lmmse.ckpt"))
            summary["lmmse"] = {"fitted": est is not None}
            continue
        if name in ("bf", "lmmse_csi"):
            dep = "csi" if name == "bf" else "lmmse"
            if dep not in models:
                models[dep] = load_model(exp, dep, out)
        ckpt = os.path.join(out, f"{name}.ckpt")
        model, start, meta = None, 0, {"model": name, "seed": exp.train.seed}
        last = ckpt + ".last"
        if resume and os.path.exists(last):
            arrays, info = load_arrays(last)
            model = baselines.new_model(name, train_ds, setup, models)
            restore_training_state(model, arrays, info)
            start = int(info["epoch"])
        model, res = baselines.fit_model(name, train_ds, val_ds, setup, models, model=model,
                                         log_path=os.path.join(out, f"{name}_log.csv"),
                                         checkpoint_path=ckpt, start_epoch=start, meta=meta)
        models[name] = model
        summary[name] = {"best_epoch": res.best_epoch, "best_score": res.best_score,
                         "first_epoch": start + 1, "last_epoch": start + exp.train.epochs,
                         "final": _final_row(res)}
    doc = {"config": exp.to_dict(), "seed": exp.train.seed, "models": summary}
    with open(os.path.join(exp.output_dir(), "summary.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return doc


def load_model(exp, name, path=None):
    path = path or model_dir(exp)
    if name == "lmmse":
        if exp.scenario.pilot_length is None:
            return None
        f = os.path.join(path, "lmmse.ckpt")
        if not os.path.exists(f):
            raise MissingCheckpoint(f"no LMMSE estimator at {f}; run `ulbeam train` first")
        return pilots.LmmseEstimator.load(f)
    f = os.path.join(path, f"{name}.ckpt")
    if not os.path.exists(f):
        raise MissingCheckpoint(f"no checkpoint for model {name!r} at {f}; run `ulbeam train` first")
    model, _ = BeamModel.load(f)
    return model


def load_models(exp, schemes, path=None):
    return {name: load_model(exp, name, path) for name in baselines.required_models(schemes)}


def evaluate(exp, schemes=None, data_path=None, models_path=None, sweep_value=""):
    """Score schemes on the test split; returns result rows."""
    schemes = schemes or exp.schemes
    baselines.check_schemes(schemes, exp.scenario.kind == "multicell")
    models = load_models(exp, schemes, models_path)
    test = load_split(exp, "test", data_path)
    scores = baselines.evaluate(schemes, test, models)
    return [result_row(sweep_value, s, scores[s]) for s in schemes]


def result_row(sweep_value, scheme, score):
    return {"sweep_value": str(sweep_value), "scheme": scheme, "mean_rate": score.mean,
            "stderr": score.stderr, "mean_nmse": score.nmse, "count": len(score.rates), "status": "ok"}


def failed_rows(sweep_value, schemes):
    return [{"sweep_value": str(sweep_value), "scheme": s, "mean_rate": math.nan, "stderr": math.nan,
             "mean_nmse": math.nan, "count": 0, "status": "failed"} for s in schemes]


def write_table(rows, csv_path, json_path=None, extra=None):
    cols = [c.name for c in RESULTS]
    os.makedirs(os.path.dirname(os.path.abspath(csv_path)), exist_ok=True)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(float(r[c])) if isinstance(r[c], float) else r[c] for c in cols])
    if json_path is not None:
        doc = {"rows": rows}
        doc.update(extra or {})
        with open(json_path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def run_pipeline(exp, sweep_value=""):
    """Generate data, train and evaluate one configuration."""
    gen_data(exp)
    if any(baselines.REQUIRES[s] for s in exp.schemes):
        train_models(exp)
    rows = evaluate(exp, sweep_value=sweep_value)
    out = exp.output_dir()
    write_table(rows, os.path.join(out, "results.csv"), os.path.join(out, "results.json"),
                {"config": exp.to_dict()})
    return rows


def _sweep_point(config_dict, value):
    """Worker for one sweep point; returns (rows, error) with the error as
    (type name, message) so it crosses process boundaries."""
    exp = ExperimentConfig.from_dict(config_dict).at_sweep_value(value)
    try:
        return run_pipeline(exp, sweep_value=value), None
    except Exception as exc:  # recorded as failure rows; the caller decides the exit code
        return None, (type(exc).__name__, str(exc))


def sweep(exp, parallel=1):
    """Run every sweep point (sequentially or ``parallel`` processes at a
    time) and write the combined table after each finished point.

    Returns ``(rows, failures)`` where failures lists ``(value, type, message)``.
    """
    if exp.sweep is None:
        raise ConfigError("config has no sweep section")
    values = list(exp.sweep.values)
    for v in values:
        exp.at_sweep_value(v)   # validate every point before running any
    out = exp.output_dir()
    csv_path, json_path = os.path.join(out, "sweep.csv"), os.path.join(out, "sweep.json")
    rows, failures = [], []
    cfg = exp.to_dict()

    def record(value, result):
        got, err = result
        if err is None:
            rows.extend(got)
        else:
            rows.extend(failed_rows(value, exp.schemes))
            failures.append((value, *err))
        write_table(rows, csv_path, json_path,
                    {"config": cfg, "failures": [list(f) for f in failures]})

    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = [pool.submit(_sweep_point, cfg, v) for v in values]
            for v, fut in zip(values, futures):
                record(v, fut.result())
    else:
        for v in values:
            record(v, _sweep_point(cfg, v))
    return rows, failures
