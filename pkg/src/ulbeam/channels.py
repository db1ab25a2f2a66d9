"""Channel generation, uplink-to-downlink mappings, multicell topologies and
labeled datasets.

Powers are linear throughout. Multicell powers are in mW, so the 10 dBm
budget is ``10.0`` and the thermal noise over 20 MHz is about ``8e-11``.
"""
from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import pilots
from .errors import ConfigError, DatasetError, DivisionByZero, GeometryError, ShapeMismatch, SolverFailure

KINDS = ("small_tdd", "massive_fdd", "multicell", "toy_square")
SPLIT_TAGS = {"train": 0, "val": 1, "test": 2}
MAPPING_STREAM = 0x6D6170  # keeps the mapping draw apart from every sample stream
DATASET_FORMAT = "ulbeam-dataset 1"


def thermal_noise_mw(psd_dbm_hz=-174.0, bandwidth=20e6):
    return float(10.0 ** ((psd_dbm_hz + 10.0 * np.log10(bandwidth)) / 10.0))


@dataclass
class ScenarioConfig:
    """One simulation scenario. ``power`` and ``noise`` default per kind:
    ``P = 100, N0 = 1`` (20 dB) for single-cell scenarios and
    ``P = 10 mW`` with thermal noise for multicell."""

    kind: str = "small_tdd"
    n_t: int = 4
    k: int = 4
    n_cells: int = 1
    power: Optional[float] = None
    noise: Optional[float] = None
    n_paths: int = 4
    f_up: float = 2.5e9
    f_down: float = 2.4e9
    spacing: float = 0.5          # in downlink wavelengths
    seed: int = 0
    per_user_phi: bool = False
    pilot_length: Optional[int] = None
    pilot_power: Optional[float] = None
    pilot_noise: Optional[float] = None
    radius: float = 200.0
    min_distance: float = 10.0
    bandwidth: float = 20e6
    noise_psd: float = -174.0     # dBm/Hz

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        if self.power is None:
            self.power = 10.0 if self.kind == "multicell" else 100.0
        if self.noise is None:
            self.noise = thermal_noise_mw(self.noise_psd, self.bandwidth) if self.kind == "multicell" else 1.0
        if self.kind != "multicell" and self.n_cells != 1:
            raise ConfigError("only the multicell scenario has more than one cell")
        if self.n_t < 1 or self.k < 1 or self.n_cells < 1:
            raise ConfigError("n_t, k and n_cells must be at least 1")
        if not (self.power > 0 and self.noise > 0):
            raise ConfigError("power and noise must be positive")
        if self.kind in ("massive_fdd", "multicell") and self.n_paths < 1:
            raise ConfigError("multipath scenarios need n_paths >= 1")
        if self.f_up <= 0 or self.f_down <= 0 or self.spacing <= 0:
            raise ConfigError("frequencies and antenna spacing must be positive")
        if self.pilot_length is not None and self.pilot_length < 1:
            raise ConfigError("pilot_length must be at least 1")
        if self.pilot_power is not None and self.pilot_power <= 0:
            raise ConfigError("pilot_power must be positive")
        if self.pilot_noise is not None and self.pilot_noise < 0:
            raise ConfigError("pilot_noise must be nonnegative")
        if not 0 <= self.min_distance < self.radius:
            raise ConfigError("need 0 <= min_distance < radius")

    @property
    def users(self):
        """Total users visible to one BS."""
        return self.k * self.n_cells

    @property
    def pilot_p(self):
        return self.power if self.pilot_power is None else self.pilot_power

    @property
    def pilot_n0(self):
        return self.noise if self.pilot_noise is None else self.pilot_noise

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**data)

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _crandn(rng, shape, variance=1.0):
    return pilots.complex_noise(rng, shape, variance)


def random_unitary(n, rng):
    """Haar unitary from the QR factors of a Gaussian matrix."""
    Z = _crandn(rng, (n, n))
    Qm, R = np.linalg.qr(Z)
    d = np.diagonal(R)
    return Qm * (d / np.abs(d))[None, :]


@dataclass
class MappingState:
    """Front-end mismatch ``h_D = c_k Phi_k h_U`` held fixed per scenario.

    ``phi`` has shape ``(U, N_t, N_t)`` with one matrix per user when
    ``per_user_phi`` is set, and otherwise one shared BS-side matrix
    repeated. ``c`` has shape ``(U,)``.
    """

    phi: np.ndarray
    c: np.ndarray

    @classmethod
    def create(cls, config):
        rng = np.random.default_rng([config.seed, MAPPING_STREAM])
        U = config.users
        if config.per_user_phi:
            phi = np.stack([random_unitary(config.n_t, rng) for _ in range(U)])
        else:
            phi = np.repeat(random_unitary(config.n_t, rng)[None], U, axis=0)
        return cls(phi=phi, c=_crandn(rng, (U,)))

    @classmethod
    def identity(cls, n_t, users):
        return cls(phi=np.repeat(np.eye(n_t, dtype=complex)[None], users, axis=0), c=np.ones(users, dtype=complex))

    def apply(self, H, users=None):
        """Left-multiply column ``u`` of ``H`` by ``c_u Phi_u``."""
        users = np.arange(H.shape[-1]) if users is None else np.asarray(users)
        cols = np.einsum("unm,...mu->...nu", self.phi[users], H)
        return cols * self.c[users]


# --- small-scale channels -----------------------------------------------------------

def gen_uplink_rayleigh(config, rng):
    """I.i.d. CN(0, 1) uplink channel of shape ``(N_t, K)``."""
    if config.kind not in ("small_tdd", "toy_square"):
        raise ConfigError(f"Rayleigh channels belong to small_tdd/toy_square, not {config.kind}")
    return _crandn(rng, (config.n_t, config.k))


def array_response(theta, n_t, spacing, freq, f_ref):
    """ULA response ``exp(-j 2 pi (d / lambda) i sin(theta))``.

    ``spacing`` is in wavelengths at ``f_ref``; ``theta`` may be any shape
    and the antenna index is appended as the last axis.
    """
    ratio = spacing * freq / f_ref
    i = np.arange(n_t)
    return np.exp(-2j * np.pi * ratio * np.sin(np.asarray(theta))[..., None] * i)


@dataclass
class PathParams:
    """Per-link multipath draws, each of shape ``(links, L_p)``."""

    alpha: np.ndarray   # uplink complex gains
    tau: np.ndarray
    phi: np.ndarray
    theta: np.ndarray


def draw_paths(rng, links, n_paths):
    """Mean angle on [-pi/3, pi/3], spread on [-pi/6, pi/6], path angles
    uniform across the spread. ``E|alpha_u|^2 = 1/sqrt(2)`` so that the
    squared downlink gains have unit second moment."""
    mean = rng.uniform(-np.pi / 3, np.pi / 3, (links, 1))
    spread = rng.uniform(-np.pi / 6, np.pi / 6, (links, 1))
    theta = mean + spread * rng.uniform(-0.5, 0.5, (links, n_paths))
    tau = rng.uniform(0.0, 1e-4, (links, n_paths))
    phi = rng.uniform(-np.pi, np.pi, (links, n_paths))
    alpha = _crandn(rng, (links, n_paths), 1.0 / np.sqrt(2.0))
    return PathParams(alpha=alpha, tau=tau, phi=phi, theta=theta)


def channel_from_paths(paths, n_t, freq, config, gains=None):
    """Multipath sum, one column per link: shape ``(N_t, links)``."""
    g = paths.alpha if gains is None else gains
    coef = g * np.exp(-2j * np.pi * freq * paths.tau + 1j * paths.phi)
    a = array_response(paths.theta, n_t, config.spacing, freq, config.f_down)
    return np.einsum("lp,lpn->nl", coef, a)


def gen_ula_channel(config, rng, direction="uplink", links=None):
    """ULA multipath channel ``(N_t, links)`` and the path draws behind it."""
    if direction not in ("uplink", "downlink"):
        raise ValueError("direction must be 'uplink' or 'downlink'")
    links = config.k if links is None else links
    paths = draw_paths(rng, links, config.n_paths)
    freq = config.f_up if direction == "uplink" else config.f_down
    gains = paths.alpha if direction == "uplink" else paths.alpha ** 2
    return channel_from_paths(paths, config.n_t, freq, config, gains), paths


def map_downlink(config, mapping, h_up=None, paths=None, users=None):
    """Deterministic downlink channel for one uplink realization.

    ``toy_square`` squares entries, ``small_tdd`` applies ``c Phi``, and the
    multipath kinds rebuild the sum with squared gains at the downlink
    frequency before applying ``c Phi``.
    """
    if config.kind == "toy_square":
        return np.asarray(h_up) ** 2
    if config.kind == "small_tdd":
        return mapping.apply(np.asarray(h_up), users)
    if paths is None:
        raise ValueError("multipath mapping needs the path parameters")
    raw = channel_from_paths(paths, config.n_t, config.f_down, config, paths.alpha ** 2)
    return mapping.apply(raw, users)


# --- multicell geometry -----------------------------------------------------------

def hex_centers(n_cells, radius):
    """Cell centers in spiral order for hexagons of circumradius ``radius``."""
    axial = [(0, 0)]
    ring = 1
    steps = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)]
    while len(axial) < n_cells:
        q, r = -ring, ring  # start corner of the ring
        for dq, dr in steps:
            for _ in range(ring):
                axial.append((q, r))
                q, r = q + dq, r + dr
        ring += 1
    axial = np.array(axial[:n_cells], dtype=float)
    x = np.sqrt(3.0) * radius * (axial[:, 0] + axial[:, 1] / 2.0)
    y = 1.5 * radius * axial[:, 1]
    return np.stack([x, y], axis=1)


def in_hexagon(xy, radius):
    x, y = np.abs(xy[..., 0]), np.abs(xy[..., 1])
    return (x <= np.sqrt(3.0) / 2.0 * radius) & (y <= radius - x / np.sqrt(3.0))


def path_loss_db(d_km, direction):
    if direction == "uplink":
        return 127.0 + 30.0 * np.log10(d_km)
    return 128.1 + 37.6 * np.log10(d_km)


def path_gain(d_km, direction):
    return 10.0 ** (-path_loss_db(d_km, direction) / 10.0)


@dataclass
class MulticellTopology:
    bs: np.ndarray          # (N_c, 2) meters
    users: np.ndarray       # (N_c * K, 2) meters, cell-major
    serving: np.ndarray     # (N_c * K,)
    radius: float
    gain_up: np.ndarray     # (N_c, N_c * K) linear power gains
    gain_down: np.ndarray

    @property
    def distances(self):
        return np.linalg.norm(self.bs[:, None, :] - self.users[None, :, :], axis=-1)


def gen_topology(config, rng, max_attempts=1000):
    """Drop ``K`` users uniformly in each hexagonal cell, at least
    ``min_distance`` from their BS."""
    bs = hex_centers(config.n_cells, config.radius)
    users, serving = [], []
    for cell in range(config.n_cells):
        for _ in range(config.k):
            for _ in range(max_attempts):
                off = rng.uniform(-config.radius, config.radius, 2)
                if in_hexagon(off, config.radius) and np.hypot(*off) >= config.min_distance:
                    break
            else:
                raise GeometryError(f"could not place a user in cell {cell} after {max_attempts} attempts")
            users.append(bs[cell] + off)
            serving.append(cell)
    users = np.array(users)
    d_km = np.linalg.norm(bs[:, None, :] - users[None, :, :], axis=-1) / 1000.0
    return MulticellTopology(bs=bs, users=users, serving=np.array(serving), radius=config.radius,
                             gain_up=path_gain(d_km, "uplink"), gain_down=path_gain(d_km, "downlink"))


# --- samples and datasets --------------------------------------------------------------

def sample_rng(config, split, index):
    if split not in SPLIT_TAGS:
        raise ConfigError(f"unknown split {split!r}")
    return np.random.default_rng([config.seed, SPLIT_TAGS[split], index])


def draw_sample(config, mapping, rng):
    """One uplink/downlink pair, plus the LS pilot input when configured.

    Single cell: ``(N_t, K)`` matrices. Multicell: ``(N_c, N_t, N_c K)``
    stacks where slice ``j`` is what BS ``j`` sees of every user.
    """
    out = {}
    if config.kind in ("small_tdd", "toy_square"):
        h_up = gen_uplink_rayleigh(config, rng)
        h_down = map_downlink(config, mapping, h_up=h_up)
    elif config.kind == "massive_fdd":
        h_up, paths = gen_ula_channel(config, rng, "uplink")
        h_down = map_downlink(config, mapping, paths=paths)
    else:
        topo = gen_topology(config, rng)
        U = config.users
        h_up = np.empty((config.n_cells, config.n_t, U), dtype=complex)
        h_down = np.empty_like(h_up)
        for j in range(config.n_cells):
            small, paths = gen_ula_channel(config, rng, "uplink", links=U)
            h_up[j] = small * np.sqrt(topo.gain_up[j])
            h_down[j] = map_downlink(config, mapping, paths=paths) * np.sqrt(topo.gain_down[j])
        out["positions"] = topo.users
    out["h_up"] = h_up
    out["h_down"] = h_down
    if config.pilot_length is not None:
        block = pilots.pilot_block(h_up, config.pilot_length, config.pilot_p, config.pilot_n0, rng)
        out["y_ls"] = block.Y_ls
    return out


@dataclass
class Dataset:
    config: ScenarioConfig
    split: str
    count: int
    arrays: dict = field(default_factory=dict)
    labeled: bool = False

    @property
    def scenario_hash(self):
        return self.config.digest()

    def __len__(self):
        return self.count

    def manifest(self):
        index = []
        for name, arr in self.arrays.items():
            index.append({"name": name, "file": f"{name}.bin", "shape": list(arr.shape),
                          "dtype": "complex128" if np.iscomplexobj(arr) else "float64"})
        return {"format": DATASET_FORMAT, "config": self.config.to_dict(), "seed": self.config.seed,
                "split": self.split, "count": self.count, "labeled": self.labeled,
                "scenario_hash": self.scenario_hash, "tensors": index}

    def save(self, path):
        os.makedirs(path, exist_ok=True)
        for name, arr in self.arrays.items():
            arr = np.asarray(arr)
            raw = (np.ascontiguousarray(arr, dtype="<c16").view("<f8") if np.iscomplexobj(arr)
                   else np.ascontiguousarray(arr, dtype="<f8"))
            with open(os.path.join(path, f"{name}.bin"), "wb") as fh:
                fh.write(raw.tobytes())
        with open(os.path.join(path, "manifest.json"), "w") as fh:
            json.dump(self.manifest(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        try:
            with open(os.path.join(path, "manifest.json")) as fh:
                man = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"cannot read dataset manifest in {path}: {exc}") from exc
        if man.get("format") != DATASET_FORMAT:
            raise DatasetError(f"unsupported dataset format {man.get('format')!r}")
        config = ScenarioConfig.from_dict(man["config"])
        if config.digest() != man["scenario_hash"]:
            raise DatasetError("scenario hash does not match the stored config")
        arrays = {}
        for entry in man["tensors"]:
            raw = np.fromfile(os.path.join(path, entry["file"]), dtype="<f8")
            shape = tuple(entry["shape"])
            if entry["dtype"] == "complex128":
                arr = raw.view("<c16")
            else:
                arr = raw
            if arr.size != int(np.prod(shape)):
                raise DatasetError(f"tensor {entry['name']} has {arr.size} entries, manifest says {shape}")
            arrays[entry["name"]] = arr.reshape(shape)
        return cls(config=config, split=man["split"], count=man["count"], arrays=arrays, labeled=man["labeled"])


LABEL_CHUNK = 256


def build_dataset(config, count, labeler=None, split="train", workers=1):
    """Generate ``count`` independent samples, labeling each downlink channel
    with ``labeler`` (a callback returning a dict of arrays). A labeler
    with a ``batch`` method is called on stacks of channels instead.

    Sample ``i`` uses its own stream seeded by ``(seed, split, i)``, so the
    result does not depend on ``workers``.
    """
    if count < 0:
        raise ConfigError("count must be nonnegative")
    mapping = MappingState.create(config)

    batched = labeler is not None and hasattr(labeler, "batch")

    def one(i):
        s = draw_sample(config, mapping, sample_rng(config, split, i))
        if labeler is not None and not batched:
            try:
                labels = labeler(s["h_down"])
            except Exception as exc:
                raise SolverFailure(i, exc) from exc
            s.update({f"label_{k}": np.asarray(v, dtype=float) for k, v in labels.items()})
        return s

    if workers > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(one, range(count)))
    else:
        samples = [one(i) for i in range(count)]
    if batched:
        for start in range(0, count, LABEL_CHUNK):
            part = samples[start:start + LABEL_CHUNK]
            try:
                labels = labeler.batch(np.stack([s["h_down"] for s in part]))
            except Exception as exc:
                where = start + int(getattr(exc, "index", 0))
                raise SolverFailure(where, exc) from exc
            for j, s in enumerate(part):
                s.update({f"label_{k}": np.asarray(v[j], dtype=float) for k, v in labels.items()})
    arrays = {}
    if samples:
        for name in samples[0]:
            arrays[name] = np.stack([s[name] for s in samples])
    return Dataset(config=config, split=split, count=count, arrays=arrays,
                   labeled=labeler is not None and count > 0)


def nmse(estimate, truth):
    """Mean over samples of ``||H_hat - H||^2 / ||H||^2``; the last two axes
    hold one channel matrix."""
    estimate = np.asarray(estimate)
    truth = np.asarray(truth)
    if estimate.shape != truth.shape:
        raise ShapeMismatch(f"estimate {estimate.shape} vs truth {truth.shape}")
    if truth.ndim < 2:
        truth, estimate = truth[None, :, None], estimate[None, :, None]
    den = np.sum(np.abs(truth) ** 2, axis=(-2, -1))
    if np.any(den == 0):
        raise DivisionByZero("reference channel has zero norm")
    num = np.sum(np.abs(estimate - truth) ** 2, axis=(-2, -1))
    return float(np.mean(num / den))
