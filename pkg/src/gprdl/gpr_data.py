"""A-scan / B-scan data model, synthetic scene generation and profile handling.

Pixel grids are ``(n_samples, n_positions)``: rows are fast-time samples,
columns are antenna positions along the scan line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, InputError, NormalizationError

DEFAULT_SAMPLES = 512
DEFAULT_DT = 25e-12
DEFAULT_DX = 0.01

CLUTTER = 0
MINE_LARGE = 1
MINE_MEDIUM = 2
MINE_SMALL = 3
CLASS_IDS = (CLUTTER, MINE_LARGE, MINE_MEDIUM, MINE_SMALL)
CLASS_NAMES = {
    CLUTTER: "clutter",
    MINE_LARGE: "mine_large",
    MINE_MEDIUM: "mine_medium",
    MINE_SMALL: "mine_small",
}
MINE_CLASSES = (MINE_LARGE, MINE_MEDIUM, MINE_SMALL)


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AScan:
    samples: np.ndarray
    dt: float = DEFAULT_DT

    def __post_init__(self):
        s = _frozen(self.samples)
        if s.ndim != 1 or s.size < 2:
            raise InputError("an A-scan needs at least two samples")
        if not np.all(np.isfinite(s)):
            raise InputError("A-scan contains non-finite samples")
        if not self.dt > 0:
            raise InputError("sample interval dt must be positive")
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size

    def __eq__(self, other):
        return (isinstance(other, AScan) and self.dt == other.dt
                and np.array_equal(self.samples, other.samples))


@dataclass(frozen=True, eq=False)
class BScan:
    """Stack of equal-length A-scans; ``data[:, p]`` is the A-scan at position p."""

    data: np.ndarray
    dt: float = DEFAULT_DT
    dx: float = DEFAULT_DX
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        d = _frozen(self.data)
        if d.ndim != 2 or d.shape[0] < 2 or d.shape[1] < 1:
            raise InputError(f"B-scan data must be (samples>=2, positions>=1), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise InputError("B-scan contains non-finite samples")
        if not self.dt > 0 or not self.dx > 0:
            raise InputError("dt and dx must be positive")
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @classmethod
    def from_columns(cls, columns: Sequence[AScan], dx=DEFAULT_DX, metadata=None):
        if not columns:
            raise InputError("a B-scan needs at least one A-scan")
        lengths = {len(c) for c in columns}
        if len(lengths) != 1:
            raise InputError("A-scans of a B-scan must share one length")
        dts = {c.dt for c in columns}
        if len(dts) != 1:
            raise InputError("A-scans of a B-scan must share one sample interval")
        data = np.stack([c.samples for c in columns], axis=1)
        return cls(data, columns[0].dt, dx, metadata or {})

    @property
    def n_samples(self):
        return self.data.shape[0]

    @property
    def n_positions(self):
        return self.data.shape[1]

    @property
    def columns(self):
        return [AScan(self.data[:, p], self.dt) for p in range(self.n_positions)]

    def __eq__(self, other):
        return (isinstance(other, BScan) and self.dt == other.dt and self.dx == other.dx
                and self.metadata == other.metadata
                and self.data.shape == other.data.shape
                and np.array_equal(self.data, other.data))


@dataclass(frozen=True, eq=False)
class ProfileMatrix:
    """Profiles as columns of an ``m x L`` matrix with optional integer labels."""

    data: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        d = _frozen(self.data)
        if d.ndim != 2 or d.shape[1] < 1:
            raise InputError(f"profile matrix must be 2-D with L >= 1, got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise InputError("profile matrix contains non-finite entries")
        object.__setattr__(self, "data", d)
        if self.labels is not None:
            lab = _frozen(self.labels, dtype=np.int64)
            if lab.shape != (d.shape[1],):
                raise InputError(f"{lab.size} labels for {d.shape[1]} profiles")
            object.__setattr__(self, "labels", lab)

    @property
    def m(self):
        return self.data.shape[0]

    @property
    def n_profiles(self):
        return self.data.shape[1]

    def column(self, i):
        return self.data[:, i]

    def __eq__(self, other):
        if not isinstance(other, ProfileMatrix) or self.data.shape != other.data.shape:
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        if self.labels is not None and not np.array_equal(self.labels, other.labels):
            return False
        return np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class SceneTruth:
    """Ground-truth class per pixel; each mine class's halo is ``labels == class_id``."""

    labels: np.ndarray

    def __post_init__(self):
        lab = _frozen(self.labels, dtype=np.int64)
        if lab.ndim != 2:
            raise InputError("truth grid must be 2-D")
        if not np.isin(lab, CLASS_IDS).all():
            raise InputError("truth grid holds an unknown class id")
        object.__setattr__(self, "labels", lab)

    @classmethod
    def from_masks(cls, masks: dict):
        shape = next(iter(masks.values())).shape
        labels = np.zeros(shape, dtype=np.int64)
        seen = np.zeros(shape, dtype=bool)
        for cid, mask in masks.items():
            if cid == CLUTTER:
                continue
            mask = np.asarray(mask, dtype=bool)
            if (seen & mask).any():
                raise InputError("halo masks must be mutually disjoint")
            seen |= mask
            labels[mask] = cid
        return cls(labels)

    @property
    def shape(self):
        return self.labels.shape

    @property
    def class_ids(self):
        return CLASS_IDS

    @property
    def halo_masks(self):
        return {cid: self.labels == cid for cid in CLASS_IDS}

    def __eq__(self, other):
        return isinstance(other, SceneTruth) and np.array_equal(self.labels, other.labels)


@dataclass(frozen=True)
class Target:
    x0: float
    depth: float
    radius: float
    reflectivity: float
    class_id: int = MINE_LARGE


@dataclass(frozen=True)
class SyntheticSceneConfig:
    n_positions: int = 100
    n_samples: int = DEFAULT_SAMPLES
    targets: tuple = ()
    wave_velocity: float = 1.2e8
    wavelet_center_freq: float = 2e9
    clutter_std: float = 0.0
    clutter_corr_length: float = 0.20
    surface_ringing_amp: float = 0.0
    seed: int = 0
    dt: float = DEFAULT_DT
    dx: float = DEFAULT_DX
    ringing_decay: float = 1e-9

    def __post_init__(self):
        targets = tuple(t if isinstance(t, Target) else Target(**t) for t in self.targets)
        object.__setattr__(self, "targets", targets)
        self.validate()

    def validate(self):
        if self.n_positions < 1 or self.n_samples < 2:
            raise ConfigurationError("scene needs n_positions >= 1 and n_samples >= 2")
        for name in ("wave_velocity", "wavelet_center_freq", "dt", "dx",
                     "clutter_corr_length", "ringing_decay"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigurationError(f"{name} must be positive and finite, got {v}")
        if not (self.clutter_std >= 0 and math.isfinite(self.clutter_std)):
            raise ConfigurationError("clutter_std must be a finite non-negative number")
        if not math.isfinite(self.surface_ringing_amp):
            raise ConfigurationError("surface_ringing_amp must be finite")
        for t in self.targets:
            if not (t.depth > 0 and t.radius > 0):
                raise ConfigurationError(f"target depth and radius must be positive: {t}")
            if not math.isfinite(t.reflectivity) or not math.isfinite(t.x0):
                raise ConfigurationError(f"target reflectivity and x0 must be finite: {t}")
            if t.class_id not in MINE_CLASSES:
                raise ConfigurationError(f"target class must be a mine class, got {t.class_id}")

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["targets"] = [vars(t).copy() for t in self.targets]
        return d


def ricker(t, freq):
    """Ricker wavelet with peak value 1 at ``t = 0``."""
    a = (math.pi * freq * np.asarray(t)) ** 2
    return (1.0 - 2.0 * a) * np.exp(-a)


def wavelet_half_width(freq):
    """Time after which the Ricker envelope has fallen below exp(-6)."""
    return math.sqrt(6.0) / (math.pi * freq)


def two_way_delay(x, x0, depth, velocity):
    return (2.0 / velocity) * np.sqrt(depth ** 2 + (np.asarray(x) - x0) ** 2)


def _gaussian_kernel(fwhm):
    sigma = max(fwhm, 1e-12) / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    r = max(int(math.ceil(3.0 * sigma)), 0)
    k = np.exp(-np.arange(-r, r + 1) ** 2 / (2.0 * sigma ** 2))
    return k / np.linalg.norm(k)


def _wavelet_kernel(freq, dt):
    h = int(math.ceil(wavelet_half_width(freq) / dt))
    k = ricker(np.arange(-h, h + 1) * dt, freq)
    return k / np.linalg.norm(k)


def _correlated_clutter(cfg: SyntheticSceneConfig, rng):
    kt = _wavelet_kernel(cfg.wavelet_center_freq, cfg.dt)
    kx = _gaussian_kernel(cfg.clutter_corr_length / cfg.dx)
    rt, rx = kt.size // 2, kx.size // 2
    white = rng.standard_normal((cfg.n_samples + 2 * rt, cfg.n_positions + 2 * rx))
    # unit-norm kernels keep the smoothed field at unit variance
    tmp = np.stack([np.convolve(white[:, p], kt, mode="valid")
                    for p in range(white.shape[1])], axis=1)
    out = np.stack([np.convolve(tmp[i], kx, mode="valid") for i in range(tmp.shape[0])])
    return cfg.clutter_std * out


def _halo_bounds(cfg: SyntheticSceneConfig, target: Target):
    """Index ranges (sample_lo, sample_hi, pos_lo, pos_hi), inclusive, clipped to the grid."""
    wl = 2.0 * wavelet_half_width(cfg.wavelet_center_freq)
    t0 = 2.0 * target.depth / cfg.wave_velocity
    reach = cfg.wave_velocity * (t0 + wl) / 2.0
    footprint = math.sqrt(max(reach ** 2 - target.depth ** 2, 0.0))
    half = target.radius + footprint
    p_lo = max(int(math.ceil((target.x0 - half) / cfg.dx - 1e-9)), 0)
    p_hi = min(int(math.floor((target.x0 + half) / cfg.dx + 1e-9)), cfg.n_positions - 1)
    s_lo = max(int(math.floor((t0 - wl) / cfg.dt)), 0)
    s_hi = min(int(math.ceil((t0 + 2.0 * wl) / cfg.dt)), cfg.n_samples - 1)
    return s_lo, s_hi, p_lo, p_hi


def generate_synthetic_bscan(config: SyntheticSceneConfig):
    """Render a synthetic B-scan and its halo ground truth.

    Each target contributes a Ricker echo centred on the two-way delay
    ``2/v * sqrt(depth^2 + (x - x0)^2)`` with amplitude
    ``reflectivity * t(x0) / t(x)``. Correlated clutter and the antenna
    ringing are added on top. The output depends on ``config`` only.
    """
    cfg = config
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    t = np.arange(cfg.n_samples) * cfg.dt
    x = np.arange(cfg.n_positions) * cfg.dx
    data = np.zeros((cfg.n_samples, cfg.n_positions))
    labels = np.zeros_like(data, dtype=np.int64)

    for target in cfg.targets:
        delays = two_way_delay(x, target.x0, target.depth, cfg.wave_velocity)
        apex = 2.0 * target.depth / cfg.wave_velocity
        amp = target.reflectivity * apex / np.maximum(delays, apex)
        data += amp[None, :] * ricker(t[:, None] - delays[None, :], cfg.wavelet_center_freq)
        s_lo, s_hi, p_lo, p_hi = _halo_bounds(cfg, target)
        if s_lo <= s_hi and p_lo <= p_hi:
            block = labels[s_lo:s_hi + 1, p_lo:p_hi + 1]
            # earlier targets keep overlapping pixels so halos stay disjoint
            block[block == CLUTTER] = target.class_id

    if cfg.clutter_std > 0:
        data += _correlated_clutter(cfg, rng)
    if cfg.surface_ringing_amp != 0:
        ring = (cfg.surface_ringing_amp * np.exp(-t / cfg.ringing_decay)
                * np.cos(2.0 * math.pi * cfg.wavelet_center_freq * t))
        data += ring[:, None]

    meta = {"generator": "synthetic", "seed": cfg.seed}
    return BScan(data, cfg.dt, cfg.dx, meta), SceneTruth(labels)


# ---------------------------------------------------------------------------
# windowing: pixels of a classification map are (depth window, position)


@dataclass(frozen=True)
class WindowConfig:
    """Depth windows cut from each A-scan; ``length=None`` means the whole A-scan."""

    length: int | None = None
    stride: int | None = None

    def starts(self, n_samples):
        length = self.length or n_samples
        if length > n_samples or length < 2:
            raise InputError(f"window length {length} does not fit {n_samples} samples")
        stride = self.stride or length
        return list(range(0, n_samples - length + 1, stride)), length


def window_profiles(bscan: BScan, window: WindowConfig = WindowConfig()):
    """Sub-profiles ordered window-major: column ``w * n_positions + p``."""
    starts, length = window.starts(bscan.n_samples)
    return np.concatenate([bscan.data[s:s + length, :] for s in starts], axis=1)


def truth_on_grid(truth: SceneTruth, window: WindowConfig = WindowConfig()):
    """Project a sample-level truth onto the (window, position) pixel grid.

    A window pixel takes the mine class that covers most of its samples
    (ties to the lower class id); untouched pixels are clutter.
    """
    starts, length = window.starts(truth.shape[0])
    out = np.zeros((len(starts), truth.shape[1]), dtype=np.int64)
    for w, s in enumerate(starts):
        seg = truth.labels[s:s + length, :]
        counts = np.stack([(seg == c).sum(axis=0) for c in MINE_CLASSES])
        best = np.argmax(counts, axis=0)
        hit = counts.max(axis=0) > 0
        out[w, hit] = np.asarray(MINE_CLASSES)[best[hit]]
    return SceneTruth(out)


def column_labels(truth: SceneTruth):
    return truth_on_grid(truth, WindowConfig()).labels[0]


def extract_training_profiles(scans: Sequence[BScan], truths: Sequence[SceneTruth],
                              per_scan_count: int, near_target_only: bool = False,
                              seed: int = 0):
    """Draw ``per_scan_count`` distinct random columns from each scan.

    With ``near_target_only`` only columns crossing a mine halo are
    candidates. Labels are taken from the column's truth class.
    """
    if len(scans) != len(truths):
        raise InputError("one truth grid is needed per scan")
    rng = np.random.default_rng(seed)
    cols, labs = [], []
    for k, (scan, truth) in enumerate(zip(scans, truths)):
        if truth.shape != scan.data.shape:
            raise InputError(f"truth grid of scan {k} does not match its data")
        clab = column_labels(truth)
        cand = np.flatnonzero(clab != CLUTTER) if near_target_only else np.arange(scan.n_positions)
        if cand.size == 0:
            raise DataError(f"scan {k} has no candidate columns")
        if per_scan_count > cand.size:
            raise DataError(f"scan {k}: {per_scan_count} profiles requested "
                            f"but only {cand.size} candidates")
        pick = rng.choice(cand, size=per_scan_count, replace=False)
        cols.append(scan.data[:, pick])
        labs.append(clab[pick])
    if not cols:
        raise DataError("no scans given")
    return ProfileMatrix(np.concatenate(cols, axis=1), np.concatenate(labs))


NORMALIZE_MODES = ("none", "unit_l2", "zscore")


def normalize_profiles(pm: ProfileMatrix, mode: str = "none"):
    if mode not in NORMALIZE_MODES:
        raise InputError(f"unknown normalization mode {mode!r}")
    if mode == "none":
        return pm
    data = pm.data
    if mode == "unit_l2":
        norms = np.linalg.norm(data, axis=0)
        bad = np.flatnonzero(norms == 0)
        if bad.size:
            raise NormalizationError(f"column {bad[0]} is all zeros", column=int(bad[0]))
        out = data / norms
    else:
        mean = data.mean(axis=0)
        centred = data - mean
        std = np.sqrt((centred ** 2).mean(axis=0))
        bad = np.flatnonzero(std == 0)
        if bad.size:
            raise NormalizationError(f"column {bad[0]} has zero variance", column=int(bad[0]))
        out = centred / std
    return ProfileMatrix(out, pm.labels)


def normalize_columns(data, mode: str = "none"):
    """Column normalization that leaves degenerate columns untouched.

    Used when classifying arbitrary scene pixels, where an all-zero (or
    constant) window is legitimate input rather than an error.
    """
    if mode not in NORMALIZE_MODES:
        raise InputError(f"unknown normalization mode {mode!r}")
    data = np.asarray(data, dtype=np.float64)
    if mode == "none":
        return data
    if mode == "unit_l2":
        norms = np.linalg.norm(data, axis=0)
        return data / np.where(norms > 0, norms, 1.0)
    centred = data - data.mean(axis=0)
    std = np.sqrt((centred ** 2).mean(axis=0))
    return centred / np.where(std > 0, std, 1.0)


def concat_profiles(parts: Iterable[ProfileMatrix]):
    parts = list(parts)
    data = np.concatenate([p.data for p in parts], axis=1)
    if all(p.labels is not None for p in parts):
        return ProfileMatrix(data, np.concatenate([p.labels for p in parts]))
    return ProfileMatrix(data)
