"""End-to-end orchestration: scenes, dictionaries, SVM, maps and the benchmark.

Every stochastic stage draws its seed from ``stage_seed(global_seed, name)``
so stages can be rerun independently and reproduce the same values.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .classification import (DEFAULT_C_GRID, DEFAULT_GAMMA_GRID, ClassMap, RbfSvmModel,
                             classify_bscan, cross_validate, encode_features, pcc, svm_train)
from .dict_learning import DictLearnConfig, train
from .errors import ConfigurationError
from .gpr_data import (CLASS_NAMES, CLUTTER, MINE_CLASSES, MINE_LARGE, MINE_MEDIUM, MINE_SMALL,
                       BScan, ProfileMatrix, SceneTruth, SyntheticSceneConfig, Target, WindowConfig,
                       generate_synthetic_bscan, normalize_columns, truth_on_grid, window_profiles)
from .sparse_coding import CodingParams, Dictionary, mean_sparsity

log = logging.getLogger(__name__)

METHODS = ("ksvd", "odl")
TIMING_KEYS = ("learn_seconds", "learn_total_seconds", "encode_seconds", "classify_seconds")


def stage_seed(seed: int, stage: str) -> int:
    """64-bit seed for ``stage`` derived from the global seed."""
    digest = hashlib.sha256(f"{int(seed)}/{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


DEFAULT_CONFIG = {
    "seed": 0,
    "scene": {"n_positions": 100, "n_samples": 512, "clutter_std": 0.05,
              "clutter_corr_length": 0.20, "surface_ringing_amp": 0.5,
              "wave_velocity": 1.2e8, "wavelet_center_freq": 2e9},
    "targets": {
        "mine_large": {"radius": 0.08, "reflectivity": 1.0},
        "mine_medium": {"radius": 0.05, "reflectivity": 0.6},
        "mine_small": {"radius": 0.03, "reflectivity": 0.3},
        "depth_range": [0.05, 0.30],
        "reflectivity_jitter": 0.1,
    },
    "n_train_scenes": 4,
    "n_test_scenes": 2,
    "window": {"length": 128, "stride": 64},
    "normalize": "none",
    "dict_train_profiles": 1000,
    "dictionary": {
        "ksvd": {"n_atoms": 256, "iterations": 10,
                 "coding": {"method": "omp", "alpha": 0.1}, "init": "random_columns"},
        "odl": {"n_atoms": 256, "iterations": 10,
                "coding": {"method": "lars_lasso", "lam": 0.1}, "init": "random_columns",
                "batch_size": 256, "forget": 0.999},
    },
    "svm": {"C": list(DEFAULT_C_GRID), "gamma": list(DEFAULT_GAMMA_GRID), "nu": 10,
            "max_train": 1000},
    "sweep": {"grid": [[1, 128], [10, 128], [40, 128]], "reference": [1, 128],
              "profiles": 500},
}

_CLASS_KEYS = {MINE_LARGE: "mine_large", MINE_MEDIUM: "mine_medium", MINE_SMALL: "mine_small"}


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class PipelineConfig:
    """Benchmark configuration as a nested JSON-compatible mapping.

    Missing keys fall back to ``DEFAULT_CONFIG``.
    """

    raw: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.raw) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
        self.raw = _merge(DEFAULT_CONFIG, self.raw)
        for m in self.raw["dictionary"]:
            if m not in METHODS:
                raise ConfigurationError(f"unknown method {m!r} in dictionary section")
        self.window  # validates
        for m in METHODS:
            self.learn_config(m)

    @classmethod
    def from_json(cls, text):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"configuration is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigurationError("configuration must be a JSON object")
        return cls(raw)

    @property
    def seed(self):
        return int(self.raw["seed"])

    @property
    def window(self):
        w = self.raw["window"]
        return WindowConfig(w.get("length"), w.get("stride"))

    def learn_config(self, method) -> DictLearnConfig:
        try:
            return DictLearnConfig(seed=stage_seed(self.seed, f"learn/{method}"),
                                   **self.raw["dictionary"][method])
        except TypeError as exc:
            raise ConfigurationError(f"dictionary.{method}: {exc}") from None

    def coding(self, method) -> CodingParams:
        return self.learn_config(method).coding

    def scene_config(self, role, index) -> SyntheticSceneConfig:
        seed = stage_seed(self.seed, f"scene/{role}/{index}")
        rng = np.random.default_rng(seed)
        sc = dict(self.raw["scene"])
        tcfg = self.raw["targets"]
        width = sc["n_positions"] * sc.get("dx", SyntheticSceneConfig.dx)
        lo, hi = tcfg["depth_range"]
        classes = [MINE_LARGE, MINE_MEDIUM, MINE_SMALL]
        rng.shuffle(classes)
        # one target per class in equal lanes across the scan
        lane = width / len(classes)
        targets = []
        for k, cid in enumerate(classes):
            props = tcfg[_CLASS_KEYS[cid]]
            x0 = lane * (k + 0.5) + rng.uniform(-0.2, 0.2) * lane
            jitter = 1.0 + tcfg["reflectivity_jitter"] * rng.uniform(-1.0, 1.0)
            targets.append(Target(float(x0), float(rng.uniform(lo, hi)), float(props["radius"]),
                                  float(props["reflectivity"] * jitter), cid))
        try:
            return SyntheticSceneConfig(targets=tuple(targets), seed=seed, **sc)
        except TypeError as exc:
            raise ConfigurationError(f"scene: {exc}") from None

    def to_json(self):
        return json.dumps(self.raw, indent=2, sort_keys=True)


def make_scenes(cfg: PipelineConfig, role: str):
    n = cfg.raw[f"n_{role}_scenes"]
    return [generate_synthetic_bscan(cfg.scene_config(role, i)) for i in range(n)]


def pixel_set(scenes, window: WindowConfig, normalize="none"):
    """All (window, position) pixels of ``scenes`` with their truth labels."""
    data, labels = [], []
    for bscan, truth in scenes:
        data.append(normalize_columns(window_profiles(bscan, window), normalize))
        labels.append(truth_on_grid(truth, window).labels.ravel())
    return ProfileMatrix(np.concatenate(data, axis=1), np.concatenate(labels))


def _subsample(pm: ProfileMatrix, count, seed):
    if count is None or count >= pm.n_profiles:
        return pm
    idx = np.sort(np.random.default_rng(seed).choice(pm.n_profiles, size=count, replace=False))
    return ProfileMatrix(pm.data[:, idx], pm.labels[idx])


@dataclass
class MethodResult:
    method: str
    dictionary: Dictionary
    model: RbfSvmModel
    maps: list
    pcc: dict
    counts: dict
    mean_sparsity: float
    learn_seconds: float
    learn_total_seconds: float
    encode_seconds: float
    classify_seconds: float
    cv_best: tuple
    cv_accuracy: float
    objective_trace: list

    def summary(self):
        return {"learn_seconds": self.learn_seconds,
                "learn_total_seconds": self.learn_total_seconds,
                "encode_seconds": self.encode_seconds,
                "classify_seconds": self.classify_seconds,
                "mean_sparsity": self.mean_sparsity,
                "svm": {"C": self.cv_best[0], "gamma": self.cv_best[1],
                        "cv_accuracy": self.cv_accuracy},
                "pcc": self.pcc, "counts": self.counts,
                "objective_trace": self.objective_trace}


def train_svm(features, labels, svm_cfg, seed):
    grid = [(c, g) for c in svm_cfg["C"] for g in svm_cfg["gamma"]]
    cv = cross_validate(features, labels, grid, nu=svm_cfg["nu"], seed=seed)
    model = svm_train(features, labels, C=cv.best[0], gamma=cv.best[1])
    return model, cv


def run_method(cfg: PipelineConfig, method: str, dict_profiles: ProfileMatrix,
               svm_pixels: ProfileMatrix, test_scenes):
    lcfg = cfg.learn_config(method)
    t0 = time.perf_counter()
    D, report = train(dict_profiles, lcfg, method)
    learn_total = time.perf_counter() - t0
    log.info("%s: dictionary trained, update %.3fs total %.3fs", method,
             report.wall_time_update, learn_total)

    t0 = time.perf_counter()
    feats, _ = encode_features(svm_pixels, D, lcfg.coding)
    encode_s = time.perf_counter() - t0
    model, cv = train_svm(feats, svm_pixels.labels, cfg.raw["svm"],
                          stage_seed(cfg.seed, f"svm/{method}"))
    log.info("%s: SVM C=%g gamma=%g cv accuracy %.4f", method, cv.best[0], cv.best[1],
             cv.best_accuracy)

    maps, codes_nnz = [], []
    totals = {cid: [0, 0] for cid in (CLUTTER, *MINE_CLASSES)}
    t0 = time.perf_counter()
    for bscan, truth in test_scenes:
        cmap = classify_bscan(bscan, D, lcfg.coding, model, cfg.window, cfg.raw["normalize"])
        maps.append(cmap)
        rep = pcc(cmap, truth_on_grid(truth, cfg.window))
        for s in rep.scores:
            totals[s.class_id][0] += s.n_correct
            totals[s.class_id][1] += s.n_total
    classify_s = time.perf_counter() - t0

    test_pixels = pixel_set(test_scenes, cfg.window, cfg.raw["normalize"])
    _, test_codes = encode_features(test_pixels, D, lcfg.coding)
    scores = {CLASS_NAMES[c]: (n / t if t else None) for c, (n, t) in totals.items()}
    counts = {CLASS_NAMES[c]: {"n_correct": n, "n_total": t} for c, (n, t) in totals.items()}
    return MethodResult(method, D, model, maps, scores, counts, mean_sparsity(test_codes),
                        report.wall_time_update, learn_total, encode_s, classify_s,
                        cv.best, cv.best_accuracy, list(report.objective_trace))


@dataclass
class BenchmarkReport:
    config: dict
    methods: dict

    def to_dict(self):
        return {"config": self.config,
                "methods": {m: r.summary() for m, r in self.methods.items()}}

    def to_json(self, timings=True):
        d = self.to_dict()
        if not timings:
            for r in d["methods"].values():
                for k in TIMING_KEYS:
                    r.pop(k)
        return json.dumps(d, indent=2, sort_keys=True)

    def pcc_csv(self):
        """Methods as rows, clutter and the three mine classes as columns."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = [CLASS_NAMES[c] for c in (CLUTTER, *MINE_CLASSES)]
        w.writerow(["method", *cols])
        for m, r in self.methods.items():
            w.writerow([m, *("" if r.pcc[c] is None else repr(float(r.pcc[c])) for c in cols)])
        return buf.getvalue()

    def timing_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", *TIMING_KEYS, "mean_sparsity"])
        for m, r in self.methods.items():
            w.writerow([m, *(repr(float(getattr(r, k))) for k in TIMING_KEYS), repr(float(r.mean_sparsity))])
        return buf.getvalue()


def run_benchmark(cfg: PipelineConfig, methods=METHODS) -> BenchmarkReport:
    """Train both dictionaries on identical data and score their SVM maps."""
    train_scenes = make_scenes(cfg, "train")
    test_scenes = make_scenes(cfg, "test")
    pixels = pixel_set(train_scenes, cfg.window, cfg.raw["normalize"])
    dict_profiles = _subsample(pixels, cfg.raw["dict_train_profiles"],
                               stage_seed(cfg.seed, "dict_profiles"))
    svm_pixels = _subsample(pixels, cfg.raw["svm"]["max_train"],
                            stage_seed(cfg.seed, "svm_profiles"))
    results = {m: run_method(cfg, m, dict_profiles, svm_pixels, test_scenes) for m in methods}
    return BenchmarkReport(cfg.raw, results)
