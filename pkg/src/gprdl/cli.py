"""Command line front end.

Every subcommand reads container files, runs one pipeline stage and writes
its artifacts under ``--out``. Exit status: 0 success, 1 usage or
configuration error, 2 data or format error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as cio
from .classification import (DEFAULT_C_GRID, DEFAULT_GAMMA_GRID, ClassMap, classify_bscan,
                             cross_validate, encode_features, pcc, svm_train)
from .dict_analysis import histogram, histogram_csv, parameter_sweep
from .dict_learning import DictLearnConfig, default_config, train
from .errors import ConfigurationError, GprdlError, InputError
from .gpr_data import (BScan, ProfileMatrix, SyntheticSceneConfig, WindowConfig,
                       generate_synthetic_bscan, normalize_columns, truth_on_grid, window_profiles)
from .pipeline import PipelineConfig, run_benchmark, stage_seed
from .sparse_coding import CodingParams

log = logging.getLogger("gprdl")


class UsageError(ConfigurationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


class StageError(Exception):
    """Wraps a package error with the stage or file it came from."""

    def __init__(self, where, exc):
        super().__init__(f"{where}: {exc}")
        self.exit_code = getattr(exc, "exit_code", 2)


def _stage(where, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except GprdlError as exc:
        raise StageError(where, exc) from exc


def _read_config(path):
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise StageError(path, ConfigurationError(f"cannot read configuration: {exc}")) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StageError(path, ConfigurationError(f"invalid JSON: {exc}")) from None
    if not isinstance(raw, dict):
        raise StageError(path, ConfigurationError("configuration must be a JSON object"))
    return raw


def _out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _window(conf):
    w = conf.get("window") or {}
    return WindowConfig(w.get("length"), w.get("stride"))


def _write_text(path, text):
    Path(path).write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


def _load(path, loader=cio.load_any):
    return _stage("load", loader, path)


def _profiles_from(paths, conf):
    """Profile columns from container files: ProfileMatrix as is, B-scans windowed."""
    parts, labels = [], []
    for p in paths:
        obj = _load(p)
        if isinstance(obj, ProfileMatrix):
            parts.append(obj.data)
            labels.append(obj.labels)
        elif isinstance(obj, BScan):
            data = _stage(p, window_profiles, obj, _window(conf))
            parts.append(_stage(p, normalize_columns, data, conf.get("normalize", "none")))
            labels.append(None)
        else:
            raise StageError(p, InputError(f"expected profiles or a B-scan, got {type(obj).__name__}"))
    lab = np.concatenate(labels) if all(x is not None for x in labels) else None
    return ProfileMatrix(np.concatenate(parts, axis=1), lab)


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args):
    conf = _read_config(args.config)
    if args.seed is not None:
        conf["seed"] = args.seed
    scene = _stage("generate", lambda: SyntheticSceneConfig(**conf)) if conf else SyntheticSceneConfig()
    bscan, truth = _stage("generate", generate_synthetic_bscan, scene)
    out = _out(args)
    cio.save_bscan(bscan, out / "bscan.sptr")
    cio.save_truth(truth, out / "truth.sptr")
    _write_text(out / "scene.json", json.dumps(scene.to_dict(), indent=2, sort_keys=True))


def _learn_config(conf, method, seed):
    fields = {k: v for k, v in conf.items() if k in DictLearnConfig.__dataclass_fields__}
    if seed is not None:
        fields["seed"] = seed
    return _stage("train-dict config", default_config, method, **fields)


def cmd_train_dict(args):
    conf = _read_config(args.config)
    method = args.method or conf.get("method", "odl")
    cfg = _learn_config(conf, method, args.seed)
    Y = _profiles_from(args.data, conf)
    D, report = _stage(f"train-dict ({method})", train, Y, cfg, method)
    out = _out(args)
    cio.save_dictionary(D, out / "dictionary.sptr")
    _write_text(out / "learn_report.json", json.dumps(report.to_dict(), indent=2, sort_keys=True))


def _coding(conf, D):
    raw = conf.get("coding")
    if raw is not None:
        return _stage("coding config", lambda: CodingParams(**raw))
    stored = D.provenance.get("config", {}).get("coding")
    if stored:
        return CodingParams(**stored)
    return CodingParams()


def cmd_encode(args):
    conf = _read_config(args.config)
    D = _load(args.dictionary, cio.load_dictionary)
    Y = _profiles_from(args.data, conf)
    if args.truth:
        grids = [_stage(t, truth_on_grid, _load(t, cio.load_truth), _window(conf)) for t in args.truth]
        labels = np.concatenate([g.labels.ravel() for g in grids])
        if labels.size != Y.n_profiles:
            raise StageError(args.truth[0], InputError(
                f"{labels.size} truth pixels for {Y.n_profiles} profiles"))
        Y = ProfileMatrix(Y.data, labels)
    params = _coding(conf, D)
    feats, codes = _stage("encode", encode_features, Y, D, params)
    out = _out(args)
    cio.save_profiles(ProfileMatrix(feats.T, Y.labels), out / "features.sptr")
    nnz = [c.nnz for c in codes]
    _write_text(out / "encode.json", json.dumps(
        {"coding": params.to_dict(), "n_profiles": len(codes),
         "mean_sparsity": float(np.mean(nnz))}, indent=2, sort_keys=True))


def cmd_analyze(args):
    conf = _read_config(args.config)
    method = args.method or conf.get("method", "odl")
    Y = _profiles_from(args.data, conf)
    grid = conf.get("grid", [[1, 128], [10, 128], [40, 128]])
    seed = args.seed if args.seed is not None else conf.get("seed", 0)
    result = _stage("analyze", parameter_sweep, Y, grid, lam=conf.get("lam", 0.1),
                    alpha=conf.get("alpha", 0.1), method=method,
                    seed=stage_seed(seed, f"sweep/{method}"), reference=conf.get("reference"))
    out = _out(args)
    _write_text(out / "sweep.csv", result.to_csv())
    hists = {f"T{r.iterations}_n{r.n_atoms}": histogram(r.samples) for r in result.rows}
    _write_text(out / "histograms.csv", histogram_csv(hists))


def cmd_train_svm(args):
    conf = _read_config(args.config)
    F = _profiles_from(args.features, {})
    if F.labels is None:
        raise StageError(args.features[0], InputError("feature file carries no labels"))
    X = F.data.T
    seed = args.seed if args.seed is not None else conf.get("seed", 0)
    if "C" in conf and "gamma" in conf and not isinstance(conf["C"], list):
        best, info = (conf["C"], conf["gamma"]), {}
    else:
        grid = [(c, g) for c in conf.get("C", DEFAULT_C_GRID)
                for g in conf.get("gamma", DEFAULT_GAMMA_GRID)]
        cv = _stage("cross-validation", cross_validate, X, F.labels, grid,
                    nu=conf.get("nu", 10), seed=stage_seed(seed, "svm"))
        best = cv.best
        info = {"grid": cv.grid, "mean_accuracy": cv.mean_accuracy,
                "best_accuracy": cv.best_accuracy}
    model = _stage("svm training", svm_train, X, F.labels, C=best[0], gamma=best[1],
                   tol=conf.get("tol", 1e-3))
    out = _out(args)
    cio.save_model(model, out / "model.sptr")
    _write_text(out / "svm.json", json.dumps(dict(info, C=best[0], gamma=best[1]),
                                             indent=2, sort_keys=True))


def cmd_classify(args):
    conf = _read_config(args.config)
    model = _load(args.model, cio.load_model)
    obj = _load(args.input)
    if isinstance(obj, BScan):
        if args.dictionary is None:
            raise UsageError("classifying a B-scan needs --dict")
        D = _load(args.dictionary, cio.load_dictionary)
        cmap = _stage("classify", classify_bscan, obj, D, _coding(conf, D), model,
                      _window(conf), conf.get("normalize", "none"))
    elif isinstance(obj, ProfileMatrix):
        if args.positions is None:
            raise UsageError("classifying a feature file needs --positions")
        L = obj.n_profiles
        if L % args.positions:
            raise StageError(args.input, InputError(f"{L} features do not fill rows of {args.positions}"))
        pred = _stage("classify", model.predict, obj.data.T)
        cmap = ClassMap(pred.reshape(L // args.positions, args.positions))
    else:
        raise StageError(args.input, InputError(f"cannot classify a {type(obj).__name__}"))
    out = _out(args)
    _write_text(out / "map.csv", cmap.to_csv())
    _write_text(out / "map.json", ClassMap.sidecar())


def cmd_evaluate(args):
    conf = _read_config(args.config)
    try:
        cmap = ClassMap.from_csv(Path(args.map).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise StageError(args.map, InputError(f"unreadable class map: {exc}")) from None
    truth = _load(args.truth, cio.load_truth)
    if truth.shape != cmap.shape:
        truth = _stage(args.truth, truth_on_grid, truth, _window(conf))
    report = _stage("evaluate", pcc, cmap, truth)
    out = _out(args)
    _write_text(out / "pcc.csv", report.to_csv())
    _write_text(out / "pcc.json", json.dumps(report.to_dict(), indent=2, sort_keys=True))


def cmd_benchmark(args):
    conf = _read_config(args.config)
    if args.seed is not None:
        conf["seed"] = args.seed
    cfg = _stage("benchmark config", PipelineConfig, conf)
    methods = (args.method,) if args.method else ("ksvd", "odl")
    report = _stage("benchmark", run_benchmark, cfg, methods)
    out = _out(args)
    _write_text(out / "benchmark.json", report.to_json())
    _write_text(out / "benchmark_pcc.csv", report.pcc_csv())
    _write_text(out / "benchmark_timing.csv", report.timing_csv())
    for m, r in report.methods.items():
        cio.save_dictionary(r.dictionary, out / f"dictionary_{m}.sptr")
        cio.save_model(r.model, out / f"model_{m}.sptr")
        for i, cmap in enumerate(r.maps):
            _write_text(out / f"map_{m}_{i}.csv", cmap.to_csv())
    _write_text(out / "map.json", ClassMap.sidecar())
    print(report.pcc_csv(), end="")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, help="global seed (overrides the configuration)")
    common.add_argument("--method", choices=("ksvd", "odl"))
    common.add_argument("--verbose", action="store_true")

    parser = _Parser(prog="gprdl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="synthetic B-scan and truth")
    p.set_defaults(func=cmd_generate)
    p = sub.add_parser("train-dict", parents=[common], help="learn a dictionary")
    p.add_argument("data", nargs="+")
    p.set_defaults(func=cmd_train_dict)
    p = sub.add_parser("encode", parents=[common], help="sparse features over a dictionary")
    p.add_argument("dictionary")
    p.add_argument("data", nargs="+")
    p.add_argument("--truth", nargs="+", help="truth files labelling B-scan input, in order")
    p.set_defaults(func=cmd_encode)
    p = sub.add_parser("analyze", parents=[common], help="similarity sweep over (T, n_atoms)")
    p.add_argument("data", nargs="+")
    p.set_defaults(func=cmd_analyze)
    p = sub.add_parser("train-svm", parents=[common], help="cross-validated RBF SVM")
    p.add_argument("features", nargs="+")
    p.set_defaults(func=cmd_train_svm)
    p = sub.add_parser("classify", parents=[common], help="classification map")
    p.add_argument("model")
    p.add_argument("input", help="B-scan, or features written by encode")
    p.add_argument("--dict", dest="dictionary")
    p.add_argument("--positions", type=int, help="scan positions per map row for feature input")
    p.set_defaults(func=cmd_classify)
    p = sub.add_parser("evaluate", parents=[common], help="P_CC of a map against truth")
    p.add_argument("map")
    p.add_argument("truth")
    p.set_defaults(func=cmd_evaluate)
    p = sub.add_parser("benchmark", parents=[common], help="K-SVD vs ODL end to end")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"gprdl {args.command}: {exc}", file=sys.stderr)
        return 1
    except StageError as exc:
        print(f"gprdl {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except GprdlError as exc:
        print(f"gprdl {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
