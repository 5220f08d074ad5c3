"""Binary container files for scans, profiles, dictionaries, truth grids and models.

Layout::

    "SPTR1\\n"            6-byte magic (byte 4 is the format version)
    kind                  1 byte
    header length         4 bytes, unsigned little-endian
    header                UTF-8 JSON
    payload               float64 little-endian, row-major

Every numeric array, including integer grids and labels, travels in the
payload so round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

MAGIC = b"SPTR1\n"
VERSION = MAGIC[4:5]
PREFIX = len(MAGIC) + 1 + 4

KIND_BSCAN = 0
KIND_PROFILES = 1
KIND_DICTIONARY = 2
KIND_TRUTH = 3
KIND_SVM = 4
KIND_NAMES = {KIND_BSCAN: "BScan", KIND_PROFILES: "ProfileMatrix",
              KIND_DICTIONARY: "Dictionary", KIND_TRUTH: "SceneTruth", KIND_SVM: "SvmModel"}

_F64 = np.dtype("<f8")


def encode_container(kind: int, header: dict, arrays) -> bytes:
    """Serialize ``arrays`` (concatenated in order) behind a JSON header."""
    payload = b"".join(np.ascontiguousarray(a, dtype=_F64).tobytes() for a in arrays)
    header = dict(header, dtype="f64le", layout="row-major", payload_bytes=len(payload))
    hbytes = json.dumps(header, sort_keys=True, allow_nan=False).encode("utf-8")
    return MAGIC + bytes([kind]) + struct.pack("<I", len(hbytes)) + hbytes + payload


def decode_container(blob: bytes, kind: int | None = None):
    """Return ``(kind, header, payload)`` where payload is a flat float64 array."""
    if len(blob) < PREFIX:
        raise FormatError(f"file too short for the container prefix: expected at least "
                          f"{PREFIX} bytes, got {len(blob)}", offset=len(blob),
                          expected=PREFIX, actual=len(blob))
    if blob[:4] != MAGIC[:4]:
        raise FormatError("bad magic bytes", offset=0)
    if blob[4:5] != VERSION:
        raise FormatError(f"unsupported format version {blob[4:5]!r}, expected {VERSION!r}",
                          offset=4)
    if blob[5:6] != MAGIC[5:6]:
        raise FormatError("bad magic bytes", offset=5)
    got = blob[6]
    if got not in KIND_NAMES:
        raise FormatError(f"unknown kind tag {got}", offset=6)
    if kind is not None and got != kind:
        raise FormatError(f"expected a {KIND_NAMES[kind]} file, found {KIND_NAMES[got]}", offset=6)
    (hlen,) = struct.unpack("<I", blob[7:11])
    if PREFIX + hlen > len(blob):
        raise FormatError(f"header truncated: expected {hlen} bytes, got {len(blob) - PREFIX}",
                          offset=PREFIX, expected=hlen, actual=len(blob) - PREFIX)
    try:
        header = json.loads(blob[PREFIX:PREFIX + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid UTF-8 JSON: {exc}", offset=PREFIX) from None
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object", offset=PREFIX)
    if header.get("dtype") != "f64le" or header.get("layout") != "row-major":
        raise FormatError("payload must be f64le row-major", offset=PREFIX)
    start = PREFIX + hlen
    expected = 8 * _payload_count(got, header)
    actual = len(blob) - start
    if header.get("payload_bytes", expected) != expected:
        raise FormatError(f"header declares {header['payload_bytes']} payload bytes but its "
                          f"dimensions need {expected}", offset=PREFIX,
                          expected=expected, actual=header["payload_bytes"])
    if actual < expected:
        raise FormatError(f"payload truncated: expected {expected} bytes, got {actual}",
                          offset=start + actual, expected=expected, actual=actual)
    if actual > expected:
        raise FormatError(f"payload size disagrees with header: expected {expected} bytes, "
                          f"got {actual}", offset=start + expected, expected=expected, actual=actual)
    return got, header, np.frombuffer(blob, dtype=_F64, offset=start).copy()


def _shape(header, key="shape", ndim=2):
    s = header.get(key)
    if not (isinstance(s, list) and len(s) == ndim and all(isinstance(v, int) and v >= 0 for v in s)):
        raise FormatError(f"header field {key!r} must list {ndim} non-negative integers",
                          offset=PREFIX)
    return tuple(s)


def _payload_count(kind, header):
    if kind == KIND_SVM:
        d = header.get("n_features")
        svs = header.get("n_support")
        if not isinstance(d, int) or not isinstance(svs, list):
            raise FormatError("model header lacks n_features/n_support", offset=PREFIX)
        return 2 * d + len(svs) + sum(k * (d + 1) for k in svs)
    r, c = _shape(header)
    extra = c if kind == KIND_PROFILES and header.get("has_labels") else 0
    return r * c + extra


def _write(path, blob):
    path = Path(path)
    try:
        path.write_bytes(blob)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from None


def _read(path):
    path = Path(path)
    try:
        return path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None


def _load(path, kind, build):
    blob = _read(path)
    try:
        _, header, payload = decode_container(blob, kind)
        return build(header, payload)
    except FormatError as exc:
        exc.args = (f"{path}: {exc.args[0]}",)
        raise


# ---------------------------------------------------------------------------
# per-type encoders


def bscan_bytes(b) -> bytes:
    return encode_container(KIND_BSCAN, {"shape": list(b.data.shape), "dt": b.dt, "dx": b.dx,
                                         "metadata": b.metadata}, [b.data])


def _bscan(header, payload):
    from .gpr_data import BScan
    return BScan(payload.reshape(_shape(header)), header["dt"], header["dx"],
                 header.get("metadata", {}))


def profiles_bytes(pm) -> bytes:
    arrays = [pm.data] + ([pm.labels] if pm.labels is not None else [])
    return encode_container(KIND_PROFILES, {"shape": list(pm.data.shape),
                                            "has_labels": pm.labels is not None}, arrays)


def _profiles(header, payload):
    from .gpr_data import ProfileMatrix
    r, c = _shape(header)
    labels = payload[r * c:].astype(np.int64) if header.get("has_labels") else None
    return ProfileMatrix(payload[:r * c].reshape(r, c), labels)


def dictionary_bytes(D) -> bytes:
    return encode_container(KIND_DICTIONARY, {"shape": list(D.atoms.shape),
                                              "provenance": D.provenance}, [D.atoms])


def _dictionary(header, payload):
    from .sparse_coding import Dictionary
    return Dictionary(payload.reshape(_shape(header)), header.get("provenance", {}))


def truth_bytes(t) -> bytes:
    from .gpr_data import CLASS_NAMES
    return encode_container(KIND_TRUTH, {"shape": list(t.labels.shape),
                                         "classes": {str(k): v for k, v in CLASS_NAMES.items()}},
                            [t.labels])


def _truth(header, payload):
    from .gpr_data import SceneTruth
    return SceneTruth(payload.reshape(_shape(header)).astype(np.int64))


def model_bytes(model) -> bytes:
    header = {"classes": model.classes.tolist(), "gamma": model.gamma, "C": model.C,
              "tol": model.tol, "n_features": int(model.n_features),
              "n_support": [int(m.dual_coef.size) for m in model.machines]}
    arrays = [model.scale_min, model.scale_max, [m.bias for m in model.machines]]
    for m in model.machines:
        arrays += [m.support_vectors, m.dual_coef]
    return encode_container(KIND_SVM, header, arrays)


def _model(header, payload):
    from .classification import BinaryMachine, RbfSvmModel
    d = header["n_features"]
    ks = header["n_support"]
    smin, smax = payload[:d].copy(), payload[d:2 * d].copy()
    pos = 2 * d
    biases = payload[pos:pos + len(ks)]
    pos += len(ks)
    machines = []
    for k, b in zip(ks, biases):
        sv = payload[pos:pos + k * d].reshape(k, d).copy()
        pos += k * d
        machines.append(BinaryMachine(sv, payload[pos:pos + k].copy(), float(b)))
        pos += k
    return RbfSvmModel(np.asarray(header["classes"], dtype=np.int64), tuple(machines),
                       float(header["gamma"]), float(header["C"]), smin, smax, float(header["tol"]))


def save_bscan(b, path):
    _write(path, bscan_bytes(b))


def load_bscan(path):
    return _load(path, KIND_BSCAN, _bscan)


def save_profiles(pm, path):
    _write(path, profiles_bytes(pm))


def load_profiles(path):
    return _load(path, KIND_PROFILES, _profiles)


def save_dictionary(D, path):
    _write(path, dictionary_bytes(D))


def load_dictionary(path):
    return _load(path, KIND_DICTIONARY, _dictionary)


def save_truth(t, path):
    _write(path, truth_bytes(t))


def load_truth(path):
    return _load(path, KIND_TRUTH, _truth)


def save_model(model, path):
    _write(path, model_bytes(model))


def load_model(path):
    return _load(path, KIND_SVM, _model)


_LOADERS = {KIND_BSCAN: _bscan, KIND_PROFILES: _profiles, KIND_DICTIONARY: _dictionary,
            KIND_TRUTH: _truth, KIND_SVM: _model}


def load_any(path):
    """Load a container of whatever kind it declares."""
    blob = _read(path)
    kind = blob[6] if len(blob) > 6 and blob[6] in _LOADERS else None
    return _load(path, kind, _LOADERS.get(kind, lambda h, p: None))
