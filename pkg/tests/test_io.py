import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gprdl import io
from gprdl.classification import svm_train
from gprdl.dict_learning import DictLearnConfig, ksvd_train
from gprdl.errors import FormatError, InputError
from gprdl.gpr_data import (MINE_LARGE, BScan, ProfileMatrix, SceneTruth, SyntheticSceneConfig,
                            Target, generate_synthetic_bscan)
from gprdl.sparse_coding import CodingParams


@pytest.fixture(scope="module")
def objects():
    b, t = generate_synthetic_bscan(SyntheticSceneConfig(
        n_samples=64, n_positions=30, clutter_std=0.1, seed=1,
        targets=(Target(0.5, 0.05, 0.03, 1.0, MINE_LARGE),)))
    rng = np.random.default_rng(0)
    pm = ProfileMatrix(rng.standard_normal((8, 40)), labels=rng.integers(0, 4, 40))
    D, _ = ksvd_train(pm, DictLearnConfig(n_atoms=10, iterations=2, coding=CodingParams(alpha=1.0)))
    X = rng.standard_normal((30, 5))
    model = svm_train(X, np.repeat([0, 1, 3], 10), C=3.0, gamma=0.25)
    return {"bscan": b, "truth": t, "profiles": pm, "dictionary": D, "model": model}


KINDS = ["bscan", "truth", "profiles", "dictionary", "model"]


@pytest.mark.parametrize("name", KINDS)
def test_round_trip_bit_exact(objects, tmp_path, name):
    obj = objects[name]
    path = tmp_path / f"{name}.sptr"
    getattr(io, f"save_{name}")(obj, path)
    back = getattr(io, f"load_{name}")(path)
    assert back == obj
    blob = path.read_bytes()
    assert getattr(io, f"{name}_bytes")(back) == blob
    assert io.load_any(path) == obj


def test_dictionary_provenance_kept(objects, tmp_path):
    io.save_dictionary(objects["dictionary"], tmp_path / "d.sptr")
    back = io.load_dictionary(tmp_path / "d.sptr")
    assert back.provenance["config"]["n_atoms"] == 10


def test_unlabelled_profiles(tmp_path):
    pm = ProfileMatrix(np.arange(6.0).reshape(2, 3))
    io.save_profiles(pm, tmp_path / "p.sptr")
    assert io.load_profiles(tmp_path / "p.sptr").labels is None


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6).flatmap(lambda r: st.lists(
    st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=r, max_size=r),
    min_size=1, max_size=6)))
def test_bscan_round_trip_random(cols):
    data = np.array(cols).T
    b = BScan(data)
    kind, header, payload = io.decode_container(io.bscan_bytes(b))
    assert kind == io.KIND_BSCAN and header["dtype"] == "f64le"
    assert payload.tobytes() == np.ascontiguousarray(data, "<f8").tobytes()


def test_layout(objects):
    blob = io.bscan_bytes(objects["bscan"])
    assert blob[:6] == b"SPTR1\n" and blob[6] == 0
    (hlen,) = struct.unpack("<I", blob[7:11])
    header = json.loads(blob[11:11 + hlen])
    assert header["layout"] == "row-major"
    assert len(blob) - 11 - hlen == header["payload_bytes"] == 64 * 30 * 8


class TestErrors:
    @pytest.fixture
    def blob(self, objects):
        return io.bscan_bytes(objects["bscan"])

    def test_bad_magic(self, blob):
        with pytest.raises(FormatError) as exc:
            io.decode_container(b"XPTR1\n" + blob[6:])
        assert exc.value.offset == 0
        assert "offset 0" in str(exc.value)

    def test_version(self, blob):
        with pytest.raises(FormatError) as exc:
            io.decode_container(blob[:4] + b"2" + blob[5:])
        assert exc.value.offset == 4

    def test_wrong_kind(self, blob):
        with pytest.raises(FormatError) as exc:
            io.decode_container(blob, io.KIND_DICTIONARY)
        assert exc.value.offset == 6

    def test_truncated_payload(self, blob):
        with pytest.raises(FormatError) as exc:
            io.decode_container(blob[:-8])
        assert exc.value.expected == exc.value.actual + 8

    def test_extra_payload(self, blob):
        with pytest.raises(FormatError) as exc:
            io.decode_container(blob + b"\0" * 8)
        assert exc.value.actual == exc.value.expected + 8

    def test_truncated_header(self, blob):
        with pytest.raises(FormatError) as exc:
            io.decode_container(blob[:20])
        assert exc.value.offset == 11

    def test_size_disagreement(self, blob):
        (hlen,) = struct.unpack("<I", blob[7:11])
        header = json.loads(blob[11:11 + hlen])
        header["shape"][1] += 1
        h = json.dumps(header).encode()
        bad = blob[:7] + struct.pack("<I", len(h)) + h + blob[11 + hlen:]
        with pytest.raises(FormatError):
            io.decode_container(bad)

    def test_short_file(self):
        with pytest.raises(FormatError):
            io.decode_container(b"SPT")

    def test_path_in_message(self, tmp_path, blob):
        p = tmp_path / "broken.sptr"
        p.write_bytes(blob[:-1])
        with pytest.raises(FormatError) as exc:
            io.load_bscan(p)
        assert "broken.sptr" in str(exc.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            io.load_bscan(tmp_path / "nope.sptr")

    def test_exit_code(self, blob):
        with pytest.raises(FormatError) as exc:
            io.decode_container(blob[:-1])
        assert exc.value.exit_code == 2


def test_truth_labels_exact(tmp_path):
    lab = np.array([[0, 1, 2], [3, 0, 0]], dtype=np.int64)
    io.save_truth(SceneTruth(lab), tmp_path / "t.sptr")
    assert np.array_equal(io.load_truth(tmp_path / "t.sptr").labels, lab)
