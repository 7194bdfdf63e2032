"""Round-trip and corruption tests for the binary model format."""

import struct

import numpy as np
import pytest

import posekit.modelio as modelio
from posekit.graphs import lower_constrained_graph, upper_constrained_graph
from posekit.inference import infer_max
from posekit.modelio import (CorruptHeaderError, ModelIOError,
                             TruncatedFileError, VersionMismatchError,
                             load_model, save_model)
from posekit.phraselets import PatternMode, PhraseletBook
from posekit.twotrees import TwoTreeModel

from helpers import random_model, random_pyramid, random_tiny_graph


def _roundtrip(obj, tmp_path):
    path = str(tmp_path / "m.bin")
    save_model(obj, path)
    with open(path, "rb") as fh:
        raw = fh.read()
    return load_model(path), raw, path


@pytest.mark.parametrize("rotated,nslots", [(False, 1), (True, 4)])
def test_model_round_trip_is_exact(tmp_path, rotated, nslots):
    rng = np.random.default_rng(41)
    graph = random_tiny_graph(rng)
    model = random_model(rng, graph, channels=3, extent=2,
                        rotated=rotated, nslots=nslots)
    loaded, raw, path = _roundtrip(model, tmp_path)
    assert loaded == model
    # saving the loaded copy reproduces the file byte for byte
    save_model(loaded, path)
    with open(path, "rb") as fh:
        assert fh.read() == raw


def test_loaded_model_infers_identically(tmp_path):
    rng = np.random.default_rng(42)
    graph = random_tiny_graph(rng)
    pyr = random_pyramid(rng, nslots=4)
    model = random_model(rng, graph, pyr.channels, extent=2,
                        rotated=True, nslots=4)
    loaded, _, _ = _roundtrip(model, tmp_path)
    a = infer_max(model, pyr)
    b = infer_max(loaded, pyr)
    assert b.score == a.score
    assert b.pose.lattice_key() == a.pose.lattice_key()


def _toy_book():
    rng = np.random.default_rng(5)
    members = {0: (1, 2), 1: (0,), 2: (0, 1)}
    centroids = {p: rng.normal(size=(3, 2 * len(m)))
                 for p, m in members.items()}
    labels = {p: np.array([0, 2, -1, 1], dtype=np.int64) for p in members}
    return PhraseletBook(PatternMode.ROTATION_NORMALIZED, 3, 1.5, members,
                         centroids, labels)


def test_book_round_trip_is_exact(tmp_path):
    book = _toy_book()
    loaded, raw, path = _roundtrip(book, tmp_path)
    assert loaded == book
    assert isinstance(loaded, PhraseletBook)
    save_model(loaded, path)
    with open(path, "rb") as fh:
        assert fh.read() == raw


def test_two_tree_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(43)
    lower = random_model(rng, lower_constrained_graph(2), channels=3,
                        extent=2, rotated=True, nslots=4)
    upper = random_model(rng, upper_constrained_graph(2), channels=3,
                        extent=2, rotated=True, nslots=4)
    combo = TwoTreeModel(lower=lower, upper=upper)
    loaded, raw, path = _roundtrip(combo, tmp_path)
    assert isinstance(loaded, TwoTreeModel)
    assert loaded.lower == combo.lower
    assert loaded.upper == combo.upper
    save_model(loaded, path)
    with open(path, "rb") as fh:
        assert fh.read() == raw


def test_unserializable_object_rejected(tmp_path):
    with pytest.raises(ModelIOError, match="cannot serialize"):
        save_model({"weights": [1, 2]}, str(tmp_path / "m.bin"))


def _model_bytes():
    rng = np.random.default_rng(44)
    graph = random_tiny_graph(rng)
    model = random_model(rng, graph, channels=2, extent=2,
                        rotated=False, nslots=1)
    return modelio._encode_model(model)


def _load_raw(tmp_path, raw):
    path = str(tmp_path / "bad.bin")
    with open(path, "wb") as fh:
        fh.write(raw)
    return load_model(path)


def test_bad_magic_is_corrupt(tmp_path):
    raw = _model_bytes()
    with pytest.raises(CorruptHeaderError, match="magic"):
        _load_raw(tmp_path, b"\x00" + raw[1:])


def test_version_mismatch_names_both_versions(tmp_path):
    raw = bytearray(_model_bytes())
    raw[8:12] = struct.pack("<I", 7)
    with pytest.raises(VersionMismatchError, match="version 7.*reads.*1"):
        _load_raw(tmp_path, bytes(raw))


@pytest.mark.parametrize("keep", [4, 15, -9])
def test_truncated_file_detected(tmp_path, keep):
    raw = _model_bytes()
    cut = raw[:keep] if keep > 0 else raw[:len(raw) + keep]
    with pytest.raises(TruncatedFileError):
        _load_raw(tmp_path, cut)


def test_trailing_bytes_are_corrupt(tmp_path):
    with pytest.raises(CorruptHeaderError, match="trailing"):
        _load_raw(tmp_path, _model_bytes() + b"\x00")


def test_garbage_header_is_corrupt(tmp_path):
    junk = b"\xff" * 10
    raw = modelio.MAGIC + struct.pack("<I", modelio.FORMAT_VERSION)
    raw += struct.pack("<Q", len(junk)) + junk
    with pytest.raises(CorruptHeaderError, match="header"):
        _load_raw(tmp_path, raw)


def test_unknown_kind_is_corrupt(tmp_path):
    raw = modelio._encode("mystery", {}, modelio._ArrayWriter())
    with pytest.raises(CorruptHeaderError, match="mystery"):
        _load_raw(tmp_path, raw)


def test_two_tree_container_corruption(tmp_path):
    rng = np.random.default_rng(45)
    lower = random_model(rng, lower_constrained_graph(1), channels=2,
                        extent=2, rotated=False, nslots=1)
    upper = random_model(rng, upper_constrained_graph(1), channels=2,
                        extent=2, rotated=False, nslots=1)
    raw = modelio._encode_two_tree(TwoTreeModel(lower=lower, upper=upper))
    with pytest.raises(TruncatedFileError):
        _load_raw(tmp_path, raw[:-8])
    with pytest.raises(CorruptHeaderError, match="trailing"):
        _load_raw(tmp_path, raw + b"\x01")
