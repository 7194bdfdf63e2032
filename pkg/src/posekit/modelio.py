"""Versioned binary serialization for models and phraselet books.

Layout: 8-byte magic, little-endian u32 format version, little-endian u64
header length, UTF-8 JSON header (sorted keys), then raw array payloads in
header order.  Arrays are stored as little-endian float64/int64 regardless
of platform, so files are bit-portable and round trips are exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .graphs import BodyHalf, PartGraph, PartSpec, TreeVariant
from .model import MixtureModel
from .phraselets import PatternMode, PhraseletBook
from .twotrees import TwoTreeModel

MAGIC = b"POSEKIT\x00"
FORMAT_VERSION = 1


class ModelIOError(ValueError):
    pass


class CorruptHeaderError(ModelIOError):
    pass


class VersionMismatchError(ModelIOError):
    pass


class TruncatedFileError(ModelIOError):
    pass


def _graph_to_json(graph: PartGraph) -> dict:
    return {
        "parts": [
            {"id": p.part_id, "name": p.name, "keypoint": p.keypoint,
             "num_types": p.num_types, "body_half": p.body_half.value}
            for p in graph.parts
        ],
        "edges": [[c, p] for c, p in graph.edges],
        "root": graph.root,
        "variant": graph.variant.value,
    }


def _graph_from_json(obj) -> PartGraph:
    try:
        parts = tuple(
            PartSpec(p["id"], p["name"], p["keypoint"], p["num_types"],
                     BodyHalf(p["body_half"]))
            for p in obj["parts"]
        )
        edges = tuple((c, p) for c, p in obj["edges"])
        return PartGraph(parts, edges, obj["root"], TreeVariant(obj["variant"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptHeaderError(f"bad part graph in header: {exc}") from None


class _ArrayWriter:
    def __init__(self):
        self.specs = []
        self.blobs = []

    def add(self, name: str, arr: np.ndarray):
        arr = np.asarray(arr)
        if arr.dtype.kind == "f":
            arr = arr.astype("<f8")
            dtype = "<f8"
        elif arr.dtype.kind in "iu":
            arr = arr.astype("<i8")
            dtype = "<i8"
        else:
            raise ModelIOError(f"array {name!r}: unsupported dtype {arr.dtype}")
        self.specs.append({"name": name, "dtype": dtype,
                           "shape": list(arr.shape)})
        self.blobs.append(np.ascontiguousarray(arr).tobytes())


def _encode(kind: str, meta: dict, writer: _ArrayWriter) -> bytes:
    header = dict(meta)
    header["kind"] = kind
    header["arrays"] = writer.specs
    head_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", FORMAT_VERSION)
    out += struct.pack("<Q", len(head_bytes))
    out += head_bytes
    for blob in writer.blobs:
        out += blob
    return bytes(out)


def _decode(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < len(MAGIC) + 12:
        raise TruncatedFileError("file shorter than the fixed preamble")
    if data[:len(MAGIC)] != MAGIC:
        raise CorruptHeaderError("bad magic bytes")
    (version,) = struct.unpack_from("<I", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"file is format version {version}, this build reads "
            f"{FORMAT_VERSION}"
        )
    (head_len,) = struct.unpack_from("<Q", data, len(MAGIC) + 4)
    start = len(MAGIC) + 12
    if len(data) < start + head_len:
        raise TruncatedFileError("header extends past end of file")
    try:
        header = json.loads(data[start:start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptHeaderError(f"unreadable header: {exc}") from None
    if not isinstance(header, dict) or "arrays" not in header:
        raise CorruptHeaderError("header missing the array table")
    arrays = {}
    pos = start + head_len
    for spec in header["arrays"]:
        try:
            name, dtype = spec["name"], spec["dtype"]
            shape = tuple(int(s) for s in spec["shape"])
        except (KeyError, TypeError, ValueError):
            raise CorruptHeaderError("malformed array descriptor") from None
        if dtype not in ("<f8", "<i8"):
            raise CorruptHeaderError(f"array {name!r}: unknown dtype {dtype!r}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        if pos + nbytes > len(data):
            raise TruncatedFileError(
                f"array {name!r} needs {nbytes} bytes, file ends early")
        arrays[name] = np.frombuffer(
            data[pos:pos + nbytes], dtype=dtype).reshape(shape).copy()
        pos += nbytes
    if pos != len(data):
        raise CorruptHeaderError(f"{len(data) - pos} trailing bytes after payload")
    return header, arrays


# -- per-kind encodings --------------------------------------------------


def _encode_model(model: MixtureModel) -> bytes:
    writer = _ArrayWriter()
    for part in model.graph.parts:
        writer.add(f"tpl_{part.part_id}", model.templates[part.part_id])
    for idx in range(model.graph.num_edges):
        writer.add(f"def_{idx}", model.deformation[idx])
        writer.add(f"bias_{idx}", model.biases[idx])
        writer.add(f"mu_{idx}", model.mean_geometry[idx])
    meta = {
        "graph": _graph_to_json(model.graph),
        "rotated": model.rotated,
        "orientation_count": model.orientation_count,
    }
    return _encode("mixture_model", meta, writer)


def _decode_model(header: dict, arrays: dict[str, np.ndarray]) -> MixtureModel:
    graph = _graph_from_json(header.get("graph"))
    try:
        templates = {p.part_id: arrays[f"tpl_{p.part_id}"] for p in graph.parts}
        deformation = {i: arrays[f"def_{i}"] for i in range(graph.num_edges)}
        biases = {i: arrays[f"bias_{i}"] for i in range(graph.num_edges)}
        mu = {i: arrays[f"mu_{i}"] for i in range(graph.num_edges)}
        return MixtureModel(graph, templates, deformation, biases, mu,
                            rotated=bool(header["rotated"]),
                            orientation_count=int(header["orientation_count"]))
    except KeyError as exc:
        raise CorruptHeaderError(f"missing piece: {exc}") from None
    except ValueError as exc:
        raise CorruptHeaderError(f"inconsistent model data: {exc}") from None


def _encode_book(book: PhraseletBook) -> bytes:
    writer = _ArrayWriter()
    ids = sorted(book.centroids)
    for pid in ids:
        writer.add(f"cent_{pid}", book.centroids[pid])
        writer.add(f"lab_{pid}", book.labels[pid])
    meta = {
        "mode": book.mode.value,
        "k": book.k,
        "sigma": book.sigma,
        "part_ids": ids,
        "members": {str(pid): list(book.members[pid]) for pid in ids},
    }
    return _encode("phraselet_book", meta, writer)


def _decode_book(header: dict, arrays: dict[str, np.ndarray]) -> PhraseletBook:
    try:
        ids = [int(i) for i in header["part_ids"]]
        members = {int(k): tuple(v) for k, v in header["members"].items()}
        centroids = {pid: arrays[f"cent_{pid}"] for pid in ids}
        labels = {pid: arrays[f"lab_{pid}"] for pid in ids}
        return PhraseletBook(PatternMode(header["mode"]), int(header["k"]),
                             float(header["sigma"]), members, centroids,
                             labels)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptHeaderError(f"inconsistent book data: {exc}") from None


def _encode_two_tree(models: TwoTreeModel) -> bytes:
    lower = _encode_model(models.lower)
    upper = _encode_model(models.upper)
    writer = _ArrayWriter()
    meta = {"lower_len": len(lower), "upper_len": len(upper)}
    return _encode("two_tree_model", meta, writer) + lower + upper


def save_model(obj, path: str):
    """Serialize a MixtureModel, PhraseletBook, or TwoTreeModel."""
    if isinstance(obj, MixtureModel):
        data = _encode_model(obj)
    elif isinstance(obj, PhraseletBook):
        data = _encode_book(obj)
    elif isinstance(obj, TwoTreeModel):
        data = _encode_two_tree(obj)
    else:
        raise ModelIOError(f"cannot serialize {type(obj).__name__}")
    with open(path, "wb") as fh:
        fh.write(data)


def _load_bytes(data: bytes):
    # A two-tree container carries its sub-models as concatenated payloads
    # after its own (array-free) frame, so split before decoding.
    if len(data) < len(MAGIC) + 12:
        raise TruncatedFileError("file shorter than the fixed preamble")
    (head_len,) = struct.unpack_from("<Q", data, len(MAGIC) + 4)
    frame_end = len(MAGIC) + 12 + head_len
    if data[:len(MAGIC)] == MAGIC and frame_end <= len(data):
        try:
            peek = json.loads(data[len(MAGIC) + 12:frame_end].decode("utf-8"))
        except Exception:
            peek = None
        if isinstance(peek, dict) and peek.get("kind") == "two_tree_model":
            header, _ = _decode(data[:frame_end])
            lower_len = int(header.get("lower_len", -1))
            upper_len = int(header.get("upper_len", -1))
            if lower_len < 0 or upper_len < 0:
                raise CorruptHeaderError("two-tree header missing payload sizes")
            if frame_end + lower_len + upper_len > len(data):
                raise TruncatedFileError("two-tree payload ends early")
            if frame_end + lower_len + upper_len != len(data):
                raise CorruptHeaderError("trailing bytes after two-tree payload")
            lower = _load_bytes(data[frame_end:frame_end + lower_len])
            upper = _load_bytes(data[frame_end + lower_len:])
            if not isinstance(lower, MixtureModel) or not isinstance(upper, MixtureModel):
                raise CorruptHeaderError("two-tree payload is not a model pair")
            return TwoTreeModel(lower, upper)
    header, arrays = _decode(data)
    kind = header.get("kind")
    if kind == "mixture_model":
        return _decode_model(header, arrays)
    if kind == "phraselet_book":
        return _decode_book(header, arrays)
    raise CorruptHeaderError(f"unknown payload kind {kind!r}")


def load_model(path: str):
    with open(path, "rb") as fh:
        data = fh.read()
    return _load_bytes(data)
