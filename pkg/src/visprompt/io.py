"""JSON workspace files: vocabulary, dataset, dictionary, prompts, config, report.

Every file is a UTF-8 JSON object carrying ``format``, ``version`` and
``dim`` (the embedding dimension; ``null`` for files that hold no
embeddings).  Embeddings are stored as flat lists of ``dim`` numbers.
Output is written with sorted keys and shortest round-trip float reprs, so
equal inputs give byte-identical files.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .data import Dataset, GroundTruth, ImageSample
from .dictionary import DictEntry, SimilarityDictionary, Vocabulary
from .errors import DimensionMismatchError, FormatError, ValidationError, VersionMismatchError
from .prompts import VisualPrompt
from .testbed import TestbedSpec
from .trainer import TrainConfig

__all__ = [
    "VERSION",
    "check_dims",
    "dumps",
    "load_config",
    "load_dataset",
    "load_dictionaries",
    "load_json",
    "load_prompts",
    "load_report",
    "load_vocabulary",
    "save_config",
    "save_dataset",
    "save_dictionaries",
    "save_prompts",
    "save_report",
    "save_vocabulary",
]

VERSION = 1


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=False, allow_nan=False) + "\n"


def _write(path, kind: str, dim: int | None, body: Mapping) -> Path:
    path = Path(path)
    payload = {"format": f"visprompt.{kind}", "version": VERSION, "dim": dim, **body}
    text = dumps(payload)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
    return path


def load_json(path) -> Any:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 (byte offset {exc.start})") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(
            f"{path}: malformed JSON at line {exc.lineno} column {exc.colno} (offset {exc.pos}): {exc.msg}"
        ) from exc


class _Reader:
    """Field access that reports the dotted path of whatever is wrong."""

    def __init__(self, source: str):
        self.source = source

    def fail(self, where: str, msg: str, cls=ValidationError):
        raise cls(f"{self.source}: {where}: {msg}")

    def get(self, obj, key: str, where: str, kind=None, optional: bool = False):
        if not isinstance(obj, dict):
            self.fail(where, "expected an object")
        if key not in obj:
            if optional:
                return None
            self.fail(where, f"missing field {key!r}")
        value = obj[key]
        if kind is not None and not _is(value, kind):
            self.fail(f"{where}.{key}" if where else key, f"expected {kind}, got {type(value).__name__}")
        return value

    def vector(self, value, where: str, dim: int) -> np.ndarray:
        if not isinstance(value, list) or not all(_is(v, "number") for v in value):
            self.fail(where, "expected a list of numbers")
        if len(value) != dim:
            self.fail(where, f"embedding has {len(value)} numbers, file declares dim {dim}",
                      DimensionMismatchError)
        arr = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            self.fail(where, "non-finite value")
        return arr

    def box(self, value, where: str) -> np.ndarray:
        if not isinstance(value, list) or len(value) != 4 or not all(_is(v, "number") for v in value):
            self.fail(where, "expected a box [x1, y1, x2, y2]")
        return np.array(value, dtype=np.float64)

    def matrix(self, value, where: str, dim: int) -> np.ndarray:
        if not isinstance(value, list):
            self.fail(where, "expected a list of embeddings")
        rows = [self.vector(v, f"{where}[{i}]", dim) for i, v in enumerate(value)]
        return np.array(rows, dtype=np.float64).reshape(len(rows), dim)

    def build(self, where: str, fn, *args):
        try:
            return fn(*args)
        except DimensionMismatchError as exc:
            self.fail(where, str(exc), DimensionMismatchError)
        except ValidationError as exc:
            self.fail(where, str(exc))


def _is(value, kind: str) -> bool:
    if kind == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind == "int":
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == "str":
        return isinstance(value, str)
    if kind == "list":
        return isinstance(value, list)
    if kind == "object":
        return isinstance(value, dict)
    if kind == "bool":
        return isinstance(value, bool)
    raise AssertionError(kind)


def _header(data, kind: str, source, expected_dim: int | None) -> tuple[_Reader, int | None]:
    r = _Reader(str(source))
    if not isinstance(data, dict):
        raise FormatError(f"{source}: top level must be a JSON object")
    fmt = data.get("format")
    if fmt != f"visprompt.{kind}":
        raise FormatError(f"{source}: expected format 'visprompt.{kind}', found {fmt!r}")
    version = data.get("version")
    if version != VERSION:
        raise VersionMismatchError(f"{source}: format version {version!r} is not supported (expected {VERSION})")
    if "dim" not in data:
        r.fail("dim", "missing field 'dim'")
    dim = data["dim"]
    if dim is not None and (not _is(dim, "int") or dim < 1):
        r.fail("dim", f"expected a positive integer, got {dim!r}")
    if expected_dim is not None and dim is not None and dim != expected_dim:
        raise DimensionMismatchError(f"{source}: embedding dimension {dim} does not match {expected_dim}")
    return r, dim


def check_dims(**named_dims: int | None) -> int | None:
    """Reject any disagreement between the declared dimensions of loaded files."""
    known = {k: v for k, v in named_dims.items() if v is not None}
    if len(set(known.values())) > 1:
        listing = ", ".join(f"{k}={v}" for k, v in known.items())
        raise DimensionMismatchError(f"embedding dimensions disagree: {listing}")
    return next(iter(known.values()), None)


def _floats(arr) -> list:
    return [float(v) for v in np.asarray(arr, dtype=np.float64).reshape(-1)]


def _rows(mat) -> list:
    return [_floats(row) for row in np.asarray(mat, dtype=np.float64)]


# vocabulary

def save_vocabulary(path, vocab: Vocabulary) -> Path:
    entries = [{"phrase": p, "embedding": _floats(e)} for p, e in zip(vocab.phrases, vocab.embeddings)]
    return _write(path, "vocabulary", vocab.dim, {"entries": entries})


def load_vocabulary(path, expected_dim: int | None = None) -> Vocabulary:
    data = load_json(path)
    r, dim = _header(data, "vocabulary", path, expected_dim)
    if dim is None:
        r.fail("dim", "a vocabulary must declare its dimension")
    entries = r.get(data, "entries", "", "list")
    phrases, rows = [], []
    for i, entry in enumerate(entries):
        where = f"entries[{i}]"
        phrases.append(r.get(entry, "phrase", where, "str"))
        rows.append(r.vector(r.get(entry, "embedding", where), f"{where}.embedding", dim))
    if not rows:
        r.fail("entries", "vocabulary is empty")
    return r.build("entries", Vocabulary, tuple(phrases), np.array(rows))


# dataset

def save_dataset(path, dataset: Dataset) -> Path:
    images = []
    for img in dataset.images:
        images.append({
            "image_id": img.image_id,
            "proposals": [
                {"feature": _floats(f), "box": _floats(b), "assigned": label}
                for f, b, label in zip(img.features, img.boxes, img.labels)
            ],
            "gt_instances": [
                {"category_id": g.category_id, "box": _floats(g.box), "context_features": _rows(g.context_features)}
                for g in img.gt
            ],
        })
    return _write(path, "dataset", dataset.dim, {"categories": list(dataset.categories), "images": images})


def load_dataset(path, expected_dim: int | None = None) -> Dataset:
    data = load_json(path)
    r, dim = _header(data, "dataset", path, expected_dim)
    if dim is None:
        r.fail("dim", "a dataset must declare its dimension")
    categories = r.get(data, "categories", "", "list")
    if not all(isinstance(c, str) for c in categories):
        r.fail("categories", "category ids must be strings")
    images = []
    for i, item in enumerate(r.get(data, "images", "", "list")):
        where = f"images[{i}]"
        image_id = r.get(item, "image_id", where, "str")
        feats, boxes, labels = [], [], []
        for j, prop in enumerate(r.get(item, "proposals", where, "list")):
            pw = f"{where}.proposals[{j}]"
            feats.append(r.vector(r.get(prop, "feature", pw), f"{pw}.feature", dim))
            boxes.append(r.box(r.get(prop, "box", pw), f"{pw}.box"))
            label = r.get(prop, "assigned", pw)
            if label is not None and not isinstance(label, str):
                r.fail(f"{pw}.assigned", "expected a category id or null")
            labels.append(label)
        gts = []
        for j, inst in enumerate(r.get(item, "gt_instances", where, "list")):
            gw = f"{where}.gt_instances[{j}]"
            cat = r.get(inst, "category_id", gw, "str")
            box = r.box(r.get(inst, "box", gw), f"{gw}.box")
            ctx = r.matrix(r.get(inst, "context_features", gw), f"{gw}.context_features", dim)
            if ctx.shape[0] == 0:
                r.fail(f"{gw}.context_features", "every ground-truth instance needs context features")
            gts.append(r.build(gw, GroundTruth, cat, box, ctx))
        features = np.array(feats, dtype=np.float64).reshape(len(feats), dim)
        images.append(r.build(where, ImageSample, image_id, features, np.array(boxes).reshape(-1, 4),
                              tuple(labels), tuple(gts)))
    return r.build("images", Dataset, dim, tuple(categories), tuple(images))


# dictionaries (one file holds the dictionary of every category)

def save_dictionaries(path, dictionaries: Mapping[str, SimilarityDictionary], dim: int) -> Path:
    body = {}
    for cat, d in dictionaries.items():
        body[cat] = {
            "k": d.k,
            "q": float(d.q),
            "mode": d.mode,
            "entries": [
                {"phrase": e.phrase, "similarity": float(e.similarity), "embedding": _floats(e.embedding)}
                for e in d.entries
            ],
        }
    return _write(path, "dictionary", dim, {"dictionaries": body})


def load_dictionaries(path, expected_dim: int | None = None) -> dict[str, SimilarityDictionary]:
    data = load_json(path)
    r, dim = _header(data, "dictionary", path, expected_dim)
    if dim is None:
        r.fail("dim", "a dictionary file must declare its dimension")
    out = {}
    for cat, item in r.get(data, "dictionaries", "", "object").items():
        where = f"dictionaries.{cat}"
        entries = []
        for i, e in enumerate(r.get(item, "entries", where, "list")):
            ew = f"{where}.entries[{i}]"
            entries.append(DictEntry(
                r.get(e, "phrase", ew, "str"),
                r.vector(r.get(e, "embedding", ew), f"{ew}.embedding", dim),
                float(r.get(e, "similarity", ew, "number")),
            ))
        out[cat] = r.build(where, SimilarityDictionary, tuple(entries), r.get(item, "k", where, "int"),
                           float(r.get(item, "q", where, "number")), r.get(item, "mode", where, "str"))
    return out


# prompts

def _jsonable(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def save_prompts(path, prompts: Mapping[str, VisualPrompt]) -> Path:
    dims = {p.dim for p in prompts.values()}
    if len(dims) > 1:
        raise DimensionMismatchError(f"prompts have different dimensions: {sorted(dims)}")
    body = {
        cat: {"vectors": _rows(p.vectors), "params_used": {k: _jsonable(v) for k, v in p.params_used.items()}}
        for cat, p in prompts.items()
    }
    return _write(path, "prompts", dims.pop() if dims else None, {"prompts": body})


def load_prompts(path, expected_dim: int | None = None) -> dict[str, VisualPrompt]:
    data = load_json(path)
    r, dim = _header(data, "prompts", path, expected_dim)
    items = r.get(data, "prompts", "", "object")
    if items and dim is None:
        r.fail("dim", "a non-empty prompts file must declare its dimension")
    out = {}
    for cat, item in items.items():
        where = f"prompts.{cat}"
        vectors = r.matrix(r.get(item, "vectors", where), f"{where}.vectors", dim)
        params = r.get(item, "params_used", where, "object", optional=True) or {}
        out[cat] = r.build(where, VisualPrompt, cat, vectors, params)
    return out


# config: optional "train" and "testbed" sections

def save_config(path, train: TrainConfig | None = None, testbed: TestbedSpec | None = None) -> Path:
    body = {}
    if train is not None:
        body["train"] = train.to_dict()
    if testbed is not None:
        spec = {k: getattr(testbed, k) for k in testbed.__dataclass_fields__}
        spec["proposals_per_image"] = list(spec["proposals_per_image"])
        body["testbed"] = spec
    return _write(path, "config", None, body)


def _testbed_from_dict(r: _Reader, data: Mapping) -> TestbedSpec:
    known = TestbedSpec.__dataclass_fields__
    unknown = sorted(set(data) - set(known))
    if unknown:
        r.fail("testbed", f"unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        default = known[key].default
        if key == "proposals_per_image":
            if not (isinstance(value, list) and len(value) == 2 and all(_is(v, "int") for v in value)):
                r.fail("testbed.proposals_per_image", "expected [lo, hi] integers")
            value = tuple(value)
        elif isinstance(default, int):
            if not _is(value, "int"):
                r.fail(f"testbed.{key}", "expected an integer")
        elif not _is(value, "number"):
            r.fail(f"testbed.{key}", "expected a number")
        else:
            value = float(value)
        kwargs[key] = value
    return r.build("testbed", lambda: TestbedSpec(**kwargs).validate())


def load_config(path) -> tuple[TrainConfig, TestbedSpec]:
    data = load_json(path)
    r, _ = _header(data, "config", path, None)
    train = r.get(data, "train", "", "object", optional=True) or {}
    testbed = r.get(data, "testbed", "", "object", optional=True) or {}
    extra = sorted(set(data) - {"format", "version", "dim", "train", "testbed"})
    if extra:
        r.fail("", f"unknown top-level keys {extra}")
    return r.build("train", TrainConfig.from_dict, train), _testbed_from_dict(r, testbed)


# reports

def save_report(path, kind: str, body: Mapping, dim: int | None = None) -> Path:
    return _write(path, "report", dim, {"kind": kind, **body})


def load_report(path) -> dict:
    data = load_json(path)
    r, _ = _header(data, "report", path, None)
    r.get(data, "kind", "", "str")
    return data
