"""On-disk formats.

A model or dataset ``<name>`` is stored as

* ``<name>.manifest`` -- UTF-8 text: ``key = value`` lines, then one line per
  layer / parameter / mask (models) or the image shape (datasets);
* ``<name>.blob`` -- 8-byte magic ``RPRN1\\0\\0\\0``, an 8-byte little-endian
  byte-order mark, then raw little-endian float64 values, row-major;
* ``<name>.labels`` -- datasets only, raw little-endian int64.

Trajectories are CSV with the columns listed in :data:`CSV_FIXED`.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable

import numpy as np

from .metrics import CurveRecord
from .nn import LAYER_TYPES, ModelGraph
from .toylab import LabeledSet

FORMAT_VERSION = 1
MAGIC = b"RPRN1\x00\x00\x00"
BOM = 0x0102030405060708
HEADER_BYTES = 16


class ModelIOError(ValueError):
    pass


class FormatVersionError(ModelIOError):
    pass


class MagicError(ModelIOError):
    pass


class TruncatedBlobError(ModelIOError):
    pass


class LayoutError(ModelIOError):
    """Shapes, offsets or counts in a manifest do not agree."""


def _base(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".manifest", ".blob", ".labels") else p


def _paths(path):
    b = _base(path)
    return b.with_name(b.name + ".manifest"), b.with_name(b.name + ".blob"), b.with_name(b.name + ".labels")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v) if text else ()


def _fmt_shape(shape) -> str:
    return ",".join(str(int(s)) for s in shape)


def _write_blob(path: Path, values: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array([BOM], dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def _read_blob(path: Path, expected: int) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < HEADER_BYTES or raw[:8] != MAGIC:
        raise MagicError(f"{path}: missing RPRN1 magic header")
    if int(np.frombuffer(raw[8:16], dtype="<u8")[0]) != BOM:
        raise MagicError(f"{path}: byte-order mark mismatch")
    available = (len(raw) - HEADER_BYTES) // 8
    if available < expected:
        raise TruncatedBlobError(f"{path}: manifest declares {expected} values, blob holds {available}")
    return np.frombuffer(raw, dtype="<f8", count=expected, offset=HEADER_BYTES).astype(np.float64)


def _parse_manifest(path: Path):
    if not path.exists():
        raise FileNotFoundError(path)
    keys, rows = {}, []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if " = " in line:
            k, v = line.split(" = ", 1)
            keys[k.strip()] = v.strip()
        else:
            rows.append((n, line.split()))
    version = keys.get("format_version")
    if version != str(FORMAT_VERSION):
        raise FormatVersionError(f"{path}: format_version {version!r}, expected {FORMAT_VERSION}")
    return keys, rows


def _require(keys, name, path):
    try:
        return keys[name]
    except KeyError:
        raise LayoutError(f"{path}: missing key {name!r}") from None


# ---------------------------------------------------------------------- model


def save_model(model: ModelGraph, path) -> Path:
    manifest, blob, _ = _paths(path)
    manifest.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        "# relprune model",
        f"format_version = {FORMAT_VERSION}",
        "kind = model",
        f"input_shape = {_fmt_shape(model.input_shape)}",
        f"num_classes = {model.num_classes}",
        f"f_num = {model.f_num}",
    ]
    chunks, offset, body = [], 0, []
    for i, layer in enumerate(model.layers):
        hyper = " ".join(f"{k}={v!r}" for k, v in layer.hyper().items())
        body.append(f"layer {i} {layer.kind} {hyper}".rstrip())
        for name, arr in layer.params().items():
            body.append(f"param {i} {name} {_fmt_shape(arr.shape) or '-'} {offset} {arr.size}")
            chunks.append(arr.ravel())
            offset += arr.size
    for k, m in enumerate(model.masks):
        body.append(f"mask {k} {''.join('1' if v else '0' for v in m)}")
    lines.append(f"blob_values = {offset}")
    manifest.write_text("\n".join(lines + body) + "\n", encoding="utf-8")
    _write_blob(blob, np.concatenate(chunks) if chunks else np.zeros(0))
    return manifest


def _hyper_value(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def load_model(path) -> ModelGraph:
    manifest, blob, _ = _paths(path)
    keys, rows = _parse_manifest(manifest)
    if keys.get("kind") != "model":
        raise LayoutError(f"{manifest}: not a model manifest")
    total = int(_require(keys, "blob_values", manifest))
    values = _read_blob(blob, total)

    layer_defs: dict[int, tuple[str, dict]] = {}
    params: dict[int, dict[str, np.ndarray]] = {}
    masks: dict[int, np.ndarray] = {}
    spans = []
    for n, parts in rows:
        tag = parts[0]
        if tag == "layer":
            kind = parts[2]
            if kind not in LAYER_TYPES:
                raise LayoutError(f"{manifest}:{n}: unknown layer kind {kind!r}")
            hyper = dict(p.split("=", 1) for p in parts[3:])
            layer_defs[int(parts[1])] = (kind, {k: _hyper_value(v) for k, v in hyper.items()})
        elif tag == "param":
            li, name, shape_s, off, length = int(parts[1]), parts[2], parts[3], int(parts[4]), int(parts[5])
            shape = () if shape_s == "-" else _ints(shape_s)
            if int(np.prod(shape)) != length:
                raise LayoutError(f"{manifest}:{n}: shape {shape} does not hold {length} values")
            if off < 0 or off + length > total:
                raise TruncatedBlobError(f"{manifest}:{n}: span [{off}, {off + length}) beyond {total} values")
            spans.append((off, off + length, n))
            params.setdefault(li, {})[name] = values[off : off + length].reshape(shape).copy()
        elif tag == "mask":
            masks[int(parts[1])] = np.array([c == "1" for c in parts[2]], dtype=bool)
        else:
            raise LayoutError(f"{manifest}:{n}: unrecognised line {' '.join(parts)!r}")
    spans.sort()
    for (a0, a1, na), (b0, b1, nb) in zip(spans, spans[1:]):
        if b0 < a1:
            raise LayoutError(f"{manifest}: parameter spans on lines {na} and {nb} overlap")

    layers = []
    for i in range(len(layer_defs)):
        if i not in layer_defs:
            raise LayoutError(f"{manifest}: layer {i} missing")
        kind, hyper = layer_defs[i]
        try:
            layers.append(LAYER_TYPES[kind](**params.get(i, {}), **hyper))
        except (TypeError, ValueError) as exc:
            raise LayoutError(f"{manifest}: layer {i} ({kind}): {exc}") from exc
    mask_list = [masks[k] for k in sorted(masks)] if masks else None
    try:
        model = ModelGraph(tuple(layers), _ints(_require(keys, "input_shape", manifest)), mask_list)
    except ValueError as exc:
        raise LayoutError(f"{manifest}: {exc}") from exc
    if model.f_num != int(_require(keys, "f_num", manifest)):
        raise LayoutError(f"{manifest}: f_num {keys['f_num']} != conv channel total {model.f_num}")
    return model


# -------------------------------------------------------------------- dataset


def save_dataset(data: LabeledSet, path) -> Path:
    if len(data) == 0:
        raise ModelIOError("refusing to write an empty dataset")
    manifest, blob, labels = _paths(path)
    manifest.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        "# relprune dataset",
        f"format_version = {FORMAT_VERSION}",
        "kind = dataset",
        f"shape = {_fmt_shape(data.images.shape)}",
        f"count = {len(data)}",
        f"blob_values = {data.images.size}",
    ]
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_blob(blob, data.images.ravel())
    labels.write_bytes(np.ascontiguousarray(data.labels, dtype="<i8").tobytes())
    return manifest


def load_dataset(path) -> LabeledSet:
    manifest, blob, labels_path = _paths(path)
    keys, _ = _parse_manifest(manifest)
    if keys.get("kind") != "dataset":
        raise LayoutError(f"{manifest}: not a dataset manifest")
    shape = _ints(_require(keys, "shape", manifest))
    count = int(_require(keys, "count", manifest))
    total = int(_require(keys, "blob_values", manifest))
    if count < 1 or not shape or shape[0] != count:
        raise LayoutError(f"{manifest}: empty or inconsistent dataset (count={count}, shape={shape})")
    if int(np.prod(shape)) != total:
        raise LayoutError(f"{manifest}: shape {shape} does not hold {total} values")
    images = _read_blob(blob, total).reshape(shape)
    raw = labels_path.read_bytes()
    if len(raw) % 8 or len(raw) // 8 != count:
        raise LayoutError(f"{labels_path}: {len(raw) // 8} labels for {count} images")
    return LabeledSet(images, np.frombuffer(raw, dtype="<i8").astype(np.int64))


# ---------------------------------------------------------------- trajectories

CSV_FIXED = ("strategy", "seed", "rate", "overall_acc", "harmonic_mean")


def csv_header(num_classes: int) -> list[str]:
    return list(CSV_FIXED) + [f"acc_class_{i}" for i in range(num_classes)] + ["wall_time_s"]


def record_row(rec: CurveRecord, num_classes: int) -> list:
    acc = rec.per_class.accuracy
    return (
        [rec.strategy, rec.seed, repr(rec.rate), repr(rec.overall_accuracy), repr(rec.harmonic_mean)]
        + [repr(acc[c]) if c in acc else "" for c in range(num_classes)]
        + [repr(rec.wall_time_seconds)]
    )


def write_trajectory_csv(path, records: Iterable[CurveRecord], num_classes: int, append: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fresh = not (append and path.exists())
    with open(path, "a" if not fresh else "w", newline="") as fh:
        w = csv.writer(fh)
        if fresh:
            w.writerow(csv_header(num_classes))
        for rec in records:
            w.writerow(record_row(rec, num_classes))
    return path


def read_trajectory_csv(path) -> list[dict]:
    """Rows as dicts; ``per_class`` maps class id -> accuracy."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = [c for c in CSV_FIXED + ("wall_time_s",) if c not in cols]
        if missing:
            raise LayoutError(f"{path}: missing columns {missing}")
        class_cols = [c for c in cols if c.startswith("acc_class_")]
        rows = []
        for row in reader:
            rows.append(
                {
                    "strategy": row["strategy"],
                    "seed": int(row["seed"]),
                    "rate": float(row["rate"]),
                    "overall_acc": float(row["overall_acc"]),
                    "harmonic_mean": float(row["harmonic_mean"]),
                    "wall_time_s": float(row["wall_time_s"]),
                    "per_class": {int(c[len("acc_class_"):]): float(row[c]) for c in class_cols if row[c] != ""},
                }
            )
    return rows


def class_columns(path) -> tuple[str, ...]:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), [])
    return tuple(c for c in header if c.startswith("acc_class_"))
