"""File formats: DMRAW1 rasters, dataset manifests, calibration, models, reports.

Every writer goes through a temp file plus ``os.replace`` so readers never see
a half-written file. Every reader validates fully before returning anything.
"""
import csv
import io as _stdio
import json
import os
import re
import tempfile
from pathlib import Path

import numpy as np

from .calibration import SensorMap
from .dataset import Dataset, Entry
from .features import FEATURE_ORDER
from .imaging import DataError, Illuminant, LinearImage
from .nn import Architecture, MlpModel

RASTER_MAGIC = "DMRAW1"
MANIFEST_FORMAT = "dmcc-manifest-1"
MODEL_FORMAT = "dmcc-mlp-1"
MODEL_FLOAT_ENCODING = "decimal-shortest-float32"
CALIBRATION_KINDS = ("diagonal", "full")
_MAX_HEADER = 256


def atomic_write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _umask():
    mask = os.umask(0)
    os.umask(mask)
    return mask


def _read_json(path, what):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{what} {path} is not valid JSON: {exc}") from None


def _dump_json(obj):
    return json.dumps(obj, indent=1, allow_nan=False) + "\n"


# --------------------------------------------------------------------------
# DMRAW1 rasters

def encode_raster(image):
    h, w = image.height, image.width
    bl = " ".join(repr(float(v)) for v in image.black_level)
    header = f"{RASTER_MAGIC} {w} {h} 3 {bl} {float(image.saturation_level)!r}\n"
    return header.encode("ascii") + image.pixels.astype("<f4").tobytes()


def write_raster(path, image):
    atomic_write(path, encode_raster(image))


def _parse_header(line):
    parts = line.split()
    if len(parts) != 8 or parts[0] != RASTER_MAGIC:
        raise DataError(f"bad raster header {line[:60]!r}")
    try:
        w, h, c = int(parts[1]), int(parts[2]), int(parts[3])
        black = np.array([float(v) for v in parts[4:7]])
        sat = float(parts[7])
    except ValueError:
        raise DataError(f"bad raster header {line[:60]!r}") from None
    if c != 3 or w < 1 or h < 1:
        raise DataError(f"unsupported raster geometry {w}x{h}x{c}")
    return w, h, black, sat


def read_raster_header(path):
    with open(path, "rb") as fh:
        line = fh.readline(_MAX_HEADER)
    if not line.endswith(b"\n"):
        raise DataError(f"{path}: raster header missing or too long")
    return _parse_header(line.decode("ascii", errors="replace"))


def decode_raster(data):
    nl = data.find(b"\n", 0, _MAX_HEADER)
    if nl < 0:
        raise DataError("raster header missing or too long")
    w, h, black, sat = _parse_header(data[:nl].decode("ascii", errors="replace"))
    body = data[nl + 1:]
    expected = w * h * 3 * 4
    if len(body) != expected:
        raise DataError(f"raster body has {len(body)} bytes, expected {expected}")
    px = np.frombuffer(body, dtype="<f4").reshape(h, w, 3).astype(np.float64)
    return LinearImage(px, black, sat)


def read_raster(path):
    with open(path, "rb") as fh:
        return decode_raster(fh.read())


# --------------------------------------------------------------------------
# manifests

def _entry_from_json(raw, base, defaults):
    if not isinstance(raw, dict):
        raise DataError(f"manifest entry is not an object: {raw!r}"[:200])
    eid = raw.get("id")
    if not isinstance(eid, str) or not eid:
        raise DataError(f"manifest entry without a string id: {raw!r}"[:200])
    try:
        ill = Illuminant(raw["illuminant_rgb"])
        rel = raw["raster_path"]
        black = np.broadcast_to(np.asarray(raw.get("black_level", 0.0), dtype=np.float64), (3,))
        sat = float(raw.get("saturation", 1.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"entry {eid}: {exc}") from None
    path = (base / rel).resolve()
    if not path.is_file():
        raise DataError(f"entry {eid}: raster {rel} not found")
    try:
        _, _, h_black, h_sat = read_raster_header(path)
    except DataError as exc:
        raise DataError(f"entry {eid}: {exc}") from None
    if not np.array_equal(h_black, black) or h_sat != sat:
        raise DataError(f"entry {eid}: raster header black/saturation disagree with manifest")

    def loader(path=path, eid=eid):
        try:
            return read_raster(path)
        except DataError as exc:
            raise DataError(f"entry {eid}: {exc}") from None

    return Entry(eid, ill, raw.get("sensor_name", defaults), raw.get("split"), None, loader)


def load_dataset(manifest_path):
    """Validate a manifest and return a Dataset whose rasters load on demand."""
    manifest_path = Path(manifest_path)
    doc = _read_json(manifest_path, "manifest")
    if not isinstance(doc, dict) or doc.get("format") != MANIFEST_FORMAT:
        raise DataError(f"{manifest_path}: unsupported manifest format {doc.get('format') if isinstance(doc, dict) else None!r}")
    sensor = doc.get("sensor", {}) or {}
    name = sensor.get("name", "")
    white = sensor.get("d65_white")
    entries = []
    seen = set()
    for raw in doc.get("entries", []):
        e = _entry_from_json(raw, manifest_path.parent, name)
        if e.id in seen:
            raise DataError(f"duplicate entry id {e.id}")
        seen.add(e.id)
        entries.append(e)
    return Dataset(entries, name, None if white is None else np.asarray(white, dtype=np.float64))


def save_dataset(dataset, manifest_path, raster_dir=None):
    """Write every raster plus a manifest with paths relative to the manifest."""
    manifest_path = Path(manifest_path)
    raster_dir = Path(raster_dir) if raster_dir else manifest_path.parent / "rasters" / manifest_path.stem
    rows = []
    for e in dataset:
        img = e.load_image()
        rpath = raster_dir / f"{e.id}.dmraw"
        write_raster(rpath, img)
        row = {
            "id": e.id,
            "raster_path": os.path.relpath(rpath, manifest_path.parent),
            "illuminant_rgb": e.illuminant.rgb.tolist(),
            "black_level": img.black_level.tolist(),
            "saturation": img.saturation_level,
            "sensor_name": e.sensor_name or dataset.sensor_name,
        }
        if e.split is not None:
            row["split"] = e.split
        rows.append(row)
    sensor = {"name": dataset.sensor_name}
    if dataset.white_point is not None:
        sensor["d65_white"] = np.asarray(dataset.white_point).tolist()
    doc = {"format": MANIFEST_FORMAT, "sensor": sensor, "entries": rows}
    atomic_write(manifest_path, _dump_json(doc))


def manifest_from_directory(root, manifest_path, sensor_name, white_point=None):
    """Build a manifest from ``<stem>.dmraw`` rasters paired with ``<stem>.wp`` labels.

    A ``.wp`` file holds the ground-truth illuminant as three whitespace or
    comma separated numbers. This is the hook for external datasets such as
    INTEL-TAU: convert each camera's images to DMRAW1 (black level and
    saturation taken from the camera metadata) and write its ground-truth
    white point next to it, one directory per camera. No data is bundled.
    """
    root = Path(root)
    manifest_path = Path(manifest_path)
    rows = []
    for raster in sorted(root.rglob("*.dmraw")):
        wp = raster.with_suffix(".wp")
        if not wp.is_file():
            continue
        rgb = [float(v) for v in re.split(r"[\s,]+", wp.read_text().strip())]
        _, _, black, sat = read_raster_header(raster)
        rows.append({
            "id": raster.relative_to(root).with_suffix("").as_posix(),
            "raster_path": os.path.relpath(raster, manifest_path.parent),
            "illuminant_rgb": rgb,
            "black_level": black.tolist(),
            "saturation": sat,
            "sensor_name": sensor_name,
        })
    sensor = {"name": sensor_name}
    if white_point is not None:
        sensor["d65_white"] = list(white_point)
    atomic_write(manifest_path, _dump_json({"format": MANIFEST_FORMAT, "sensor": sensor,
                                            "entries": rows}))
    return len(rows)


# --------------------------------------------------------------------------
# calibration

def save_calibration(path, m):
    doc = {
        "kind": m.kind,
        "matrix": m.matrix.tolist(),
        "source_white": None if m.source_white is None else m.source_white.tolist(),
        "target_white": None if m.target_white is None else m.target_white.tolist(),
    }
    atomic_write(path, _dump_json(doc))


def load_calibration(path):
    doc = _read_json(path, "calibration")
    if not isinstance(doc, dict) or doc.get("kind") not in CALIBRATION_KINDS:
        raise DataError(f"{path}: unknown calibration kind")
    try:
        return SensorMap(doc["kind"], doc["matrix"], doc.get("source_white"),
                         doc.get("target_white"))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# models

def _f32(values):
    # shortest decimal that parses back to the same float32
    return [float(str(np.float32(v))) for v in np.asarray(values, dtype=np.float32).ravel()]


def model_to_json(model):
    layers = []
    for w, b in model.layers:
        layers.append({"w": [_f32(row) for row in w], "b": _f32(b)})
    doc = {
        "format": MODEL_FORMAT,
        "float_encoding": MODEL_FLOAT_ENCODING,
        "arch": model.arch.to_dict(),
        "feature_order": list(model.feature_order),
        "layers": layers,
        "meta": model.meta,
    }
    return json.dumps(doc, separators=(",", ":"), allow_nan=False) + "\n"


def save_model(path, model):
    atomic_write(path, model_to_json(model))


def model_from_json(doc):
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise DataError(f"unsupported model format {doc.get('format') if isinstance(doc, dict) else None!r}")
    if doc.get("float_encoding", MODEL_FLOAT_ENCODING) != MODEL_FLOAT_ENCODING:
        raise DataError(f"unsupported float encoding {doc.get('float_encoding')!r}")
    try:
        a = doc["arch"]
        arch = Architecture(int(a["input_dim"]), int(a["hidden_width"]),
                            int(a["hidden_layers"]), int(a["output_dim"]))
        declared = int(a.get("param_count", arch.param_count))
        order = tuple(doc["feature_order"])
        raw_layers = doc["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed model file: {exc}") from None
    if declared != arch.param_count:
        raise DataError(f"parameter count mismatch: declared {declared}, "
                        f"architecture implies {arch.param_count}")
    if len(order) != arch.input_dim:
        raise DataError(f"feature_order has {len(order)} names but input_dim is {arch.input_dim}")
    if order != FEATURE_ORDER:
        raise DataError(f"unknown feature order {order}")
    stored = 0
    layers = []
    try:
        for layer in raw_layers:
            w = np.asarray(layer["w"], dtype=np.float64)
            b = np.asarray(layer["b"], dtype=np.float64)
            stored += w.size + b.size
            layers.append((w, b))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed model layers: {exc}") from None
    if stored != arch.param_count:
        raise DataError(f"parameter count mismatch: file stores {stored}, "
                        f"architecture needs {arch.param_count}")
    for w, b in layers:
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise DataError("model contains non-finite parameters")
    try:
        return MlpModel(arch, layers, order, dict(doc.get("meta") or {}))
    except ValueError as exc:
        raise DataError(f"model layers do not match architecture: {exc}") from None


def load_model(path):
    return model_from_json(_read_json(path, "model"))


# --------------------------------------------------------------------------
# reports

def evaluation_report(ids, errors, summary, **extra):
    doc = summary.to_dict()
    doc.update(extra)
    doc["per_image"] = [{"id": i, "error_deg": float(e)} for i, e in zip(ids, errors)]
    return doc


def save_json(path, doc):
    atomic_write(path, _dump_json(doc))


def save_curve_csv(path, report):
    buf = _stdio.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["epoch", "train_loss", "val_error_deg"])
    for k, (l, v) in enumerate(zip(report.train_loss, report.val_error)):
        wr.writerow([k, repr(float(l)), repr(float(v))])
    atomic_write(path, buf.getvalue())


def save_features_csv(path, ids, feats):
    buf = _stdio.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["id", *FEATURE_ORDER])
    for i, f in zip(ids, feats):
        wr.writerow([i, *(repr(float(v)) for v in f)])
    atomic_write(path, buf.getvalue())
