"""On-disk formats: binary feature files and JSON dataset manifests.

Feature file layout (all integers unsigned 32-bit little-endian)::

    offset  size          field
    0       4             magic b"CSAF"
    4       4             version (1)
    8       4             dtype code: 1 = float32 LE, 2 = float64 LE
    12      4             n_items
    16      4             dim
    20      n*dim*width   values, item-major (item 0's dim values first)
    ...                   n_items ids, each a u32 byte length + UTF-8 bytes

Manifest (JSON)::

    {
      "name": "toy",
      "metadata": {"encoder1": "...", "encoder2": "..."},
      "modality1": "images.csaf",          # relative to the manifest
      "modality2": "captions.csaf",
      "pairs": [
        {"id1": "img0", "id2": "cap0", "split": "train", "label": "cat"},
        ...
      ]
    }

`split` and `label` are optional, but `split` must be present on every
pair or on none (then all pairs are training pairs).  A pair may also carry
``"id"`` (its pair key, default `id1`) and ``"aligned"`` (0/1, used by
detection).
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cca import FeatureMatrix

FEATURE_MAGIC = b"CSAF"
FEATURE_VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
DTYPE_CODES = {"float32": 1, "single": 1, "float64": 2, "double": 2}
_HEADER = struct.Struct("<4sIIII")
_LEN = struct.Struct("<I")


class FeatureFileError(ValueError):
    pass


class BadMagicError(FeatureFileError):
    pass


class VersionMismatchError(FeatureFileError):
    pass


class TruncatedFileError(FeatureFileError):
    pass


class DuplicateIdError(FeatureFileError):
    pass


class ManifestError(ValueError):
    pass


class MissingFileError(ManifestError):
    pass


class MissingIdError(ManifestError):
    pass


class SplitOverlapError(ManifestError):
    pass


class DuplicatePairError(ManifestError):
    pass


def encode_feature_file(features, dtype="float64"):
    code = DTYPE_CODES.get(str(dtype))
    if code is None:
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    n, d = features.n_items, features.dim
    parts = [_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, code, n, d)]
    parts.append(np.ascontiguousarray(features.values.T, dtype=DTYPES[code]).tobytes())
    for ident in features.ids:
        raw = str(ident).encode("utf-8")
        parts.append(_LEN.pack(len(raw)) + raw)
    return b"".join(parts)


def decode_feature_file(blob, source="<bytes>"):
    if len(blob) < _HEADER.size:
        raise TruncatedFileError(f"{source}: file shorter than the {_HEADER.size}-byte header")
    magic, version, code, n, d = _HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise BadMagicError(f"{source}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    if version != FEATURE_VERSION:
        raise VersionMismatchError(f"{source}: format version {version}, expected {FEATURE_VERSION}")
    if code not in DTYPES:
        raise FeatureFileError(f"{source}: unknown dtype code {code}")
    if n < 1 or d < 1:
        raise FeatureFileError(f"{source}: empty matrix ({n} items x {d} dims)")
    dt = DTYPES[code]
    end = _HEADER.size + n * d * dt.itemsize
    if len(blob) < end:
        raise TruncatedFileError(f"{source}: payload truncated ({len(blob)} bytes, need at least {end})")
    values = np.frombuffer(blob, dtype=dt, count=n * d, offset=_HEADER.size).reshape(n, d)
    ids, pos = [], end
    for i in range(n):
        if pos + _LEN.size > len(blob):
            raise TruncatedFileError(f"{source}: id table truncated at id {i}")
        (length,) = _LEN.unpack_from(blob, pos)
        pos += _LEN.size
        if pos + length > len(blob):
            raise TruncatedFileError(f"{source}: id table truncated at id {i}")
        try:
            ids.append(blob[pos : pos + length].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FeatureFileError(f"{source}: id {i} is not valid UTF-8") from exc
        pos += length
    if pos != len(blob):
        raise FeatureFileError(f"{source}: {len(blob) - pos} trailing bytes after the id table")
    if len(set(ids)) != n:
        seen, dup = set(), None
        for ident in ids:
            if ident in seen:
                dup = ident
                break
            seen.add(ident)
        raise DuplicateIdError(f"{source}: duplicate item id {dup!r}")
    if not np.all(np.isfinite(values)):
        raise FeatureFileError(f"{source}: payload contains NaN or Inf")
    return FeatureMatrix(values.T.astype(np.float64), tuple(ids))


def write_feature_file(path, features, dtype="float64"):
    Path(path).write_bytes(encode_feature_file(features, dtype))


def read_feature_file(path):
    path = Path(path)
    return decode_feature_file(path.read_bytes(), source=str(path))


@dataclass
class PairedSplit:
    """Column-aligned paired features of one split; both sides carry the pair keys as ids."""

    z1: FeatureMatrix
    z2: FeatureMatrix
    id1: tuple
    id2: tuple
    labels: tuple = None
    aligned: tuple = None

    @property
    def n_pairs(self):
        return self.z1.n_items


@dataclass
class Manifest:
    path: Path
    name: str
    metadata: dict
    train: PairedSplit
    test: PairedSplit = None
    raw: dict = field(default=None, repr=False)


def _split_view(pairs, f1, f2, index1, index2):
    keys = tuple(p.get("id", p["id1"]) for p in pairs)
    cols1 = [index1[p["id1"]] for p in pairs]
    cols2 = [index2[p["id2"]] for p in pairs]
    labels = tuple(p["label"] for p in pairs) if all("label" in p for p in pairs) else None
    aligned = tuple(int(p["aligned"]) for p in pairs) if all("aligned" in p for p in pairs) else None
    return PairedSplit(
        z1=FeatureMatrix(f1.values[:, cols1], keys),
        z2=FeatureMatrix(f2.values[:, cols2], keys),
        id1=tuple(p["id1"] for p in pairs),
        id2=tuple(p["id2"] for p in pairs),
        labels=labels,
        aligned=aligned,
    )


def load_manifest(path):
    """Parse and validate a manifest; returns train/test paired views."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise MissingFileError(f"manifest {path} does not exist") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: top level must be an object")
    for key in ("modality1", "modality2", "pairs"):
        if key not in doc:
            raise ManifestError(f"{path}: missing required field {key!r}")
    pairs = doc["pairs"]
    if not isinstance(pairs, list) or not pairs:
        raise ManifestError(f"{path}: 'pairs' must be a non-empty list")

    feats = []
    for key in ("modality1", "modality2"):
        fpath = path.parent / doc[key]
        if not fpath.is_file():
            raise MissingFileError(f"{path}: {key} file {fpath} does not exist")
        feats.append(read_feature_file(fpath))
    f1, f2 = feats
    index1 = {ident: i for i, ident in enumerate(f1.ids)}
    index2 = {ident: i for i, ident in enumerate(f2.ids)}

    has_split = ["split" in p for p in pairs if isinstance(p, dict)]
    if any(has_split) and not all(has_split):
        raise ManifestError(f"{path}: 'split' must be given for every pair or for none")
    by_split = {"train": [], "test": []}
    for i, p in enumerate(pairs):
        if not isinstance(p, dict) or "id1" not in p or "id2" not in p:
            raise ManifestError(f"{path}: pair {i} needs 'id1' and 'id2'")
        if p["id1"] not in index1:
            raise MissingIdError(f"{path}: pair {i}: id {p['id1']!r} not found in modality1 file")
        if p["id2"] not in index2:
            raise MissingIdError(f"{path}: pair {i}: id {p['id2']!r} not found in modality2 file")
        split = p.get("split", "train")
        if split not in by_split:
            raise ManifestError(f"{path}: pair {i}: split must be 'train' or 'test', got {split!r}")
        if "aligned" in p and p["aligned"] not in (0, 1):
            raise ManifestError(f"{path}: pair {i}: 'aligned' must be 0 or 1")
        by_split[split].append(p)

    train_pairs = {(p["id1"], p["id2"]) for p in by_split["train"]}
    for p in by_split["test"]:
        if (p["id1"], p["id2"]) in train_pairs:
            raise SplitOverlapError(f"{path}: pair ({p['id1']!r}, {p['id2']!r}) is in both train and test")
    for split, group in by_split.items():
        for label, get in (("id1", lambda p: p["id1"]), ("id2", lambda p: p["id2"]),
                           ("pair id", lambda p: p.get("id", p["id1"]))):
            seen = set()
            for p in group:
                ident = get(p)
                if ident in seen:
                    raise DuplicatePairError(f"{path}: {label} {ident!r} appears twice in the {split} split")
                seen.add(ident)
    if not by_split["train"]:
        raise ManifestError(f"{path}: no training pairs")

    train = _split_view(by_split["train"], f1, f2, index1, index2)
    test = _split_view(by_split["test"], f1, f2, index1, index2) if by_split["test"] else None
    return Manifest(
        path=path,
        name=str(doc.get("name", path.stem)),
        metadata=dict(doc.get("metadata", {})),
        train=train,
        test=test,
        raw=doc,
    )


def write_manifest(path, modality1, modality2, pairs, name=None, metadata=None):
    doc = {"name": name or Path(path).stem, "metadata": metadata or {}, "modality1": str(modality1),
           "modality2": str(modality2), "pairs": list(pairs)}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
