"""Feature files: one record per image with 94 quality and/or 128 forensic values.

Text form (UTF-8, tab separated)::

    #fanet-features v1 quality=94 forensic=128
    <id>\t<q_1>\t...\t<q_94>\t<f_1>\t...\t<f_128>

Either block may be absent (its header count is then 0). Floats are written
with ``repr`` so a round trip is exact. The binary form is the checkpoint
container (kind ``"features"``) with arrays ``quality`` and ``forensic``
and the ids in the manifest.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .errors import FormatError, RejectedInputError

QUALITY_DIM = 94
FORENSIC_DIM = 128
MODEL_INPUT_DIM = QUALITY_DIM + FORENSIC_DIM
TEXT_MAGIC = "#fanet-features"


def _check_id(sample_id):
    if not sample_id or any(c in sample_id for c in "\t\r\n") or sample_id.startswith("#"):
        raise RejectedInputError(f"invalid sample id {sample_id!r}")


@dataclass
class FeatureTable:
    ids: list
    quality: np.ndarray | None = None
    forensic: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.ids)
        if len(set(self.ids)) != n:
            raise RejectedInputError("duplicate sample ids in feature table")
        for sid in self.ids:
            _check_id(sid)
        for name, block, dim in (("quality", self.quality, QUALITY_DIM), ("forensic", self.forensic, FORENSIC_DIM)):
            if block is None:
                continue
            block = np.asarray(block, dtype=np.float64).reshape(n, -1) if n else np.zeros((0, dim))
            if block.shape != (n, dim):
                raise RejectedInputError(f"{name} block has shape {block.shape}, expected ({n}, {dim})")
            setattr(self, name, block)

    def __len__(self):
        return len(self.ids)

    def index(self):
        return {sid: i for i, sid in enumerate(self.ids)}

    def combined(self):
        """``(n, 222)`` model input; both blocks must be present."""
        if self.quality is None or self.forensic is None:
            raise RejectedInputError("model input needs both quality and forensic features")
        out = np.hstack([self.quality, self.forensic])
        assert out.shape[1] == MODEL_INPUT_DIM
        return out

    def subset(self, ids):
        idx = self.index()
        missing = [i for i in ids if i not in idx]
        if missing:
            from .errors import PartialCorpusError

            raise PartialCorpusError(missing)
        rows = [idx[i] for i in ids]
        return FeatureTable(
            list(ids),
            None if self.quality is None else self.quality[rows],
            None if self.forensic is None else self.forensic[rows],
        )


def _dims(table):
    q = 0 if table.quality is None else QUALITY_DIM
    f = 0 if table.forensic is None else FORENSIC_DIM
    return q, f


def write_text(path, table):
    q, f = _dims(table)
    lines = [f"{TEXT_MAGIC} v1 quality={q} forensic={f}"]
    for i, sid in enumerate(table.ids):
        vals = []
        if q:
            vals += [repr(float(v)) for v in table.quality[i]]
        if f:
            vals += [repr(float(v)) for v in table.forensic[i]]
        lines.append("\t".join([sid] + vals))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_header(line):
    parts = line.split()
    if len(parts) != 4 or parts[0] != TEXT_MAGIC or parts[1] != "v1":
        raise FormatError(f"bad feature-file header {line!r}")
    try:
        fields = dict(p.split("=", 1) for p in parts[2:])
        q, f = int(fields["quality"]), int(fields["forensic"])
    except (ValueError, KeyError):
        raise FormatError(f"bad feature-file header {line!r}") from None
    if q not in (0, QUALITY_DIM) or f not in (0, FORENSIC_DIM):
        raise FormatError(f"feature-file header declares unsupported dims quality={q} forensic={f}")
    return q, f


def read_text(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        return FeatureTable([], None, None)
    q, f = _parse_header(lines[0])
    ids, rows = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        sid, vals = parts[0], parts[1:]
        if len(vals) != q + f:
            raise FormatError(
                f"record {sid!r} (line {lineno}) has {len(vals)} values, expected {q + f}"
            )
        try:
            rows.append([float(v) for v in vals])
        except ValueError:
            raise FormatError(f"record {sid!r} (line {lineno}) has a non-numeric value") from None
        ids.append(sid)
    data = np.array(rows, dtype=np.float64).reshape(len(ids), q + f)
    if not np.all(np.isfinite(data)):
        raise FormatError("feature file contains non-finite values")
    try:
        return FeatureTable(ids, data[:, :q] if q else None, data[:, q:] if f else None)
    except RejectedInputError as exc:
        raise FormatError(str(exc)) from None


def write_binary(path, table):
    q, f = _dims(table)
    arrays = []
    if q:
        arrays.append(("quality", table.quality))
    if f:
        arrays.append(("forensic", table.forensic))
    checkpoint.write(path, "features", {"ids": list(table.ids), "quality_dim": q, "forensic_dim": f}, arrays)


def read_binary(path):
    _, meta, arrays = checkpoint.read(path, expect_kind="features")
    ids = meta.get("ids", [])
    q = arrays.get("quality")
    f = arrays.get("forensic")
    if q is not None and q.shape != (len(ids), QUALITY_DIM):
        raise FormatError(f"quality block has shape {q.shape}")
    if f is not None and f.shape != (len(ids), FORENSIC_DIM):
        raise FormatError(f"forensic block has shape {f.shape}")
    return FeatureTable(list(ids), q, f)


def write_features(path, table, fmt="text"):
    if fmt == "text":
        write_text(path, table)
    elif fmt == "binary":
        write_binary(path, table)
    else:
        raise RejectedInputError(f"unknown feature format {fmt!r}")


def read_features(path):
    """Read either form; the binary one is recognized by its magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(len(checkpoint.MAGIC))
    if head == checkpoint.MAGIC:
        return read_binary(path)
    return read_text(path)
