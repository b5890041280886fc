"""Binary file formats: distribution dumps (TSDD) and n-gram models (NGMD).

Both are little-endian throughout.

TSDD layout::

    magic "TSDD" | version u16 | vocab_size u32 | record_count u32 | flags u16
    record_count x ( context_id u32 | vocab_size x f32 )

NGMD layout::

    magic "NGMD" | version u16 | order u16 | uniform_weight f64
    | bos_id i32 | eos_id i32                      (-1 when absent)
    vocab block:   V u32, then V x (byte length u32, UTF-8 bytes)
    context block: C u64 | E u64
                   | C x (order-1) u32   context token ids
                   | C+1 u64             offsets into the entry arrays
                   | E u32 next ids | E u32 counts
"""
from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .dist import Dist, Vocab
from .ngram import NGramModel

DUMP_MAGIC = b"TSDD"
DUMP_VERSION = 1
DUMP_HEADER = struct.Struct("<4sHIIH")
DUMP_SUM_TOL = 1e-4

MODEL_MAGIC = b"NGMD"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sHHdii")


class FormatError(ValueError):
    """Malformed file. ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int, record: int | None = None):
        where = f"byte {offset}"
        if record is not None:
            where = f"record {record}, " + where
        super().__init__(f"{message} ({where})")
        self.offset = offset
        self.record = record


def write_dump(path, records: Iterable[tuple[int, Dist]], vocab_size: int, flags: int = 0) -> int:
    """Write ``(context_id, Dist)`` pairs; returns the record count."""
    records = list(records)
    with open(path, "wb") as f:
        f.write(DUMP_HEADER.pack(DUMP_MAGIC, DUMP_VERSION, vocab_size, len(records), flags))
        for cid, d in records:
            if d.vocab_size != vocab_size:
                raise ValueError(f"record {cid} has {d.vocab_size} entries, expected {vocab_size}")
            f.write(struct.pack("<I", cid))
            f.write(d.probs.astype("<f4").tobytes())
    return len(records)


def read_dump_header(f) -> tuple[int, int, int]:
    raw = f.read(DUMP_HEADER.size)
    if len(raw) < DUMP_HEADER.size:
        raise FormatError("file too short for a TSDD header", len(raw))
    magic, version, vocab_size, count, flags = DUMP_HEADER.unpack(raw)
    if magic != DUMP_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != DUMP_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if vocab_size == 0:
        raise FormatError("vocab_size must be positive", 6)
    return vocab_size, count, flags


def load_dump(path) -> Iterator[tuple[int, Dist]]:
    """Yield ``(context_id, Dist)`` in file order, renormalizing each record."""
    with open(path, "rb") as f:
        vocab_size, count, _ = read_dump_header(f)
        rec_size = 4 + 4 * vocab_size
        for r in range(count):
            offset = DUMP_HEADER.size + r * rec_size
            raw = f.read(rec_size)
            if len(raw) < rec_size:
                raise FormatError("file truncated mid-record", offset + len(raw), r)
            cid = struct.unpack_from("<I", raw)[0]
            probs = np.frombuffer(raw, dtype="<f4", offset=4).astype(np.float64)
            bad = np.flatnonzero(~np.isfinite(probs) | (probs < 0))
            if bad.size:
                raise FormatError("NaN, infinite or negative probability",
                                  offset + 4 + 4 * int(bad[0]), r)
            total = probs.sum()
            if abs(total - 1.0) > DUMP_SUM_TOL:
                raise FormatError(f"probabilities sum to {total:.6g}", offset + 4, r)
            yield cid, Dist(probs / total)
        trailing = f.read(1)
        if trailing:
            raise FormatError("trailing bytes after the last record",
                              DUMP_HEADER.size + count * rec_size)


def _pack_vocab(vocab: Vocab) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", vocab.size))
    for t in vocab.tokens:
        b = t.encode("utf-8")
        buf.write(struct.pack("<I", len(b)))
        buf.write(b)
    return buf.getvalue()


def save_model(m: NGramModel, path) -> None:
    C, E = m.num_contexts, m.next_ids.size
    with open(path, "wb") as f:
        f.write(_MODEL_HEADER.pack(
            MODEL_MAGIC, MODEL_VERSION, m.order, m.uniform_weight,
            -1 if m.bos_id is None else m.bos_id,
            -1 if m.eos_id is None else m.eos_id,
        ))
        f.write(_pack_vocab(m.vocab))
        f.write(struct.pack("<QQ", C, E))
        f.write(m.contexts.astype("<u4").tobytes())
        f.write(m.offsets.astype("<u8").tobytes())
        f.write(m.next_ids.astype("<u4").tobytes())
        f.write(m.next_counts.astype("<u4").tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"file truncated in {what}", len(self.data))
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def array(self, dtype: str, count: int, what: str) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        return np.frombuffer(self.take(size, what), dtype=dtype).astype(np.int64)


def load_model(path) -> NGramModel:
    r = _Reader(Path(path).read_bytes())
    magic, version, order, weight, bos, eos = r.unpack(_MODEL_HEADER.format, "header")
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    (V,) = r.unpack("<I", "vocab block")
    tokens = []
    for _ in range(V):
        at = r.pos
        (n,) = r.unpack("<I", "vocab block")
        try:
            tokens.append(r.take(n, "vocab block").decode("utf-8"))
        except UnicodeDecodeError:
            raise FormatError("vocabulary entry is not valid UTF-8", at) from None
    C, E = r.unpack("<QQ", "context block")
    contexts = r.array("<u4", C * (order - 1), "context ids")
    offsets = r.array("<u8", C + 1, "offsets")
    next_ids = r.array("<u4", E, "next ids")
    counts = r.array("<u4", E, "counts")
    if r.pos != len(r.data):
        raise FormatError("trailing bytes after the context block", r.pos)
    if offsets.size and (offsets[0] != 0 or offsets[-1] != E or np.any(np.diff(offsets) <= 0)):
        raise FormatError("inconsistent context offsets", r.pos)
    return NGramModel(order, Vocab(tuple(tokens)), contexts, offsets, next_ids, counts,
                      uniform_weight=weight,
                      bos_id=None if bos < 0 else bos,
                      eos_id=None if eos < 0 else eos)
