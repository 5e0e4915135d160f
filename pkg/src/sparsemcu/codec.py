"""Blockwise run-length coding of pruned INT8 weights.

A flattened weight array is cut into aligned blocks of ``b`` values.  Every
block that is not entirely zero becomes one record ``[d:u8][v1:i8]...[vb:i8]``
where ``d`` is the number of elements between the end of the previous record
and the start of this one.  Gaps wider than 255 are bridged with all-zero
padding records.  When the length is not a multiple of ``b`` the final partial
block is kept verbatim in a dense trailer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CorruptStream, UnalignedSparsity
from .ir.types import SparseConfig

MAX_GAP = 255


@dataclass(frozen=True)
class EncodedWeights:
    stream: bytes
    block_size: int
    original_len: int
    n_records: int
    trailer: bytes = b""

    def __post_init__(self):
        if len(self.stream) != self.n_records * (1 + self.block_size):
            raise CorruptStream(
                f"stream of {len(self.stream)} bytes cannot hold {self.n_records} records "
                f"of block size {self.block_size}")
        if len(self.trailer) != self.original_len % self.block_size:
            raise CorruptStream("trailer length does not match original length")

    @property
    def nbytes(self) -> int:
        return len(self.stream) + len(self.trailer)

    def records(self) -> np.ndarray:
        """Stream viewed as an (n_records, 1 + b) uint8 array."""
        return np.frombuffer(self.stream, dtype=np.uint8).reshape(self.n_records, 1 + self.block_size)

    @property
    def n_padding_records(self) -> int:
        vals = self.records()[:, 1:]
        return int(np.count_nonzero(~vals.any(axis=1)))

    @property
    def padding_bytes(self) -> int:
        return self.n_padding_records * (1 + self.block_size)

    @property
    def raw_bytes(self) -> int:
        """Bytes excluding padding records."""
        return self.nbytes - self.padding_bytes

    def block_starts(self) -> np.ndarray:
        """Start index of every record, padding records included."""
        d = self.records()[:, 0].astype(np.int64)
        return np.cumsum(d) + np.arange(self.n_records, dtype=np.int64) * self.block_size

    def nonzero_blocks(self) -> tuple[np.ndarray, np.ndarray]:
        """(starts, values) of the coded non-padding blocks, in stream order.

        Raises CorruptStream if a record runs past the coded length.
        """
        recs = self.records()
        starts = self.block_starts()
        limit = (self.original_len // self.block_size) * self.block_size
        if self.n_records and starts[-1] + self.block_size > limit:
            raise CorruptStream(
                f"record at element {int(starts[-1])} overruns coded length {limit}")
        vals = recs[:, 1:].view(np.int8)
        keep = vals.any(axis=1)
        return starts[keep], vals[keep]


@dataclass(frozen=True)
class DenseWeights:
    data: bytes

    @property
    def nbytes(self) -> int:
        return len(self.data)

    def array(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=np.int8)


def _as_int8_flat(weights) -> np.ndarray:
    w = np.asarray(weights)
    if w.dtype != np.int8:
        if w.size and (w.min() < -128 or w.max() > 127):
            raise ValueError("weights must be INT8 values")
        w = w.astype(np.int8)
    return w.ravel()


def _block_size(cfg) -> int:
    return cfg.block_size if isinstance(cfg, SparseConfig) else int(cfg)


def encode_blockwise_rle(weights, cfg, mask=None, strict: bool = False) -> EncodedWeights:
    """Encode a flat INT8 array.

    ``cfg`` is a SparseConfig (or a bare block size).  ``mask`` is an optional
    boolean keep-map per block; a pruned block holding a nonzero value raises
    UnalignedSparsity.  With ``strict`` a block mixing zeros and nonzeros is
    rejected as well, which flags tensors that were not blockwise-pruned.
    """
    b = _block_size(cfg)
    w = _as_int8_flat(weights)
    n_full = w.size // b
    blocks = w[:n_full * b].reshape(n_full, b)
    nz = blocks != 0
    kept = nz.any(axis=1)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool).ravel()
        if mask.size != n_full:
            raise ValueError(f"mask has {mask.size} blocks, tensor has {n_full}")
        bad = np.flatnonzero(kept & ~mask)
        if bad.size:
            raise UnalignedSparsity(f"pruned block {int(bad[0])} holds nonzero weights")
    if strict:
        partial = np.flatnonzero(kept & ~nz.all(axis=1))
        if partial.size:
            raise UnalignedSparsity(
                f"block {int(partial[0])} is partially zero; tensor is not blockwise-pruned")

    idx = np.flatnonzero(kept)
    starts = idx * b
    prev_end = np.concatenate(([0], starts[:-1] + b)) if idx.size else np.zeros(0, np.int64)
    gaps = starts - prev_end

    if idx.size == 0 or gaps.max() <= MAX_GAP:
        recs = np.empty((idx.size, 1 + b), dtype=np.uint8)
        recs[:, 0] = gaps
        recs[:, 1:] = blocks[idx].view(np.uint8)
    else:
        rows = []
        zero_vals = np.zeros(b, dtype=np.uint8)
        for gap, block in zip(gaps.tolist(), blocks[idx].view(np.uint8)):
            while gap > MAX_GAP:
                # a padding record consumes d zeros plus its own b zeros
                d = MAX_GAP if gap >= MAX_GAP + b else gap - b
                rows.append(np.concatenate(([d], zero_vals)).astype(np.uint8))
                gap -= d + b
            rows.append(np.concatenate(([gap], block)).astype(np.uint8))
        recs = np.stack(rows)
    trailer = w[n_full * b:].tobytes()
    return EncodedWeights(recs.tobytes(), b, int(w.size), int(recs.shape[0]), trailer)


def decode_blockwise_rle(enc: EncodedWeights) -> np.ndarray:
    """Inverse of :func:`encode_blockwise_rle`; returns a flat INT8 array."""
    out = np.zeros(enc.original_len, dtype=np.int8)
    b = enc.block_size
    recs = enc.records()
    if enc.n_records:
        starts = enc.block_starts()
        limit = (enc.original_len // b) * b
        if starts[-1] + b > limit:
            raise CorruptStream(
                f"cumulative position {int(starts[-1]) + b} exceeds coded length {limit}")
        pos = starts[:, None] + np.arange(b)
        out[pos.ravel()] = recs[:, 1:].view(np.int8).ravel()
    if enc.trailer:
        out[enc.original_len - len(enc.trailer):] = np.frombuffer(enc.trailer, dtype=np.int8)
    return out


def compression_ratio(cfg: SparseConfig) -> float:
    """Dense-to-sparse size ratio predicted for sparsity and block size."""
    rho, b = cfg.sparsity, cfg.block_size
    if rho >= 1:
        raise ValueError("sparsity must be below 1")
    return 1.0 / ((1.0 - rho) * (1.0 + 1.0 / b))


def choose_storage_format(weights, cfg, mask=None, strict: bool = False):
    """Return whichever of DenseWeights / EncodedWeights is strictly smaller (ties go dense)."""
    w = _as_int8_flat(weights)
    enc = encode_blockwise_rle(w, cfg, mask=mask, strict=strict)
    if enc.nbytes < w.size:
        return enc
    return DenseWeights(w.tobytes())


def stored_to_array(stored, shape) -> np.ndarray:
    """Materialize a stored weight tensor as a dense INT8 array of ``shape``."""
    if isinstance(stored, EncodedWeights):
        return decode_blockwise_rle(stored).reshape(shape)
    return stored.array().reshape(shape)
