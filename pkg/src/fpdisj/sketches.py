"""Insert-only stream estimators that can be forked and relayed as bytes.

Four estimators share the :class:`Sketch` interface:

* :class:`ExactEstimator` keeps the whole frequency vector.
* :class:`NoisyOracleEstimator` wraps the exact value in a ``(1 +- eps_hat)``
  band, either at random or at the endpoint that hurts the decision most.
* :class:`KmvF0Sketch` counts distinct items from the k smallest hashes.
* :class:`AmsFpSketch` is the sampling estimator of Alon, Matias and Szegedy
  with a median-of-means combiner.

Payload layout (all integers little endian)::

    magic[4] version[u8] dim[u64] eps_hat[f64] delta_hat[f64]   29 bytes
    <type-specific header> <value array>

KMV adds ``k[u32] seed[u64] count[u32]`` then ``count`` u64 hashes, so an
empty KMV payload is 45 bytes.  AMS adds ``p[f64] rows[u32] cols[u32]
length[u64]`` and a 37-byte PCG64 state (90 bytes of header in total), then
``rows*cols`` u32 sampled items followed by ``rows*cols`` u32 counters:
8 bytes per estimator.  The exact estimator adds ``p[f64] count[u32]`` and
``count`` records of ``index[u64] value[f64]``; the noisy estimator inserts
``mode[u8] heavy[u32] boost[f64] noise[f64]`` and its PCG64 state before
the count.
"""

from __future__ import annotations

import abc
import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import ClassVar, Sequence

import numpy as np

from .core import CorruptPayload, InvalidArgument, NonIntegerWeight, as_fraction, power_sum

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

_COMMON = struct.Struct("<4sBQdd")
_PCG = struct.Struct("<QQQQBI")


def splitmix64(x: int) -> int:
    """One step of the SplitMix64 output function on a scalar state."""
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def splitmix64_array(x: np.ndarray) -> np.ndarray:
    z = np.asarray(x, dtype=np.uint64) + np.uint64(GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def derive_seed(master: int, counter: int) -> int:
    """Seed number ``counter`` of the schedule rooted at ``master``."""
    return splitmix64((master + counter * GOLDEN) & MASK64)


def hash_indices(indices, seed: int) -> np.ndarray:
    return splitmix64_array(np.asarray(indices, dtype=np.uint64) ^ np.uint64(seed & MASK64))


def _pack_pcg(rng: np.random.Generator) -> bytes:
    st = rng.bit_generator.state
    state, inc = st["state"]["state"], st["state"]["inc"]
    return _PCG.pack(
        state & MASK64, state >> 64, inc & MASK64, inc >> 64, st["has_uint32"], st["uinteger"]
    )


def _unpack_pcg(raw: bytes) -> np.random.Generator:
    s_lo, s_hi, i_lo, i_hi, has32, uint = _PCG.unpack(raw)
    bg = np.random.PCG64()
    bg.state = {
        "bit_generator": "PCG64",
        "state": {"state": s_lo | (s_hi << 64), "inc": i_lo | (i_hi << 64)},
        "has_uint32": has32,
        "uinteger": uint,
    }
    return np.random.Generator(bg)


def _clone_rng(rng: np.random.Generator) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = rng.bit_generator.state
    return np.random.Generator(bg)


class _Reader:
    def __init__(self, payload: bytes, offset: int):
        self.buf = payload
        self.pos = offset

    def take(self, fmt: str | struct.Struct):
        s = fmt if isinstance(fmt, struct.Struct) else struct.Struct(fmt)
        if self.pos + s.size > len(self.buf):
            raise CorruptPayload("payload truncated")
        out = s.unpack_from(self.buf, self.pos)
        self.pos += s.size
        return out

    def raw(self, size: int) -> bytes:
        if self.pos + size > len(self.buf):
            raise CorruptPayload("payload truncated")
        out = self.buf[self.pos:self.pos + size]
        self.pos += size
        return bytes(out)

    def array(self, dtype: str, count: int) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        return np.frombuffer(self.raw(size), dtype=dtype).copy()

    def finish(self):
        if self.pos != len(self.buf):
            raise CorruptPayload(f"{len(self.buf) - self.pos} trailing bytes")


@dataclass(frozen=True)
class Probe:
    """Estimates after inserting the probe weight at each index.

    ``indices`` are listed explicitly; every other index of ``[1, dim]``
    shares the estimate ``rest`` (``None`` when all indices are listed).
    """

    dim: int
    indices: np.ndarray
    values: np.ndarray
    rest: float | None = None

    def first_at_least(self, threshold: float) -> int | None:
        """Smallest index whose estimate reaches ``threshold``."""
        hits = self.indices[self.values >= threshold]
        best = int(hits.min()) if hits.size else None
        if self.rest is not None and self.rest >= threshold:
            free = _smallest_missing(self.indices, self.dim)
            if free is not None and (best is None or free < best):
                best = free
        return best

    def value_at(self, i: int) -> float:
        pos = np.searchsorted(self.indices, i)
        if pos < self.indices.size and self.indices[pos] == i:
            return float(self.values[pos])
        if self.rest is None:
            raise KeyError(i)
        return float(self.rest)


def _smallest_missing(sorted_indices: np.ndarray, dim: int) -> int | None:
    expected = np.arange(1, sorted_indices.size + 1)
    gaps = np.nonzero(sorted_indices != expected)[0]
    cand = int(gaps[0]) + 1 if gaps.size else sorted_indices.size + 1
    return cand if cand <= dim else None


class Sketch(abc.ABC):
    """Common contract: insert, estimate, fork, and byte serialization."""

    MAGIC: ClassVar[bytes]
    VERSION: ClassVar[int] = 1
    _registry: ClassVar[dict[bytes, type[Sketch]]] = {}

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if "MAGIC" in cls.__dict__:
            Sketch._registry[cls.MAGIC] = cls

    def __init__(self, dim: int, eps_hat: float = math.nan, delta_hat: float = math.nan):
        if dim < 1:
            raise InvalidArgument(f"dim must be positive, got {dim}")
        self.dim = int(dim)
        self.eps_hat = float(eps_hat)
        self.delta_hat = float(delta_hat)

    @abc.abstractmethod
    def insert_many(self, indices: Sequence[int], weights: Sequence[float] | None = None) -> None:
        """Insert a batch of arrivals, in order; weights default to 1."""

    def insert(self, index: int, weight: float = 1) -> None:
        self.insert_many([index], [weight])

    def update(self, upd) -> None:
        self.insert(upd.index, upd.weight)

    @abc.abstractmethod
    def estimate(self) -> float: ...

    @abc.abstractmethod
    def fork(self) -> Sketch: ...

    @abc.abstractmethod
    def _body(self) -> bytes: ...

    @classmethod
    @abc.abstractmethod
    def _decode(cls, reader: _Reader, dim: int, eps_hat: float, delta_hat: float) -> Sketch: ...

    def serialize(self) -> bytes:
        head = _COMMON.pack(self.MAGIC, self.VERSION, self.dim, self.eps_hat, self.delta_hat)
        return head + self._body()

    @classmethod
    def deserialize(cls, payload: bytes) -> Sketch:
        sk = deserialize(payload)
        if cls is not Sketch and not isinstance(sk, cls):
            raise CorruptPayload(f"payload holds {type(sk).__name__}, not {cls.__name__}")
        return sk

    def probe(self, weight: float) -> Probe:
        """Estimate after inserting ``(i, weight)`` into an isolated fork, for every i."""
        idx = np.arange(1, self.dim + 1)
        vals = np.empty(self.dim)
        for k, i in enumerate(idx):
            f = self.fork()
            f.insert(int(i), weight)
            vals[k] = f.estimate()
        return Probe(self.dim, idx, vals)

    def _check_indices(self, indices) -> np.ndarray:
        arr = np.asarray(indices, dtype=np.int64).reshape(-1)
        if arr.size and (arr.min() < 1 or arr.max() > self.dim):
            raise InvalidArgument(f"index outside [1, {self.dim}]")
        return arr


def deserialize(payload: bytes) -> Sketch:
    """Decode any sketch payload, dispatching on its magic."""
    if len(payload) < _COMMON.size:
        raise CorruptPayload("payload shorter than common header")
    magic, version, dim, eps_hat, delta_hat = _COMMON.unpack_from(payload, 0)
    cls = Sketch._registry.get(magic)
    if cls is None:
        raise CorruptPayload(f"unknown magic {magic!r}")
    if version != cls.VERSION:
        raise CorruptPayload(f"unsupported {cls.__name__} version {version}")
    if dim < 1:
        raise CorruptPayload("zero dimension")
    reader = _Reader(payload, _COMMON.size)
    try:
        sk = cls._decode(reader, dim, eps_hat, delta_hat)
    except (struct.error, ValueError) as exc:
        if isinstance(exc, CorruptPayload):
            raise
        raise CorruptPayload(str(exc)) from exc
    reader.finish()
    return sk


def amplification_plan(eps_hat, delta_hat=None, n: int | None = None, C: float = 16) -> tuple[int, int, int]:
    """Rows, columns and KMV size for accuracy ``eps_hat`` and failure ``delta_hat``.

    ``delta_hat`` defaults to ``1/(20 n)``.  Rows ``2*ceil(18 ln(1/delta))+1``
    feed the median; ``ceil(C/eps^2)`` columns feed each mean; KMV keeps
    ``ceil(12/eps^2)`` hashes.
    """
    e = as_fraction(eps_hat)
    if delta_hat is None:
        if n is None:
            raise InvalidArgument("need delta_hat or n")
        delta_hat = Fraction(1, 20 * n)
    d = as_fraction(delta_hat)
    if not (0 < e < 1 and 0 < d < 1):
        raise InvalidArgument("eps_hat and delta_hat must lie in (0, 1)")
    rows = 2 * math.ceil(18 * math.log(1 / float(d))) + 1
    cols = math.ceil(as_fraction(C) / (e * e))
    k = math.ceil(Fraction(12) / (e * e))
    return rows, cols, k


# ---------------------------------------------------------------------------
# Exact and noisy estimators


class ExactEstimator(Sketch):
    """Keeps the full vector; ``p == 0`` reports distinct count."""

    MAGIC = b"EXCT"
    _HEAD = struct.Struct("<dI")
    _REC = np.dtype([("index", "<u8"), ("value", "<f8")])

    def __init__(self, dim: int, p: float = 0.0, eps_hat: float = 0.0, delta_hat: float = 0.0):
        super().__init__(dim, eps_hat, delta_hat)
        self.p = float(p)
        self.entries: dict[int, float] = {}

    def insert_many(self, indices, weights=None):
        idx = self._check_indices(indices)
        w = np.ones(idx.size) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
        if w.size != idx.size:
            raise InvalidArgument("indices and weights differ in length")
        if w.size and not (w > 0).all():
            raise InvalidArgument("weights must be positive")
        for i, wt in zip(idx.tolist(), w.tolist()):
            self.entries[i] = self.entries.get(i, 0.0) + wt

    def exact(self) -> float:
        return power_sum(self.entries.values(), self.p)

    def estimate(self) -> float:
        return self.exact()

    def _copy_into(self, other: ExactEstimator) -> None:
        other.entries = dict(self.entries)

    def fork(self) -> ExactEstimator:
        out = ExactEstimator(self.dim, self.p, self.eps_hat, self.delta_hat)
        self._copy_into(out)
        return out

    def _entries_bytes(self) -> bytes:
        recs = np.array(sorted(self.entries.items()), dtype=self._REC) if self.entries else np.empty(0, self._REC)
        return struct.pack("<I", len(recs)) + recs.tobytes()

    def _body(self) -> bytes:
        return struct.pack("<d", self.p) + self._entries_bytes()

    @classmethod
    def _read_entries(cls, reader: _Reader, dim: int) -> dict[int, float]:
        (count,) = reader.take("<I")
        recs = reader.array(cls._REC, count) if count else np.empty(0, cls._REC)
        if count and (recs["index"].min() < 1 or recs["index"].max() > dim):
            raise CorruptPayload("entry index out of range")
        return {int(i): float(v) for i, v in zip(recs["index"], recs["value"])}

    @classmethod
    def _decode(cls, reader, dim, eps_hat, delta_hat):
        (p,) = reader.take("<d")
        out = cls(dim, p, eps_hat, delta_hat)
        out.entries = cls._read_entries(reader, dim)
        return out

    def _probe_points(self) -> tuple[np.ndarray, int | None]:
        support = np.array(sorted(self.entries), dtype=np.int64)
        return support, _smallest_missing(support, self.dim)

    def probe(self, weight: float) -> Probe:
        # every index outside the support gives the same estimate, so one
        # representative stands in for all of them
        support, free = self._probe_points()
        if type(self) is ExactEstimator:
            return self._probe_closed_form(support, free, weight)
        vals = np.empty(support.size)
        for k, i in enumerate(support.tolist()):
            f = self.fork()
            f.insert(i, weight)
            vals[k] = f.estimate()
        rest = None
        if free is not None:
            f = self.fork()
            f.insert(free, weight)
            rest = f.estimate()
        return Probe(self.dim, support, vals, rest)


    def _probe_closed_form(self, support: np.ndarray, free: int | None, weight: float) -> Probe:
        # only coordinate i changes, so swap its term in the power sum
        base = self.exact()
        x = np.array([self.entries[i] for i in support.tolist()], dtype=np.float64)
        if self.p == 0:
            vals = np.full(support.size, base)
            rest = base + 1
        else:
            vals = base - x**self.p + (x + weight) ** self.p
            rest = base + float(weight) ** self.p
        return Probe(self.dim, support, vals, rest if free is not None else None)


class NoisyOracleEstimator(ExactEstimator):
    """Exact value pushed anywhere inside ``[(1 - eps_hat) v, (1 + eps_hat) v]``.

    ``mode="random"`` redraws a uniform factor after every insert batch
    (forks inherit the generator, so identical inserts give identical
    estimates).  ``mode="adversarial"`` picks the endpoint that works
    against the correct decision:

    * as an F_0 estimator (``p == 0``): the high end if some coordinate has
      reached ``heavy`` (a common element exists), the low end otherwise;
    * as an F_p estimator: after a probe of weight ``boost`` lands on the
      heavy coordinate, the low end; otherwise the high end.
    """

    MAGIC = b"NOIS"
    MODES = ("random", "adversarial")
    _HEAD = struct.Struct("<dBIdd")

    def __init__(
        self,
        dim: int,
        p: float,
        eps_hat: float,
        mode: str = "adversarial",
        heavy: int = 2,
        boost: float = math.inf,
        seed: int = 0,
        delta_hat: float = 0.0,
    ):
        if mode not in self.MODES:
            raise InvalidArgument(f"unknown noise mode {mode!r}")
        if not 0 <= eps_hat < 1:
            raise InvalidArgument("eps_hat must lie in [0, 1)")
        super().__init__(dim, p, eps_hat, delta_hat)
        self.mode = mode
        self.heavy = int(heavy)
        self.boost = float(boost)
        self._rng = np.random.Generator(np.random.PCG64(seed))
        self.noise = 0.0

    def insert_many(self, indices, weights=None):
        super().insert_many(indices, weights)
        if self.mode == "random":
            self.noise = float(self._rng.uniform(-1.0, 1.0))

    def _adversarial_sign(self) -> int:
        values = self.entries.values()
        if self.p == 0:
            return 1 if any(v >= self.heavy for v in values) else -1
        probed = [v for v in values if v >= self.boost]
        if probed and max(probed) >= self.boost + self.heavy - 0.5:
            return -1
        return 1

    def estimate(self) -> float:
        exact = self.exact()
        factor = self.noise if self.mode == "random" else self._adversarial_sign()
        return exact * (1.0 + factor * self.eps_hat)

    def fork(self) -> NoisyOracleEstimator:
        out = NoisyOracleEstimator.__new__(NoisyOracleEstimator)
        Sketch.__init__(out, self.dim, self.eps_hat, self.delta_hat)
        out.p, out.mode, out.heavy, out.boost = self.p, self.mode, self.heavy, self.boost
        out._rng = _clone_rng(self._rng)
        out.noise = self.noise
        self._copy_into(out)
        return out

    def _body(self) -> bytes:
        head = self._HEAD.pack(self.p, self.MODES.index(self.mode), self.heavy, self.boost, self.noise)
        return head + _pack_pcg(self._rng) + self._entries_bytes()

    @classmethod
    def _decode(cls, reader, dim, eps_hat, delta_hat):
        p, mode, heavy, boost, noise = reader.take(cls._HEAD)
        if mode >= len(cls.MODES):
            raise CorruptPayload("bad noise mode")
        out = cls(dim, p, eps_hat, cls.MODES[mode], heavy, boost, 0, delta_hat)
        out.noise = noise
        out._rng = _unpack_pcg(reader.raw(_PCG.size))
        out.entries = cls._read_entries(reader, dim)
        return out


# ---------------------------------------------------------------------------
# KMV distinct elements


class KmvF0Sketch(Sketch):
    """k-minimum-values distinct counter over SplitMix64 hashes.

    Holds the ``k`` smallest distinct 64-bit hashes.  With fewer than ``k``
    retained the count is exact; otherwise the estimate is ``(k - 1)/v_k``
    where ``v_k`` is the k-th smallest hash mapped into ``(0, 1]``.
    """

    MAGIC = b"KMV0"
    _HEAD = struct.Struct("<IQI")

    def __init__(self, dim: int, k: int, seed: int = 0, eps_hat: float = math.nan, delta_hat: float = math.nan):
        if k < 2:
            raise InvalidArgument(f"k must be >= 2, got {k}")
        super().__init__(dim, eps_hat, delta_hat)
        self.k = int(k)
        self.seed = int(seed) & MASK64
        self.hashes = np.empty(0, dtype=np.uint64)

    @classmethod
    def from_plan(cls, dim: int, eps_hat, delta_hat, seed: int = 0) -> KmvF0Sketch:
        _, _, k = amplification_plan(eps_hat, delta_hat)
        return cls(dim, k, seed, float(as_fraction(eps_hat)), float(as_fraction(delta_hat)))

    def insert_many(self, indices, weights=None):
        # weights are ignored: only presence matters
        idx = self._check_indices(indices)
        if not idx.size:
            return
        h = hash_indices(idx, self.seed)
        self.hashes = np.unique(np.concatenate([self.hashes, h]))[: self.k]

    def estimate(self) -> float:
        if self.hashes.size < self.k:
            return float(self.hashes.size)
        vk = (float(self.hashes[self.k - 1] >> np.uint64(11)) + 1.0) * 2.0**-53
        return (self.k - 1) / vk

    def fork(self) -> KmvF0Sketch:
        out = KmvF0Sketch(self.dim, self.k, self.seed, self.eps_hat, self.delta_hat)
        out.hashes = self.hashes.copy()
        return out

    def _body(self) -> bytes:
        return self._HEAD.pack(self.k, self.seed, self.hashes.size) + self.hashes.astype("<u8").tobytes()

    @classmethod
    def _decode(cls, reader, dim, eps_hat, delta_hat):
        k, seed, count = reader.take(cls._HEAD)
        if count > k or k < 2:
            raise CorruptPayload("KMV count exceeds k")
        out = cls(dim, k, seed, eps_hat, delta_hat)
        out.hashes = reader.array("<u8", count).astype(np.uint64)
        if count > 1 and not (out.hashes[1:] > out.hashes[:-1]).all():
            raise CorruptPayload("KMV hashes not strictly increasing")
        return out


# ---------------------------------------------------------------------------
# AMS frequency moments


def _increments(cnt: np.ndarray, p: float) -> np.ndarray:
    c = cnt.astype(np.float64)
    return c**p - (c - 1.0) ** p


def reservoir_update(
    item: np.ndarray,
    cnt: np.ndarray,
    length: int,
    run_idx: np.ndarray,
    run_w: np.ndarray,
    pos: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance every sampler over a batch of weighted runs.

    Run ``k`` stands for ``run_w[k]`` consecutive arrivals of ``run_idx[k]``.
    ``pos[s]`` is sampler ``s``'s uniform draw from ``[0, length + B)``; a
    draw past ``length`` moves the sample onto that arrival of the batch,
    otherwise the old sample keeps counting its item's new arrivals.
    """
    run_idx = np.asarray(run_idx, dtype=np.int64)
    run_w = np.asarray(run_w, dtype=np.int64)
    ends = np.cumsum(run_w)
    starts = ends - run_w

    # weight of the same index in strictly later runs
    order = np.lexsort((np.arange(run_idx.size), run_idx))
    sidx, sw = run_idx[order], run_w[order]
    csum = np.cumsum(sw)
    first = np.r_[True, sidx[1:] != sidx[:-1]]
    gid = np.cumsum(first) - 1
    gstart = np.nonzero(first)[0]
    before_group = csum[gstart] - sw[gstart]
    gtotal = np.add.reduceat(sw, gstart) if sw.size else sw
    later = np.empty_like(run_w)
    later[order] = gtotal[gid] - (csum - before_group[gid])

    new_item = item.copy()
    new_cnt = cnt.copy()
    moved = pos >= length
    off = pos[moved] - length
    k = np.searchsorted(ends, off, side="right")
    new_item[moved] = run_idx[k]
    new_cnt[moved] = run_w[k] - (off - starts[k]) + later[k]

    stay = ~moved
    if stay.any() and sidx.size:
        uniq = sidx[gstart]
        look = np.searchsorted(uniq, item[stay])
        look = np.clip(look, 0, uniq.size - 1)
        hit = uniq[look] == item[stay]
        new_cnt[stay] = cnt[stay] + np.where(hit, gtotal[look], 0)
    return new_item, new_cnt


class AmsFpSketch(Sketch):
    """Median over ``rows`` of the mean over ``cols`` basic AMS samplers.

    A sampler holds a uniformly chosen stream position's item and the number
    of arrivals of that item from the position onwards (``cnt``); its basic
    estimate is ``length * (cnt**p - (cnt - 1)**p)``.  Weighted arrivals are
    handled in closed form, so the probe weight costs one draw per sampler.
    """

    MAGIC = b"AMSF"
    _HEAD = struct.Struct("<dIIQ")
    RECORD_BYTES = 8

    def __init__(
        self,
        dim: int,
        p: float,
        rows: int,
        cols: int,
        seed: int = 0,
        eps_hat: float = math.nan,
        delta_hat: float = math.nan,
    ):
        if rows < 1 or cols < 1:
            raise InvalidArgument("rows and cols must be positive")
        if dim >= 2**32:
            raise InvalidArgument("AMS payload stores u32 indices")
        super().__init__(dim, eps_hat, delta_hat)
        self.p = float(p)
        self.rows, self.cols = int(rows), int(cols)
        self._rng = np.random.Generator(np.random.PCG64(seed))
        size = self.rows * self.cols
        self.item = np.zeros(size, dtype=np.int64)
        self.cnt = np.zeros(size, dtype=np.int64)
        self.length = 0

    @classmethod
    def from_plan(cls, dim: int, p: float, eps_hat, delta_hat, seed: int = 0, C: float = 16) -> AmsFpSketch:
        rows, cols, _ = amplification_plan(eps_hat, delta_hat, C=C)
        return cls(dim, p, rows, cols, seed, float(as_fraction(eps_hat)), float(as_fraction(delta_hat)))

    @staticmethod
    def _integral(weights: np.ndarray) -> np.ndarray:
        w = np.asarray(weights, dtype=np.float64)
        if w.size and (not np.all(w == np.round(w)) or not (w > 0).all()):
            raise NonIntegerWeight("AMS sketch accepts positive integer weights only")
        return w.astype(np.int64)

    def insert_many(self, indices, weights=None):
        idx = self._check_indices(indices)
        w = np.ones(idx.size, dtype=np.int64) if weights is None else self._integral(weights).reshape(-1)
        if w.size != idx.size:
            raise InvalidArgument("indices and weights differ in length")
        if not idx.size:
            return
        total = int(w.sum())
        pos = self._rng.integers(0, self.length + total, size=self.item.size)
        self.item, self.cnt = reservoir_update(self.item, self.cnt, self.length, idx, w, pos)
        self.length += total

    def basic_estimates(self) -> np.ndarray:
        if self.length == 0:
            return np.zeros(self.item.size)
        return self.length * _increments(self.cnt, self.p)

    def estimate(self) -> float:
        if self.length == 0:
            return 0.0
        sums = self.basic_estimates().reshape(self.rows, self.cols).sum(axis=1)
        return float(np.median(sums / self.cols))

    def fork(self) -> AmsFpSketch:
        out = AmsFpSketch.__new__(AmsFpSketch)
        Sketch.__init__(out, self.dim, self.eps_hat, self.delta_hat)
        out.p, out.rows, out.cols = self.p, self.rows, self.cols
        out._rng = _clone_rng(self._rng)
        out.item, out.cnt, out.length = self.item.copy(), self.cnt.copy(), self.length
        return out

    def _body(self) -> bytes:
        head = self._HEAD.pack(self.p, self.rows, self.cols, self.length) + _pack_pcg(self._rng)
        return head + self.item.astype("<u4").tobytes() + self.cnt.astype("<u4").tobytes()

    @classmethod
    def _decode(cls, reader, dim, eps_hat, delta_hat):
        p, rows, cols, length = reader.take(cls._HEAD)
        if rows < 1 or cols < 1:
            raise CorruptPayload("AMS shape must be positive")
        out = cls(dim, p, rows, cols, 0, eps_hat, delta_hat)
        out._rng = _unpack_pcg(reader.raw(_PCG.size))
        out.length = length
        out.item = reader.array("<u4", rows * cols).astype(np.int64)
        out.cnt = reader.array("<u4", rows * cols).astype(np.int64)
        if length and (out.item.min() < 1 or out.item.max() > dim or out.cnt.min() < 1):
            raise CorruptPayload("AMS sampler state out of range")
        return out

    def _exact_batch_ok(self, weight: int) -> bool:
        if self.p != int(self.p):
            return False
        top = float(self.cnt.max(initial=0) + weight)
        bound = (self.length + weight) * top**self.p * self.cols
        return bound < 2.0**53

    def probe(self, weight) -> Probe:
        """All ``dim`` probe estimates from one pass over the samplers.

        Matches ``fork(); insert(i, weight); estimate()`` bit for bit: every
        fork draws the same positions, and with integral ``p`` all partial
        sums are integers below 2**53, so summation order is irrelevant.
        """
        w = int(self._integral(np.array([weight]))[0])
        if not self._exact_batch_ok(w):
            return super().probe(w)
        m2 = self.length + w
        pos = _clone_rng(self._rng).integers(0, m2, size=self.item.size)
        moved = pos >= self.length
        base_cnt = np.where(moved, w - (pos - self.length), self.cnt)
        base_rows = (m2 * _increments(base_cnt, self.p)).reshape(self.rows, self.cols).sum(axis=1)

        keep = ~moved
        rows_of = np.arange(self.item.size) // self.cols
        delta = m2 * (_increments(self.cnt[keep] + w, self.p) - _increments(self.cnt[keep], self.p))
        flat = (self.item[keep] - 1) * self.rows + rows_of[keep]
        extra = np.bincount(flat, weights=delta, minlength=self.dim * self.rows)
        sums = base_rows[None, :] + extra.reshape(self.dim, self.rows)
        vals = np.median(sums / self.cols, axis=1)
        return Probe(self.dim, np.arange(1, self.dim + 1), vals)
