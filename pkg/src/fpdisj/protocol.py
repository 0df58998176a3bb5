"""One-way relay of an (F_0, F_p) sketch pair and the disjointness decision.

Party 1 inserts its share into fresh sketches and sends both payloads on;
every later party deserializes, inserts its own share and forwards.  The
last party probes every index with weight ``n**(1/p)`` and reports the
first index whose F_p estimate clears ``F0_hat + threshold``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable

import numpy as np

from .core import (
    CorruptPayload,
    FrequencyVector,
    InvalidArgument,
    Parameters,
    PromiseInstance,
    Truth,
)
from .oracle import threshold_offset
from .sketches import (
    AmsFpSketch,
    ExactEstimator,
    KmvF0Sketch,
    NoisyOracleEstimator,
    Sketch,
    derive_seed,
    deserialize,
)

SketchPair = tuple[Sketch, Sketch]
SketchFactory = Callable[[], SketchPair]

_FRAME = struct.Struct("<III")
FRAME_BYTES = _FRAME.size
FRAMING_ALLOWANCE = 16


@dataclass(frozen=True)
class Decision:
    index: int | None = None

    @property
    def disjoint(self) -> bool:
        return self.index is None

    def matches(self, truth: Truth) -> bool:
        return self.index == truth.index

    def __str__(self) -> str:
        return "disjoint" if self.index is None else f"common:{self.index}"


@dataclass(frozen=True)
class SketchMessage:
    payload_f0: bytes
    payload_fp: bytes
    hop: int

    @property
    def payload_bits(self) -> int:
        return 8 * (len(self.payload_f0) + len(self.payload_fp))

    @property
    def total_bits(self) -> int:
        return self.payload_bits

    @property
    def frame_bits(self) -> int:
        return 8 * FRAME_BYTES

    def to_bytes(self) -> bytes:
        head = _FRAME.pack(self.hop, len(self.payload_f0), len(self.payload_fp))
        return head + self.payload_f0 + self.payload_fp

    @classmethod
    def from_bytes(cls, raw: bytes) -> SketchMessage:
        if len(raw) < FRAME_BYTES:
            raise CorruptPayload("message shorter than frame header")
        hop, a, b = _FRAME.unpack_from(raw, 0)
        if FRAME_BYTES + a + b != len(raw):
            raise CorruptPayload("message length does not match frame header")
        return cls(raw[FRAME_BYTES:FRAME_BYTES + a], raw[FRAME_BYTES + a:], hop)


@dataclass
class PartyState:
    index: int
    share: FrequencyVector
    factory: SketchFactory | None = None

    def sketches(self, incoming: SketchMessage | None) -> SketchPair:
        if (incoming is None) != (self.index == 1):
            raise InvalidArgument("only party 1 starts without an incoming message")
        if incoming is None:
            if self.factory is None:
                raise InvalidArgument("party 1 needs a sketch factory")
            f0, fpk = self.factory()
        else:
            if incoming.hop != self.index - 1:
                raise CorruptPayload(f"party {self.index} received hop {incoming.hop}")
            f0, fpk = deserialize(incoming.payload_f0), deserialize(incoming.payload_fp)
        items = self.share.support()
        f0.insert_many(items)
        fpk.insert_many(items)
        return f0, fpk


def party_step(state: PartyState, incoming: SketchMessage | None) -> SketchMessage:
    f0, fpk = state.sketches(incoming)
    return SketchMessage(f0.serialize(), fpk.serialize(), state.index)


@dataclass(frozen=True)
class Inference:
    decision: Decision
    probe_count: int
    threshold: float
    f0_estimate: float


def infer(f0_sketch: Sketch, fp_sketch: Sketch, params: Parameters, threshold_mode: str = "paper") -> Inference:
    """Decision plus the bookkeeping recorded in a transcript."""
    f0_hat = f0_sketch.estimate()
    offset = threshold_offset(params, threshold_mode)
    probe = fp_sketch.probe(params.probe_weight)
    hit = probe.first_at_least(f0_hat + offset)
    count = params.n if hit is None else hit
    return Inference(Decision(hit), count, offset, f0_hat)


def infer_disj(f0_sketch: Sketch, fp_sketch: Sketch, params: Parameters, threshold_mode: str = "paper") -> Decision:
    """First index ``i`` with ``F_p-hat(x + boost e_i) >= F0_hat + threshold``, else disjoint.

    ``threshold_mode="paper"`` uses ``n(1 + 2 eps/5)``; ``"relaxed"`` uses
    the midpoint of the exact excess gap from the oracle.
    """
    return infer(f0_sketch, fp_sketch, params, threshold_mode).decision


def infer_disj_sequential(
    f0_sketch: Sketch, fp_sketch: Sketch, params: Parameters, threshold_mode: str = "paper"
) -> Decision:
    """Reference loop: fork, insert, estimate, one index at a time."""
    target = f0_sketch.estimate() + threshold_offset(params, threshold_mode)
    for i in range(1, params.n + 1):
        f = fp_sketch.fork()
        f.insert(i, params.probe_weight)
        if f.estimate() >= target:
            return Decision(i)
    return Decision(None)


@dataclass
class ProtocolTranscript:
    decision: Decision
    truth: Truth
    per_hop_bits: list[int]
    probe_count: int
    threshold_used: float
    f0_bits: list[int] = field(default_factory=list)
    fp_bits: list[int] = field(default_factory=list)
    frames: list[bytes] = field(default_factory=list, repr=False)

    @property
    def total_bits(self) -> int:
        return sum(self.per_hop_bits)

    @property
    def gross_bits(self) -> int:
        return self.total_bits + 8 * FRAME_BYTES * len(self.per_hop_bits)

    @property
    def correct(self) -> bool:
        return self.decision.matches(self.truth)

    def to_dict(self) -> dict:
        return {
            "decision": str(self.decision),
            "truth": str(self.truth),
            "correct": self.correct,
            "per_hop_bits": self.per_hop_bits,
            "f0_bits": self.f0_bits,
            "fp_bits": self.fp_bits,
            "total_bits": self.total_bits,
            "gross_bits": self.gross_bits,
            "probe_count": self.probe_count,
            "threshold_used": self.threshold_used,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def write_trace(self, path) -> None:
        """Binary trace: the framed messages of every hop, back to back."""
        with open(path, "wb") as fh:
            for frame in self.frames:
                fh.write(frame)


def read_trace(path) -> list[SketchMessage]:
    raw = open(path, "rb").read()
    out, pos = [], 0
    while pos < len(raw):
        if pos + FRAME_BYTES > len(raw):
            raise CorruptPayload("truncated trace")
        _, a, b = _FRAME.unpack_from(raw, pos)
        end = pos + FRAME_BYTES + a + b
        out.append(SketchMessage.from_bytes(raw[pos:end]))
        pos = end
    return out


def run_protocol(
    inst: PromiseInstance,
    factory: SketchFactory,
    threshold_mode: str = "paper",
    *,
    keep_frames: bool = False,
) -> ProtocolTranscript:
    params = inst.params
    msg = None
    per_hop, f0_bits, fp_bits, frames = [], [], [], []
    for r in range(1, params.t):
        msg = party_step(PartyState(r, inst.shares[r - 1], factory if r == 1 else None), msg)
        # messages cross the wire as framed bytes
        raw = msg.to_bytes()
        msg = SketchMessage.from_bytes(raw)
        per_hop.append(msg.payload_bits)
        f0_bits.append(8 * len(msg.payload_f0))
        fp_bits.append(8 * len(msg.payload_fp))
        if keep_frames:
            frames.append(raw)
    last = PartyState(params.t, inst.shares[-1], factory if params.t == 1 else None)
    f0, fpk = last.sketches(msg)
    res = infer(f0, fpk, params, threshold_mode)
    return ProtocolTranscript(
        decision=res.decision,
        truth=inst.truth,
        per_hop_bits=per_hop,
        probe_count=res.probe_count,
        threshold_used=res.threshold,
        f0_bits=f0_bits,
        fp_bits=fp_bits,
        frames=frames,
    )


# ---------------------------------------------------------------------------
# sketch factories


ESTIMATORS = ("exact", "noisy-adversarial", "noisy-random", "ams-kmv")


def sketch_targets(params: Parameters) -> dict:
    """Accuracy and failure targets: eps/10 for both, 1/(20n) for F_p, 1/20 for F_0."""
    eps_hat = params.eps / 10
    return {
        "eps_hat": eps_hat,
        "delta_fp": Fraction(1, 20 * params.n),
        "delta_f0": Fraction(1, 20),
    }


def confidence_accounting(n: int) -> dict:
    """Union-bound bookkeeping for ``n`` probes plus one F_0 estimate."""
    per_probe = Fraction(1, 20 * n)
    fp_fail = n * per_probe
    f0_fail = Fraction(1, 20)
    return {
        "per_probe_failure": per_probe,
        "fp_failure": fp_fail,
        "f0_failure": f0_fail,
        "union_failure": fp_fail + f0_fail,
        "independent_success": (1 - fp_fail) * (1 - f0_fail),
    }


def make_factory(kind: str, params: Parameters, seed: int = 0, *, C: float = 16) -> SketchFactory:
    """Fresh sketch pairs of the named kind, seeded from ``seed``."""
    if kind not in ESTIMATORS:
        raise InvalidArgument(f"unknown estimator {kind!r}; choose from {ESTIMATORS}")
    tg = sketch_targets(params)
    eps_hat = float(tg["eps_hat"])
    n, p = params.n, params.p

    def build() -> SketchPair:
        if kind == "exact":
            return ExactEstimator(n, 0.0), ExactEstimator(n, p)
        if kind.startswith("noisy"):
            mode = kind.split("-", 1)[1]
            f0 = NoisyOracleEstimator(
                n, 0.0, eps_hat, mode, params.t, params.boost, derive_seed(seed, 0), float(tg["delta_f0"])
            )
            fpk = NoisyOracleEstimator(
                n, p, eps_hat, mode, params.t, params.boost, derive_seed(seed, 1), float(tg["delta_fp"])
            )
            return f0, fpk
        if params.root is None:
            raise InvalidArgument("AMS sketch needs n = m**p so the probe weight is integral")
        f0 = KmvF0Sketch.from_plan(n, tg["eps_hat"], tg["delta_f0"], derive_seed(seed, 0))
        fpk = AmsFpSketch.from_plan(n, p, tg["eps_hat"], tg["delta_fp"], derive_seed(seed, 1), C=C)
        return f0, fpk

    return build


def binomial_interval(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    """Clopper-Pearson interval for a success fraction."""
    from scipy.stats import binomtest

    ci = binomtest(successes, trials).proportion_ci(confidence_level=level, method="exact")
    return float(ci.low), float(ci.high)


def summarize(rows: Iterable[dict], params: Parameters) -> dict:
    """Aggregate transcript records (``ProtocolTranscript.to_dict()`` output)."""
    rows = list(rows)
    if not rows:
        return {"trials": 0, "n_over_t": params.n / params.t, "hops": params.t - 1}
    wins = sum(bool(r["correct"]) for r in rows)
    lo, hi = binomial_interval(wins, len(rows))
    bits = np.array([r["total_bits"] for r in rows], dtype=float)
    return {
        "trials": len(rows),
        "successes": wins,
        "success_rate": wins / len(rows),
        "ci95_low": lo,
        "ci95_high": hi,
        "mean_total_bits": float(bits.mean()),
        "mean_gross_bits": float(np.mean([r["gross_bits"] for r in rows])),
        "mean_hop_bits": float(bits.mean() / max(params.t - 1, 1)),
        "S0_bits": float(np.mean([r["f0_bits"][-1] for r in rows])),
        "Sp_bits": float(np.mean([r["fp_bits"][-1] for r in rows])),
        "n_over_t": params.n / params.t,
        "hops": params.t - 1,
    }
