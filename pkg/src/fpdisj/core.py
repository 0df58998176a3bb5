"""Domain types, parameter regimes and promise instances for t-party disjointness.

A t-DISJ instance hands party ``r`` the characteristic vector of a set
``S_r`` over ``[n]``.  The promise is that the sets are pairwise disjoint,
or that they share exactly one common index.  Summing the shares gives a
frequency vector that is binary in the first case and has a single
coordinate equal to ``t`` in the second.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np


class InvalidArgument(ValueError):
    """An argument is outside its basic admissible range."""


class RegimeViolation(InvalidArgument):
    """Strict-mode parameters fall outside the theorem's regime."""

    def __init__(self, failed: Sequence[str]):
        self.failed = tuple(failed)
        super().__init__("parameter regime violated: " + "; ".join(self.failed))


class PromiseViolation(ValueError):
    """A frequency vector fits neither promise shape."""


class NonIntegerWeight(ValueError):
    """A sketch that supports only integral weights was given a fractional one."""


class CorruptPayload(ValueError):
    """A serialized sketch or message could not be decoded."""


class Mode(enum.Enum):
    STRICT = "strict"
    RELAXED = "relaxed"


def as_fraction(value) -> Fraction:
    """Read ``value`` as an exact rational.

    Accepts ``Fraction``, ``int``, strings such as ``"1/4"`` or ``"0.25"``,
    and floats.  Floats are read through their shortest decimal repr, so
    ``0.1`` becomes ``1/10`` rather than its binary neighbour.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise InvalidArgument(f"not a number: {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise InvalidArgument(f"not a finite number: {value!r}")
        return Fraction(repr(value))
    if isinstance(value, (tuple, list)) and len(value) == 2:
        num, den = value
        if den == 0:
            raise InvalidArgument("zero denominator")
        return Fraction(int(num), int(den))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise InvalidArgument(f"cannot parse rational {value!r}") from exc
    raise InvalidArgument(f"cannot interpret {value!r} as a rational")


def integer_root(n: int, p) -> int | None:
    """Return ``m`` with ``m**p == n`` when ``p`` is integral and such ``m`` exists."""
    pf = as_fraction(p)
    if pf.denominator != 1 or pf <= 0:
        return None
    k = int(pf)
    guess = round(math.exp(math.log(n) / k))
    for m in (guess - 1, guess, guess + 1):
        if m >= 1 and m**k == n:
            return m
    return None


def _ceil_fraction(x: Fraction) -> int:
    return -((-x.numerator) // x.denominator)


@dataclass(frozen=True)
class Parameters:
    """The tuple ``(n, p, eps)`` with the derived party count and boost.

    ``boost`` is ``n**(1/p)``; ``root`` holds it as an exact integer when
    ``n`` is a perfect ``p``-th power, which is what the AMS sketch needs
    for an integral probe weight.  In relaxed mode ``violations`` lists
    every regime inequality that fails.
    """

    n: int
    p: float
    eps: Fraction
    t: int
    boost: float
    mode: Mode
    root: int | None = None
    violations: tuple[str, ...] = ()
    t_overridden: bool = False

    @property
    def eps_float(self) -> float:
        return float(self.eps)

    @property
    def in_regime(self) -> bool:
        return not self.violations

    @property
    def probe_weight(self) -> int | float:
        """Weight inserted at each probe: the exact root when available."""
        return self.root if self.root is not None else self.boost

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "p": self.p,
            "eps": [self.eps.numerator, self.eps.denominator],
            "t": self.t,
            "boost": self.boost,
            "root": self.root,
            "mode": self.mode.value,
            "violations": list(self.violations),
            "t_overridden": self.t_overridden,
        }


def regime_violations(n: int, p, eps, boost: Fraction) -> list[str]:
    """List the failed inequalities of the strict regime (empty when inside).

    Uses ``p < boost/3`` (the form the case analysis relies on) in place of
    the looser ``p < boost/2``.
    """
    pf, ef = as_fraction(p), as_fraction(eps)
    failed = []
    if not pf > 2:
        failed.append(f"p > 2 fails (p = {float(pf)})")
    if not 3 * pf < boost:
        failed.append(f"p < n^(1/p)/3 fails ({float(pf)} >= {float(boost) / 3:.6g})")
    lo = 80 * pf / boost
    if not lo <= ef:
        failed.append(f"80p/n^(1/p) <= eps fails ({float(lo):.6g} > {float(ef):.6g})")
    if not 9 <= ef * ef * n:
        failed.append(f"3/sqrt(n) <= eps fails ({3 / math.sqrt(n):.6g} > {float(ef):.6g})")
    if not ef <= Fraction(1, 4):
        failed.append(f"eps <= 1/4 fails (eps = {float(ef):.6g})")
    return failed


def make_parameters(
    n: int,
    p,
    eps,
    mode: Mode | str = Mode.STRICT,
    *,
    t: int | None = None,
) -> Parameters:
    """Build validated parameters; ``t`` may be overridden in relaxed mode only.

    >>> make_parameters(960**3, 3, "1/4").t
    40
    """
    mode = Mode(mode)
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
        raise InvalidArgument(f"n must be an integer, got {n!r}")
    n = int(n)
    if n < 4:
        raise InvalidArgument(f"n must be >= 4, got {n}")
    pf = as_fraction(p)
    if pf <= 2:
        raise InvalidArgument(f"p must be > 2, got {float(pf)}")
    ef = as_fraction(eps)
    if not 0 < ef < 1:
        raise InvalidArgument(f"eps must lie in (0, 1), got {float(ef)}")

    root = integer_root(n, pf)
    if root is not None:
        boost_exact = Fraction(root)
        boost = float(root)
    else:
        boost = math.exp(math.log(n) / float(pf))
        boost_exact = Fraction(boost)
    p_out = int(pf) if pf.denominator == 1 else float(pf)

    derived_t = _ceil_fraction(ef * boost_exact / (2 * pf))
    failed = regime_violations(n, pf, ef, boost_exact)

    if mode is Mode.STRICT:
        if t is not None and t != derived_t:
            raise InvalidArgument("t cannot be overridden in strict mode")
        if failed:
            raise RegimeViolation(failed)
    final_t = derived_t if t is None else int(t)
    if final_t < 2:
        raise InvalidArgument(f"party count t = {final_t} < 2")
    return Parameters(
        n=n,
        p=p_out,
        eps=ef,
        t=final_t,
        boost=boost,
        mode=mode,
        root=root,
        violations=tuple(failed),
        t_overridden=t is not None and t != derived_t,
    )


def parameters_from_root(m: int, p: int, eps, mode: Mode | str = Mode.STRICT, *, t=None) -> Parameters:
    """Perfect-power construction: ``n = m**p`` so the boost is exactly ``m``."""
    if m < 2 or int(p) != p:
        raise InvalidArgument("perfect-power mode needs integer m >= 2 and integer p")
    return make_parameters(int(m) ** int(p), int(p), eps, mode, t=t)


class FrequencyVector:
    """Sparse nonnegative-integer vector over ``[1, dim]``.

    Zero coordinates are never stored.  Instances are immutable; arithmetic
    returns new vectors.
    """

    __slots__ = ("_dim", "_entries")

    def __init__(self, dim: int, entries: Mapping[int, int] | None = None):
        if dim < 1:
            raise InvalidArgument(f"dim must be positive, got {dim}")
        clean: dict[int, int] = {}
        for idx, cnt in (entries or {}).items():
            idx, cnt = int(idx), int(cnt)
            if not 1 <= idx <= dim:
                raise InvalidArgument(f"index {idx} outside [1, {dim}]")
            if cnt < 0:
                raise InvalidArgument(f"negative count {cnt} at index {idx}")
            if cnt:
                clean[idx] = cnt
        self._dim = int(dim)
        self._entries = MappingProxyType(dict(sorted(clean.items())))

    @classmethod
    def from_indices(cls, dim: int, indices: Iterable[int]) -> FrequencyVector:
        counts: dict[int, int] = {}
        for i in indices:
            counts[int(i)] = counts.get(int(i), 0) + 1
        return cls(dim, counts)

    @classmethod
    def unit(cls, dim: int, i: int, scale: int = 1) -> FrequencyVector:
        return cls(dim, {i: scale})

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def entries(self) -> Mapping[int, int]:
        return self._entries

    def __getitem__(self, i: int) -> int:
        return self._entries.get(i, 0)

    def __len__(self) -> int:
        return len(self._entries)

    def support(self) -> list[int]:
        return list(self._entries)

    def is_binary(self) -> bool:
        return all(c == 1 for c in self._entries.values())

    def __add__(self, other: FrequencyVector) -> FrequencyVector:
        if not isinstance(other, FrequencyVector):
            return NotImplemented
        if other.dim != self.dim:
            raise InvalidArgument("dimension mismatch")
        out = dict(self._entries)
        for i, c in other.entries.items():
            out[i] = out.get(i, 0) + c
        return FrequencyVector(self.dim, out)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, FrequencyVector)
            and self.dim == other.dim
            and dict(self._entries) == dict(other.entries)
        )

    def __hash__(self) -> int:
        return hash((self._dim, tuple(self._entries.items())))

    def __repr__(self) -> str:
        return f"FrequencyVector(dim={self._dim}, entries={dict(self._entries)})"


@dataclass(frozen=True)
class StreamUpdate:
    index: int
    weight: float = 1

    def __post_init__(self):
        if self.index < 1:
            raise InvalidArgument(f"index must be >= 1, got {self.index}")
        if not self.weight > 0:
            raise InvalidArgument(f"weight must be positive, got {self.weight}")


@dataclass(frozen=True)
class Truth:
    """Ground-truth label: disjoint (``index is None``) or common element ``index``."""

    index: int | None = None

    @property
    def disjoint(self) -> bool:
        return self.index is None

    @classmethod
    def parse(cls, label) -> Truth:
        if isinstance(label, Truth):
            return label
        if label in (None, "disjoint"):
            return cls(None)
        if isinstance(label, str) and label.startswith("common"):
            _, _, rest = label.partition(":")
            if not rest:
                raise InvalidArgument("common-element truth needs an index, e.g. 'common:7'")
            return cls(int(rest))
        if isinstance(label, (int, np.integer)):
            return cls(int(label))
        raise InvalidArgument(f"unknown truth label {label!r}")

    def to_dict(self) -> dict:
        if self.disjoint:
            return {"kind": "disjoint"}
        return {"kind": "common_element", "index": self.index}

    def __str__(self) -> str:
        return "disjoint" if self.disjoint else f"common:{self.index}"


DISJOINT = Truth(None)


@dataclass(frozen=True)
class PromiseInstance:
    params: Parameters
    shares: tuple[FrequencyVector, ...]
    truth: Truth
    density: float | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.shares) != self.params.t:
            raise PromiseViolation(f"expected {self.params.t} shares, got {len(self.shares)}")
        for r, share in enumerate(self.shares, 1):
            if share.dim != self.params.n or not share.is_binary():
                raise PromiseViolation(f"share {r} is not a binary vector over [n]")
        x = sum_shares(self)
        heavy = [i for i, c in x.entries.items() if c > 1]
        if self.truth.disjoint:
            if heavy:
                raise PromiseViolation("disjoint instance has overlapping shares")
        else:
            i = self.truth.index
            if heavy != [i] or x[i] != self.params.t:
                raise PromiseViolation(f"common index {i} does not have count t={self.params.t}")

    def to_json(self) -> str:
        doc = {
            "n": self.params.n,
            "p": self.params.p,
            "eps": [self.params.eps.numerator, self.params.eps.denominator],
            "t": self.params.t,
            "mode": self.params.mode.value,
            "truth": self.truth.to_dict(),
            "shares": [share.support() for share in self.shares],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> PromiseInstance:
        doc = json.loads(text)
        params = make_parameters(
            doc["n"], doc["p"], Fraction(*doc["eps"]), doc.get("mode", "relaxed"), t=doc["t"]
        )
        truth = doc["truth"]
        label = Truth(None) if truth["kind"] == "disjoint" else Truth(int(truth["index"]))
        shares = tuple(FrequencyVector.from_indices(params.n, s) for s in doc["shares"])
        return cls(params, shares, label)


def sum_shares(inst: PromiseInstance) -> FrequencyVector:
    total: dict[int, int] = {}
    for share in inst.shares:
        for i, c in share.entries.items():
            total[i] = total.get(i, 0) + c
    return FrequencyVector(inst.params.n, total)


def gen_instance(
    params: Parameters,
    truth: Truth | str = "disjoint",
    density: float = 0.25,
    rng: np.random.Generator | int | None = None,
) -> PromiseInstance:
    """Random promise instance with ``floor(density*n/t)`` private items per party.

    ``truth="common"`` draws the common index uniformly; ``Truth(i)`` pins it.
    The private sets are then drawn from the remaining ``n - 1`` indices.
    """
    if not 0 < density <= 1:
        raise InvalidArgument(f"density must lie in (0, 1], got {density}")
    rng = np.random.default_rng(rng)
    n, t = params.n, params.t
    if truth == "common":
        truth = Truth(int(rng.integers(1, n + 1)))
    truth = Truth.parse(truth)
    size = int(density * n) // t

    if truth.disjoint:
        if t * size > n:
            raise InvalidArgument("density too large for disjoint placement")
        pool = rng.choice(n, size=t * size, replace=False) + 1
        common = None
    else:
        common = truth.index
        if not 1 <= common <= n:
            raise InvalidArgument(f"common index {common} outside [1, {n}]")
        if t * size > n - 1:
            raise InvalidArgument("density too large to leave room for the common index")
        pool = rng.choice(n - 1, size=t * size, replace=False) + 1
        pool = np.where(pool >= common, pool + 1, pool)

    shares = []
    for r in range(t):
        items = pool[r * size:(r + 1) * size].tolist()
        if common is not None:
            items.append(common)
        shares.append(FrequencyVector.from_indices(n, items))
    return PromiseInstance(params, tuple(shares), Truth(common), density)


def power_sum(values: Iterable[float], p: float) -> float:
    """``sum(v**p)`` accumulated from the largest term down (``p == 0`` counts nonzeros)."""
    if p == 0:
        return float(sum(1 for v in values if v != 0))
    terms = sorted((abs(float(v)) ** p for v in values if v != 0), reverse=True)
    total = 0.0
    for term in terms:
        total += term
    return total
