"""Genus-0 descendent invariants by exact reduction with a memo cache.

A correlator key is a canonically sorted multiset of insertions tau_m(O_alpha)
plus a Novikov degree vector.  The master evaluator reduces every key to base
data in a fixed order:

  1. canonicalize, 2. dimension filter, 3. degree zero -> closed form,
  4. fewer than 3 insertions -> divisor lift, 5. any positive level -> TRR
  on the first maximal-level insertion, 6. all-primary -> backend (identity
  insertions kill the key at nonzero degree, divisor insertions strip off,
  the rest is a base value or a table lookup).

Each step strictly decreases (total level, insertion deficit below 3, degree)
lexicographically, so the recursion terminates; canonical keys make the memo
cache order-independent.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, NamedTuple

from .errors import CacheMismatch, NotApplicable, TargetUnsupported, ValidationError
from .rationals import format_rational, parse_rational
from .series import Monomial, TruncatedSeries, TruncationPolicy, VarId
from .target import TargetSpace

_ZERO = Fraction(0)
_ONE = Fraction(1)

Insertions = tuple[VarId, ...]
Degree = tuple[int, ...]


class CorrelatorKey(NamedTuple):
    insertions: Insertions
    degree: Degree


def make_key(insertions: Iterable[tuple[int, int]], degree: Iterable[int]) -> CorrelatorKey:
    """Canonical key: insertions sorted by (level, class index)."""
    ins = tuple(sorted(VarId(m, a) for m, a in insertions))
    return CorrelatorKey(ins, tuple(degree))


def dimension_admissible(ts: TargetSpace, key: CorrelatorKey) -> bool:
    """Selection rule: sum of (m_i + q_i) must hit the virtual dimension."""
    ins, deg = key
    lhs = sum(m + ts.q[a - 1] for m, a in ins)
    rhs = ts.complex_dim - 3 + len(ins) + sum(d * c for d, c in zip(deg, ts.c1_deg))
    return lhs == rhs


@dataclass(frozen=True)
class PrimaryBackend:
    """Supplier of all-primary base invariants the reduction bottoms out on."""

    kind: str  # Point | ProjLine | ProjPlane | Table
    table: dict[CorrelatorKey, Fraction] | None = None

    def __post_init__(self):
        if self.kind not in ("Point", "ProjLine", "ProjPlane", "Table"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "Table":
            for key in self.table or {}:
                if any(m != 0 for m, _ in key.insertions):
                    raise ValidationError("table backend key not primary")


def default_backend(ts: TargetSpace) -> PrimaryBackend:
    kinds = {"point": "Point", "P1": "ProjLine", "P2": "ProjPlane"}
    if ts.name in kinds:
        return PrimaryBackend(kinds[ts.name])
    return PrimaryBackend("Table", {})


class InvariantCache:
    """Memoized invariant values, bound to one target fingerprint."""

    def __init__(self, fingerprint: str, entries: dict[CorrelatorKey, Fraction] | None = None):
        self.fingerprint = fingerprint
        self.entries: dict[CorrelatorKey, Fraction] = dict(entries or {})
        self.lock = threading.Lock()

    @classmethod
    def for_target(cls, ts: TargetSpace) -> "InvariantCache":
        return cls(ts.fingerprint)

    def publish(self, key: CorrelatorKey, value: Fraction) -> Fraction:
        # Publish-once: concurrent duplicate computations must agree.
        with self.lock:
            existing = self.entries.get(key)
            if existing is None:
                self.entries[key] = value
                return value
            if existing != value:
                raise CacheMismatch(f"conflicting values for {key}")
            return existing

    def save(self, path: str) -> None:
        lines = [json.dumps({"fingerprint": self.fingerprint}, sort_keys=True)]
        for key in sorted(self.entries):
            rec = {
                "ins": [[m, a] for m, a in key.insertions],
                "deg": list(key.degree),
                "val": format_rational(self.entries[key]),
            }
            lines.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str, expected_fingerprint: str) -> "InvariantCache":
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            fingerprint = header.get("fingerprint")
            if fingerprint != expected_fingerprint:
                raise CacheMismatch(
                    f"cache fingerprint {fingerprint!r} does not match target {expected_fingerprint!r}"
                )
            entries: dict[CorrelatorKey, Fraction] = {}
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                key = make_key([(m, a) for m, a in rec["ins"]], rec["deg"])
                entries[key] = parse_rational(rec["val"])
        return cls(fingerprint, entries)


def load_table_backend(path: str) -> PrimaryBackend:
    """Read primary invariants in the cache record format (no header required)."""
    table: dict[CorrelatorKey, Fraction] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "fingerprint" in rec:
                continue
            key = make_key([(m, a) for m, a in rec["ins"]], rec["deg"])
            table[key] = parse_rational(rec["val"])
    return PrimaryBackend("Table", table)


# ---------------------------------------------------------------------------
# Reduction rules (exposed individually; the master evaluator wires them up).
# ---------------------------------------------------------------------------

def degree_zero_value(ts: TargetSpace, key: CorrelatorKey) -> Fraction:
    """Constant-map invariant: psi-class multinomial times a classical integral."""
    ins, deg = key
    if any(deg):
        raise NotApplicable("degree_zero_value needs degree 0")
    k = len(ins)
    if k < 3:
        return _ZERO
    total_level = sum(m for m, _ in ins)
    if total_level != k - 3:
        return _ZERO
    coeff = Fraction(math.factorial(k - 3))
    for m, _ in ins:
        coeff /= math.factorial(m)
    return coeff * ts.classical_integral(tuple(a for _, a in ins))


def string_reduce(ts: TargetSpace, key: CorrelatorKey
                  ) -> tuple[list[tuple[CorrelatorKey, Fraction]], Fraction]:
    """String equation: drop one tau_0(O_1), lower each remaining level once.

    Returns (weighted keys, scalar); the scalar carries the eta constant of
    the residual 3-point degree-0 case.
    """
    ins, deg = key
    unit = VarId(0, 1)
    if unit not in ins:
        raise NotApplicable("no tau_0(O_1) insertion")
    if len(ins) < 3 and not any(deg):
        raise NotApplicable("string equation needs k >= 3 or nonzero degree")
    rest = list(ins)
    rest.remove(unit)
    terms: list[tuple[CorrelatorKey, Fraction]] = []
    for i, (m, a) in enumerate(rest):
        if m >= 1:
            lowered = rest[:i] + [VarId(m - 1, a)] + rest[i + 1:]
            terms.append((CorrelatorKey(tuple(sorted(lowered)), deg), _ONE))
    scalar = _ZERO
    if len(rest) == 2 and not any(deg):
        (m, a), (n, b) = rest
        if m == 0 and n == 0:
            scalar = ts.eta[a - 1][b - 1]
    return terms, scalar


def dilaton_reduce(ts: TargetSpace, key: CorrelatorKey) -> tuple[CorrelatorKey, Fraction]:
    """Dilaton equation: drop one tau_1(O_1), scale by (#remaining - 2)."""
    ins, deg = key
    dil = VarId(1, 1)
    if dil not in ins:
        raise NotApplicable("no tau_1(O_1) insertion")
    if len(ins) < 4 and not any(deg):
        raise NotApplicable("dilaton equation needs k >= 4 or nonzero degree")
    rest = list(ins)
    rest.remove(dil)
    return CorrelatorKey(tuple(rest), deg), Fraction(len(rest) - 2)


def _pairing(ts: TargetSpace, cls: int, deg: Degree) -> Fraction:
    vec = ts.divisor_pairing(cls)
    if vec is None:
        raise NotApplicable(f"class {cls} is not a listed divisor")
    return Fraction(sum(p * d for p, d in zip(vec, deg)))


def divisor_reduce(ts: TargetSpace, key: CorrelatorKey, divisor_cls: int
                   ) -> list[tuple[CorrelatorKey, Fraction]]:
    """Divisor equation for a level-0 divisor insertion at nonzero degree."""
    ins, deg = key
    div = VarId(0, divisor_cls)
    if div not in ins:
        raise NotApplicable("divisor insertion not present at level 0")
    if not any(deg):
        raise NotApplicable("forward divisor equation used only at nonzero degree")
    pairing = _pairing(ts, divisor_cls, deg)
    rest = list(ins)
    rest.remove(div)
    terms = [(CorrelatorKey(tuple(rest), deg), pairing)]
    for i, (m, a) in enumerate(rest):
        if m >= 1:
            for g in range(1, ts.classes + 1):
                kappa = ts.cup_entry(divisor_cls, a, g)
                if kappa:
                    lowered = rest[:i] + [VarId(m - 1, g)] + rest[i + 1:]
                    terms.append((CorrelatorKey(tuple(sorted(lowered)), deg), kappa))
    return terms


def divisor_lift(ts: TargetSpace, key: CorrelatorKey
                 ) -> tuple[CorrelatorKey, list[tuple[CorrelatorKey, Fraction]], Fraction]:
    """Inverse divisor equation for k < 3 keys at nonzero degree.

    Returns (lifted key, lowering terms, pairing):
    <key> = (<lifted> - sum of lowering terms) / pairing.
    """
    ins, deg = key
    if len(ins) >= 3:
        raise NotApplicable("divisor lift applies only to k < 3")
    if ts.novikov_rank == 0 or not ts.divisors:
        raise TargetUnsupported("target has no divisor data to lift with")
    if not any(deg):
        raise NotApplicable("divisor lift needs nonzero degree")
    for cls, vec in ts.divisors:
        pairing = Fraction(sum(p * d for p, d in zip(vec, deg)))
        if pairing:
            lifted = CorrelatorKey(tuple(sorted(ins + (VarId(0, cls),))), deg)
            lowering: list[tuple[CorrelatorKey, Fraction]] = []
            for i, (m, a) in enumerate(ins):
                if m >= 1:
                    for g in range(1, ts.classes + 1):
                        kappa = ts.cup_entry(cls, a, g)
                        if kappa:
                            low = ins[:i] + (VarId(m - 1, g),) + ins[i + 1:]
                            lowering.append((CorrelatorKey(tuple(sorted(low)), deg), kappa))
            return lifted, lowering, pairing
    raise TargetUnsupported("no divisor pairs nontrivially with this degree")


def _sub_multisets(counts: list[tuple[VarId, int]]
                   ) -> Iterator[tuple[tuple[VarId, ...], tuple[VarId, ...], int]]:
    """Split a multiset two ways with the multiplicity binomial of each split."""
    if not counts:
        yield (), (), 1
        return
    (var, mult), rest = counts[0], counts[1:]
    for left, right, ways in _sub_multisets(rest):
        for take in range(mult + 1):
            yield ((var,) * take + left, (var,) * (mult - take) + right,
                   ways * math.comb(mult, take))


def _degree_splits(deg: Degree) -> Iterator[tuple[Degree, Degree]]:
    if not deg:
        yield (), ()
        return
    head, rest = deg[0], deg[1:]
    for tail1, tail2 in _degree_splits(rest):
        for a in range(head + 1):
            yield (a,) + tail1, (head - a,) + tail2


def trr_reduce(ts: TargetSpace, key: CorrelatorKey, chosen: int
               ) -> list[tuple[Fraction, CorrelatorKey, CorrelatorKey]]:
    """Genus-0 topological recursion relation at coefficient level.

    The chosen insertion tau_m (m > 0) loses one level and lands in the first
    factor; the two canonically largest remaining insertions stay in the
    second factor; spectators are distributed over both factors with
    multiplicity binomials, the degree splits, and eta^{-1} contracts the two
    new primary insertions.
    """
    ins, deg = key
    if len(ins) < 3:
        raise NotApplicable("TRR needs at least 3 insertions")
    m, alpha = ins[chosen]
    if m <= 0:
        raise NotApplicable("chosen insertion must have positive level")
    rest = ins[:chosen] + ins[chosen + 1:]
    fixed = rest[-2:]
    spectators = rest[:-2]
    counts: dict[VarId, int] = {}
    for v in spectators:
        counts[v] = counts.get(v, 0) + 1
    lowered = VarId(m - 1, alpha)
    out: list[tuple[Fraction, CorrelatorKey, CorrelatorKey]] = []
    for left, right, ways in _sub_multisets(sorted(counts.items())):
        for deg1, deg2 in _degree_splits(deg):
            for sigma in range(1, ts.classes + 1):
                for rho, eta_inv in ts.raised(sigma):
                    key1 = CorrelatorKey(
                        tuple(sorted(left + (lowered, VarId(0, sigma)))), deg1)
                    key2 = CorrelatorKey(
                        tuple(sorted(right + fixed + (VarId(0, rho),))), deg2)
                    out.append((eta_inv * ways, key1, key2))
    return out


def kontsevich_nd(d: int, _memo: dict[int, Fraction] = {1: _ONE}) -> Fraction:
    """Degree-d count of rational plane curves through 3d-1 points."""
    if d < 1:
        raise NotApplicable("degree must be >= 1")
    if d in _memo:
        return _memo[d]
    total = _ZERO
    for da in range(1, d):
        db = d - da
        total += (
            kontsevich_nd(da) * kontsevich_nd(db) * da * da * db
            * (db * math.comb(3 * d - 4, 3 * da - 2) - da * math.comb(3 * d - 4, 3 * da - 1))
        )
    _memo[d] = total
    return total


class Engine:
    """Master evaluator bound to one target, backend, and cache."""

    def __init__(self, ts: TargetSpace, backend: PrimaryBackend | None = None,
                 cache: InvariantCache | None = None):
        self.ts = ts
        self.backend = backend if backend is not None else default_backend(ts)
        if cache is None:
            cache = InvariantCache.for_target(ts)
        elif cache.fingerprint != ts.fingerprint:
            raise CacheMismatch("cache fingerprint does not match the active target")
        self.cache = cache

    # -- scalar invariants -------------------------------------------------

    def invariant(self, key: CorrelatorKey) -> Fraction:
        key = CorrelatorKey(tuple(sorted(VarId(*v) for v in key.insertions)),
                            tuple(key.degree))
        cached = self.cache.entries.get(key)
        if cached is not None:
            return cached
        if not dimension_admissible(self.ts, key):
            return _ZERO
        value = self._reduce(key)
        return self.cache.publish(key, value)

    def _reduce(self, key: CorrelatorKey) -> Fraction:
        ins, deg = key
        if not any(deg):
            return degree_zero_value(self.ts, key)
        if len(ins) < 3:
            lifted, lowering, pairing = divisor_lift(self.ts, key)
            value = self.invariant(lifted)
            for low_key, coeff in lowering:
                value -= coeff * self.invariant(low_key)
            return value / pairing
        top = max(range(len(ins)), key=lambda i: ins[i].level)
        if ins[top].level > 0:
            chosen = next(i for i in range(len(ins)) if ins[i].level == ins[top].level)
            total = _ZERO
            for coeff, key1, key2 in trr_reduce(self.ts, key, chosen):
                v1 = self.invariant(key1)
                if v1:
                    v2 = self.invariant(key2)
                    if v2:
                        total += coeff * v1 * v2
            return total
        return self._primary_value(key)

    def _primary_value(self, key: CorrelatorKey) -> Fraction:
        """All-primary key at nonzero degree: strip and hit the backend."""
        ins, deg = key
        table = self.backend.table if self.backend.kind == "Table" else None
        factor = _ONE
        while True:
            if table is not None and CorrelatorKey(ins, deg) in table:
                return factor * table[CorrelatorKey(ins, deg)]
            if any(v == VarId(0, 1) for v in ins):
                # String equation: all lowering terms vanish on primaries.
                return _ZERO
            stripped = False
            for i, (m, a) in enumerate(ins):
                vec = self.ts.divisor_pairing(a)
                if vec is not None:
                    factor *= Fraction(sum(p * d for p, d in zip(vec, deg)))
                    if factor == 0:
                        return _ZERO
                    ins = ins[:i] + ins[i + 1:]
                    stripped = True
                    break
            if not stripped:
                break
        kind = self.backend.kind
        if kind == "ProjPlane":
            if all(a == 3 for _, a in ins) and len(deg) == 1 and deg[0] >= 1:
                if len(ins) == 3 * deg[0] - 1:
                    return factor * kontsevich_nd(deg[0])
                return _ZERO
        elif kind == "ProjLine":
            if not ins and len(deg) == 1:
                return factor if deg[0] == 1 else _ZERO
        elif kind == "Point":
            # The point has no Novikov generators; nonzero degree cannot occur.
            raise TargetUnsupported("point target has no nonzero-degree invariants")
        raise TargetUnsupported(
            f"no backend value for primary key {CorrelatorKey(ins, deg)} on {self.ts.name}")

    # -- generating functions ------------------------------------------------

    def admissible_degrees(self, ins: Insertions, cap: Degree) -> list[Degree]:
        """Degrees <= cap making the key dimension-admissible."""
        ts = self.ts
        balance = sum(m + ts.q[a - 1] for m, a in ins) - (ts.complex_dim - 3 + len(ins))
        r = ts.novikov_rank
        if r == 0:
            return [()] if balance == 0 else []
        if r == 1:
            c = ts.c1_deg[0]
            if c > 0:
                if balance % c == 0 and 0 <= balance // c <= cap[0]:
                    return [(balance // c,)]
                return []
        out = []
        for deg in _degree_box(cap):
            if sum(d * c for d, c in zip(deg, ts.c1_deg)) == balance:
                out.append(deg)
        return out

    def _policy_entries(self, policy: TruncationPolicy
                        ) -> list[tuple[tuple[tuple[VarId, int], ...], Insertions, Fraction]]:
        entries = []
        for mon in _iter_t_monomials(policy, self.ts.classes):
            ins: list[VarId] = []
            fact = 1
            for v, e in mon:
                ins.extend([v] * e)
                fact *= math.factorial(e)
            entries.append((mon, tuple(ins), Fraction(1, fact)))
        return entries

    def correlation_series(self, fixed: Iterable[tuple[int, int]],
                           policy: TruncationPolicy) -> TruncatedSeries:
        """Truncated series of <<prod tau_fixed>>_0 expanded at t = 0.

        Each coefficient is computed directly from the defining invariant, so
        the result agrees with iterated derivatives of the free energy without
        any truncation loss.
        """
        fixed_ins = tuple(sorted(VarId(m, a) for m, a in fixed))
        terms: dict[Monomial, Fraction] = {}
        for mon, ins, invfact in self._policy_entries(policy):
            full = tuple(sorted(fixed_ins + ins))
            for deg in self.admissible_degrees(full, policy.max_degree):
                if not any(deg) and len(full) < 3:
                    continue
                value = self.invariant(CorrelatorKey(full, deg))
                if value:
                    terms[Monomial(mon, deg)] = value * invfact
        series = TruncatedSeries(policy)
        series.terms = terms
        return series

    def free_energy(self, policy: TruncationPolicy) -> TruncatedSeries:
        return self.correlation_series((), policy)

    def admissible_keys(self, policy: TruncationPolicy) -> list[CorrelatorKey]:
        """Every admissible key whose monomial the policy admits (cache warming)."""
        keys = []
        for _, ins, _ in self._policy_entries(policy):
            for deg in self.admissible_degrees(ins, policy.max_degree):
                if not any(deg) and len(ins) < 3:
                    continue
                keys.append(CorrelatorKey(ins, deg))
        return keys


def _degree_box(cap: Degree) -> Iterator[Degree]:
    if not cap:
        yield ()
        return
    for rest in _degree_box(cap[1:]):
        for a in range(cap[0] + 1):
            yield (a,) + rest


def _iter_t_monomials(policy: TruncationPolicy, n_classes: int
                      ) -> Iterator[tuple[tuple[VarId, int], ...]]:
    varids = [VarId(m, a) for m in range(policy.max_level + 1)
              for a in range(1, n_classes + 1)]

    def rec(start: int, budget: int, acc: list[tuple[VarId, int]]):
        yield tuple(acc)
        for i in range(start, len(varids)):
            for e in range(1, budget + 1):
                acc.append((varids[i], e))
                yield from rec(i + 1, budget - e, acc)
                acc.pop()

    yield from rec(0, policy.max_insertions, [])


# Spec-level functional wrappers ------------------------------------------------

def invariant(ts: TargetSpace, backend: PrimaryBackend, cache: InvariantCache,
              key: CorrelatorKey) -> Fraction:
    return Engine(ts, backend, cache).invariant(key)


def free_energy(ts: TargetSpace, backend: PrimaryBackend, cache: InvariantCache,
                policy: TruncationPolicy) -> TruncatedSeries:
    return Engine(ts, backend, cache).free_energy(policy)


def correlation_series(ts: TargetSpace, backend: PrimaryBackend, cache: InvariantCache,
                       fixed: Iterable[tuple[int, int]], policy: TruncationPolicy
                       ) -> TruncatedSeries:
    return Engine(ts, backend, cache).correlation_series(fixed, policy)
