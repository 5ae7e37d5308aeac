"""Virasoro operators L_n at genus 0: construction, residuals, commutators.

An operator is stored in the shifted coordinates convention: linear terms
``coeff * ttilde_src * d/dt_dst`` (ttilde = t - delta_{(1,1)}), quadratic
terms carrying the lambda^2 grading, a classical level-0 quadratic form at
lambda^{-2}, and a constant.  The genus-0 residual of L_n against F_0 is

    Psi_{0,n} = sum linear coeff * ttilde_src * <<tau_dst>>
              + 1/2 sum quadratic coeff * <<tau_u>> <<tau_v>>
              + 1/2 sum Q_{ab} t^a_0 t^b_0,

assembled from exact correlation series (the operator constant only enters at
genus 1 and is ignored here).

The A/B coefficient functions are evaluated division-free as sums over
complements of index subsets, which stays finite at the integer b values where
the literal Gamma-ratio form has poles.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

from .engine import Engine
from .errors import IndexOutOfRange, PolicyTooTight, UnsupportedIndex
from .series import (Monomial, TruncatedSeries, TruncationPolicy, VarId,
                     series_derive, series_mul)
from .target import Matrix, TargetSpace

_ZERO = Fraction(0)
_ONE = Fraction(1)
DILATON_VAR = VarId(1, 1)

LinearTerm = tuple[VarId, VarId, Fraction]      # (src, dst, coeff): coeff ttilde_src d_dst
QuadraticTerm = tuple[VarId, VarId, Fraction]   # (u, v, coeff), u <= v


@dataclass(frozen=True)
class VirasoroOperator:
    linear: tuple[LinearTerm, ...]
    quadratic: tuple[QuadraticTerm, ...]
    classical: Matrix
    constant: Fraction

    def is_empty(self) -> bool:
        return (not self.linear and not self.quadratic and self.constant == 0
                and all(all(x == 0 for x in row) for row in self.classical))

    def __neg__(self) -> "VirasoroOperator":
        return VirasoroOperator(
            tuple((s, d, -c) for s, d, c in self.linear),
            tuple((u, v, -c) for u, v, c in self.quadratic),
            tuple(tuple(-x for x in row) for row in self.classical),
            -self.constant,
        )


def coeff_A(b: Fraction, j: int, m: int, n: int) -> Fraction:
    """Sum over size-j subsets S of {m, ..., m+n} of prod_{l not in S} (b + l)."""
    if n < 1 or m < 0 or j < 0 or j > n + 1:
        raise IndexOutOfRange(f"coeff_A index out of range: j={j}, m={m}, n={n}")
    levels = range(m, m + n + 1)
    total = _ZERO
    for subset in itertools.combinations(levels, j):
        skip = set(subset)
        prod = _ONE
        for l in levels:
            if l not in skip:
                prod *= b + l
        total += prod
    return total


def coeff_B(b: Fraction, j: int, k: int, n: int) -> Fraction:
    """(-1)^{k+1} times the complement-product sum over {-k-1, ..., n-k-1}."""
    if j < 0 or j > n - 1 or k < 0 or k > n - j - 1:
        raise IndexOutOfRange(f"coeff_B index out of range: j={j}, k={k}, n={n}")
    levels = range(-k - 1, n - k)
    total = _ZERO
    for subset in itertools.combinations(levels, j):
        skip = set(subset)
        prod = _ONE
        for l in levels:
            if l not in skip:
                prod *= b + l
        total += prod
    return total if (k + 1) % 2 == 0 else -total


def _zero_matrix(n: int) -> Matrix:
    return tuple((Fraction(0),) * n for _ in range(n))


def string_field(ts: TargetSpace, max_level: int) -> tuple[LinearTerm, ...]:
    """S = -sum ttilde^a_m d/dt^a_{m-1}."""
    return tuple((VarId(m, a), VarId(m - 1, a), -_ONE)
                 for m in range(1, max_level + 1) for a in range(1, ts.classes + 1))


def dilaton_field(ts: TargetSpace, max_level: int) -> tuple[LinearTerm, ...]:
    """D = -sum ttilde^a_m d/dt^a_m."""
    return tuple((VarId(m, a), VarId(m, a), -_ONE)
                 for m in range(max_level + 1) for a in range(1, ts.classes + 1))


def euler_field(ts: TargetSpace, max_level: int) -> tuple[LinearTerm, ...]:
    """X = -sum (m + b_a - (3-d)/2) ttilde^a_m d_m - sum C_a^b ttilde^a_m d_{m-1}."""
    shift = Fraction(3 - ts.complex_dim, 2)
    terms: list[LinearTerm] = []
    for m in range(max_level + 1):
        for a in range(1, ts.classes + 1):
            coeff = -(m + ts.b[a - 1] - shift)
            if coeff:
                terms.append((VarId(m, a), VarId(m, a), coeff))
            if m >= 1:
                for be in range(1, ts.classes + 1):
                    c = ts.c1_mat[a - 1][be - 1]
                    if c:
                        terms.append((VarId(m, a), VarId(m - 1, be), -c))
    return tuple(terms)


def combine_fields(*pieces: tuple[tuple[LinearTerm, ...], Fraction]) -> tuple[LinearTerm, ...]:
    acc: dict[tuple[VarId, VarId], Fraction] = {}
    for terms, scale in pieces:
        for src, dst, coeff in terms:
            key = (src, dst)
            acc[key] = acc.get(key, _ZERO) + scale * coeff
    return tuple((s, d, c) for (s, d), c in sorted(acc.items()) if c)


def build_operator(ts: TargetSpace, n: int, max_level: int) -> VirasoroOperator:
    """Assemble L_n exactly; linear terms are generated for src levels <= max_level."""
    if n < -1:
        raise UnsupportedIndex("operators below L_{-1} are out of scope")
    N = ts.classes
    linear: dict[tuple[VarId, VarId], Fraction] = {}

    def add_linear(src: VarId, dst: VarId, coeff: Fraction) -> None:
        if coeff and dst.level >= 0:
            key = (src, dst)
            acc = linear.get(key, _ZERO) + coeff
            if acc:
                linear[key] = acc
            else:
                linear.pop(key, None)

    quadratic: dict[tuple[VarId, VarId], Fraction] = {}

    def add_quadratic(u: VarId, v: VarId, coeff: Fraction) -> None:
        if coeff:
            key = (u, v) if u <= v else (v, u)
            acc = quadratic.get(key, _ZERO) + coeff
            if acc:
                quadratic[key] = acc
            else:
                quadratic.pop(key, None)

    classical = _zero_matrix(N)
    constant = _ZERO

    if n == -1:
        for m in range(1, max_level + 1):
            for a in range(1, N + 1):
                add_linear(VarId(m, a), VarId(m - 1, a), _ONE)
        classical = ts.eta
    elif n == 0:
        for m in range(max_level + 1):
            for a in range(1, N + 1):
                add_linear(VarId(m, a), VarId(m, a), m + ts.b[a - 1])
                for be in range(1, N + 1):
                    add_linear(VarId(m, a), VarId(m - 1, be), ts.c1_mat[a - 1][be - 1])
        classical = ts.chern_power_eta(1)
        constant = (Fraction(3 - ts.complex_dim, 2) * ts.euler_char - ts.c1_cdm1) / 24
    else:
        for m in range(max_level + 1):
            for a in range(1, N + 1):
                b = ts.b[a - 1]
                for j in range(n + 2):
                    cj = ts.chern_power(j)
                    coeff = coeff_A(b, j, m, n)
                    for be in range(1, N + 1):
                        add_linear(VarId(m, a), VarId(m + n - j, be),
                                   coeff * cj[a - 1][be - 1])
        for a in range(1, N + 1):
            b = ts.b[a - 1]
            for j in range(n):
                cj = ts.chern_power(j)
                for k in range(n - j):
                    coeff = coeff_B(b, j, k, n)
                    for be in range(1, N + 1):
                        cjab = cj[a - 1][be - 1]
                        if not cjab:
                            continue
                        for g, eta_inv in ts.raised(a):
                            add_quadratic(VarId(k, g), VarId(n - k - 1 - j, be),
                                          coeff * cjab * eta_inv)
        classical = ts.chern_power_eta(n + 1)

    return VirasoroOperator(
        tuple((s, d, c) for (s, d), c in sorted(linear.items())),
        tuple((u, v, c) for (u, v), c in sorted(quadratic.items())),
        classical,
        constant,
    )


def _classical_series(matrix: Matrix, policy: TruncationPolicy) -> TruncatedSeries:
    """1/2 sum Q_{ab} t^a_0 t^b_0 as a series."""
    zero_deg = (0,) * len(policy.max_degree)
    terms: dict[Monomial, Fraction] = {}
    n = len(matrix)
    half = Fraction(1, 2)
    for a in range(1, n + 1):
        for b in range(1, n + 1):
            q = matrix[a - 1][b - 1]
            if not q:
                continue
            if a == b:
                mon = Monomial(((VarId(0, a), 2),), zero_deg)
            else:
                u, v = sorted((VarId(0, a), VarId(0, b)))
                mon = Monomial(((u, 1), (v, 1)), zero_deg)
            acc = terms.get(mon, _ZERO) + half * q
            if acc:
                terms[mon] = acc
            else:
                terms.pop(mon, None)
    series = TruncatedSeries(policy)
    series.terms = {m: c for m, c in terms.items() if policy.admits(m)}
    return series


def apply_operator(op: VirasoroOperator, f0: TruncatedSeries,
                   policy: TruncationPolicy) -> TruncatedSeries:
    """Genus-0 residual of ``op`` against a free-energy series.

    ``f0`` must carry at least one extra insertion of margin and enough level
    headroom that no derivative coefficient inside ``policy`` is lost.
    """
    if f0.policy.max_insertions < policy.max_insertions + 1:
        raise PolicyTooTight("free energy needs insertion margin >= 1")
    needed_level = max([policy.max_level] + [dst.level for _, dst, _ in op.linear]
                       + [v.level for _, v, _ in op.quadratic])
    if f0.policy.max_level < needed_level:
        raise PolicyTooTight(f"free energy needs levels up to {needed_level}")
    if len(f0.policy.max_degree) != len(policy.max_degree) or any(
            a < b for a, b in zip(f0.policy.max_degree, policy.max_degree)):
        raise PolicyTooTight("free energy needs the full degree window")

    def fit(series: TruncatedSeries) -> TruncatedSeries:
        out = TruncatedSeries(policy)
        out.terms = {m: c for m, c in series.terms.items() if policy.admits(m)}
        return out

    result = TruncatedSeries.zero(policy)
    derivs: dict[VarId, TruncatedSeries] = {}

    def deriv(v: VarId) -> TruncatedSeries:
        if v not in derivs:
            derivs[v] = series_derive(f0, v)
        return derivs[v]

    for src, dst, coeff in op.linear:
        d = deriv(dst)
        if src.level <= policy.max_level:
            result = result + fit(d).times_var(src).scale(coeff)
        if src == DILATON_VAR:
            result = result + fit(d).scale(-coeff)
    half = Fraction(1, 2)
    for u, v, coeff in op.quadratic:
        prod = series_mul(fit(deriv(u)), fit(deriv(v)))
        result = result + prod.scale(half * coeff)
    result = result + _classical_series(op.classical, policy)
    return result


class CorrContext:
    """Correlation-series cache plus vector-field application helpers."""

    def __init__(self, engine: Engine, policy: TruncationPolicy):
        self.engine = engine
        self.policy = policy
        self._corr: dict[tuple[VarId, ...], TruncatedSeries] = {}

    @property
    def ts(self) -> TargetSpace:
        return self.engine.ts

    def corr(self, *slots: tuple[int, int]) -> TruncatedSeries:
        """<<tau_{slots}>> as a truncated series; negative levels give zero."""
        vids = tuple(sorted(VarId(m, a) for m, a in slots))
        if any(v.level < 0 for v in vids):
            return TruncatedSeries.zero(self.policy)
        cached = self._corr.get(vids)
        if cached is None:
            cached = self.engine.correlation_series(vids, self.policy)
            self._corr[vids] = cached
        return cached

    def corr_raised(self, sigma: int, *slots: tuple[int, int]) -> TruncatedSeries:
        """<<O^sigma tau_slots>> = eta^{sigma rho} <<O_rho tau_slots>>."""
        out = TruncatedSeries.zero(self.policy)
        for rho, coeff in self.ts.raised(sigma):
            out = out + self.corr((0, rho), *slots).scale(coeff)
        return out

    def field_series(self, terms: tuple[LinearTerm, ...],
                     *slots: tuple[int, int]) -> TruncatedSeries:
        """<<W tau_slots>> for W = sum coeff ttilde_src d_dst (tensor slot)."""
        out = TruncatedSeries.zero(self.policy)
        for src, dst, coeff in terms:
            base = self.corr(dst, *slots)
            if base.is_zero():
                continue
            if src.level <= self.policy.max_level:
                out = out + base.times_var(src).scale(coeff)
            if src == DILATON_VAR:
                out = out + base.scale(-coeff)
        return out

    def field2_series(self, first: tuple[LinearTerm, ...],
                      second: tuple[LinearTerm, ...],
                      *slots: tuple[int, int]) -> TruncatedSeries:
        """<<W1 W2 tau_slots>> with both vector-field slots expanded."""
        out = TruncatedSeries.zero(self.policy)
        max_level = self.policy.max_level
        for src1, dst1, c1 in first:
            for src2, dst2, c2 in second:
                base = self.corr(dst1, dst2, *slots)
                if base.is_zero():
                    continue
                coeff = c1 * c2
                if src1.level <= max_level and src2.level <= max_level:
                    out = out + base.times_var(src1).times_var(src2).scale(coeff)
                if src1 == DILATON_VAR and src2.level <= max_level:
                    out = out + base.times_var(src2).scale(-coeff)
                if src2 == DILATON_VAR and src1.level <= max_level:
                    out = out + base.times_var(src1).scale(-coeff)
                if src1 == DILATON_VAR and src2 == DILATON_VAR:
                    out = out + base.scale(coeff)
        return out

    def polynomial(self, build) -> TruncatedSeries:
        """Helper: assemble a plain polynomial via a term callback."""
        series = TruncatedSeries(self.policy)
        terms: dict[Monomial, Fraction] = {}
        zero_deg = (0,) * len(self.policy.max_degree)
        for exps, coeff in build(zero_deg):
            mon = Monomial(tuple(sorted(exps)), zero_deg)
            if not self.policy.admits(mon):
                continue
            acc = terms.get(mon, _ZERO) + coeff
            if acc:
                terms[mon] = acc
            else:
                terms.pop(mon, None)
        series.terms = terms
        return series


def psi(ts_or_engine, n: int, policy: TruncationPolicy,
        backend=None, cache=None) -> TruncatedSeries:
    """Genus-0 L_n constraint residual Psi_{0,n} as a truncated series.

    For n in {1, 2} the series is assembled both from the generic operator and
    from the hand-expanded closed form; the two must agree exactly.
    """
    if n < 1:
        raise UnsupportedIndex("psi is defined for n >= 1")
    engine = _as_engine(ts_or_engine, backend, cache)
    ctx = CorrContext(engine, policy)
    generic = _psi_generic(ctx, n)
    if n in (1, 2):
        closed = _psi_closed_form(ctx, n)
        if closed != generic:
            diff = closed - generic
            mon, coeff = diff.items_sorted()[0]
            raise AssertionError(
                f"generic and closed-form Psi_0,{n} differ at {mon}: {coeff}")
    return generic


def _as_engine(ts_or_engine, backend, cache) -> Engine:
    if isinstance(ts_or_engine, Engine):
        return ts_or_engine
    return Engine(ts_or_engine, backend, cache)


def _psi_generic(ctx: CorrContext, n: int) -> TruncatedSeries:
    policy = ctx.policy
    op = build_operator(ctx.ts, n, policy.max_level)
    out = ctx.field_series(op.linear)
    half = Fraction(1, 2)
    for u, v, coeff in op.quadratic:
        prod = series_mul(ctx.corr(u), ctx.corr(v))
        out = out + prod.scale(half * coeff)
    out = out + _classical_series(op.classical, policy)
    return out


def _psi_closed_form(ctx: CorrContext, n: int) -> TruncatedSeries:
    ts, policy = ctx.ts, ctx.policy
    N = ts.classes
    out = _classical_series(ts.chern_power_eta(n + 1), policy)
    c1, c2 = ts.c1_mat, ts.chern_power(2)
    c3 = ts.chern_power(3)
    half = Fraction(1, 2)

    def tpart(src: VarId, series: TruncatedSeries, coeff: Fraction) -> TruncatedSeries:
        acc = TruncatedSeries.zero(policy)
        if src.level <= policy.max_level:
            acc = acc + series.times_var(src).scale(coeff)
        if src == DILATON_VAR:
            acc = acc + series.scale(-coeff)
        return acc

    if n == 1:
        for m in range(policy.max_level + 1):
            for a in range(1, N + 1):
                b = ts.b[a - 1]
                src = VarId(m, a)
                out = out + tpart(src, ctx.corr((m + 1, a)), (m + b) * (m + b + 1))
                for be in range(1, N + 1):
                    if c1[a - 1][be - 1]:
                        out = out + tpart(src, ctx.corr((m, be)),
                                          (2 * m + 2 * b + 1) * c1[a - 1][be - 1])
                    if m >= 1 and c2[a - 1][be - 1]:
                        out = out + tpart(src, ctx.corr((m - 1, be)), c2[a - 1][be - 1])
        for a in range(1, N + 1):
            b = ts.b[a - 1]
            prod = series_mul(ctx.corr((0, a)), ctx.corr_raised(a))
            out = out + prod.scale(half * b * (1 - b))
    elif n == 2:
        for m in range(policy.max_level + 1):
            for a in range(1, N + 1):
                b = ts.b[a - 1]
                src = VarId(m, a)
                out = out + tpart(src, ctx.corr((m + 2, a)),
                                  (m + b) * (m + b + 1) * (m + b + 2))
                for be in range(1, N + 1):
                    if c1[a - 1][be - 1]:
                        out = out + tpart(src, ctx.corr((m + 1, be)),
                                          (3 * (m + b) ** 2 + 6 * (m + b) + 2) * c1[a - 1][be - 1])
                    if c2[a - 1][be - 1]:
                        out = out + tpart(src, ctx.corr((m, be)),
                                          3 * (m + b + 1) * c2[a - 1][be - 1])
                    if m >= 1 and c3[a - 1][be - 1]:
                        out = out + tpart(src, ctx.corr((m - 1, be)), c3[a - 1][be - 1])
        for a in range(1, N + 1):
            b = ts.b[a - 1]
            prod = series_mul(ctx.corr((1, a)), ctx.corr_raised(a))
            out = out + prod.scale(-(b - 1) * b * (b + 1))
        for a in range(1, N + 1):
            b = ts.b[a - 1]
            for be in range(1, N + 1):
                if c1[a - 1][be - 1]:
                    prod = series_mul(ctx.corr((0, be)), ctx.corr_raised(a))
                    out = out + prod.scale(-half * (3 * b * b - 1) * c1[a - 1][be - 1])
    else:
        raise UnsupportedIndex("hand-expanded closed forms exist only for n in {1, 2}")
    return out


def psi_tilde(ts_or_engine, n: int, policy: TruncationPolicy,
              backend=None, cache=None) -> TruncatedSeries:
    """Auxiliary constraint residuals: Psi~_{0,1} and Psi~_{0,2}."""
    if n not in (1, 2):
        raise UnsupportedIndex("psi_tilde is defined for n in {1, 2}")
    engine = _as_engine(ts_or_engine, backend, cache)
    ctx = CorrContext(engine, policy)
    ts = ctx.ts
    N = ts.classes
    half = Fraction(1, 2)
    out = TruncatedSeries.zero(policy)

    def tpart(src: VarId, series: TruncatedSeries, coeff: Fraction) -> TruncatedSeries:
        acc = TruncatedSeries.zero(policy)
        if src.level <= policy.max_level:
            acc = acc + series.times_var(src).scale(coeff)
        if src == DILATON_VAR:
            acc = acc + series.scale(-coeff)
        return acc

    if n == 1:
        for m in range(policy.max_level + 1):
            for a in range(1, N + 1):
                out = out + tpart(VarId(m, a), ctx.corr((m + 1, a)), -_ONE)
        for a in range(1, N + 1):
            out = out + series_mul(ctx.corr((0, a)), ctx.corr_raised(a)).scale(half)
    else:
        c1 = ts.c1_mat
        for m in range(policy.max_level + 1):
            for a in range(1, N + 1):
                b = ts.b[a - 1]
                src = VarId(m, a)
                out = out + tpart(src, ctx.corr((m + 2, a)), m + b + 1)
                for be in range(1, N + 1):
                    if c1[a - 1][be - 1]:
                        out = out + tpart(src, ctx.corr((m + 1, be)), c1[a - 1][be - 1])
        for a in range(1, N + 1):
            b = ts.b[a - 1]
            out = out + series_mul(ctx.corr_raised(a), ctx.corr((1, a))).scale(-b)
        for a in range(1, N + 1):
            for be in range(1, N + 1):
                if c1[a - 1][be - 1]:
                    prod = series_mul(ctx.corr_raised(a), ctx.corr((0, be)))
                    out = out + prod.scale(-half * c1[a - 1][be - 1])
    return out


def derivative_families(series: TruncatedSeries):
    """Split a residual series into constant/first/second coefficient families.

    Returns (constants, firsts, seconds) mapping degree, (var, degree) and
    (var pair, degree) to exact derivative values at the origin.
    """
    constants: dict[tuple, Fraction] = {}
    firsts: dict[tuple, Fraction] = {}
    seconds: dict[tuple, Fraction] = {}
    for mon, coeff in series.terms.items():
        if not mon.exps:
            constants[mon.degree] = coeff
        elif mon.total_exponent() == 1:
            firsts[(mon.exps[0][0], mon.degree)] = coeff
        elif mon.total_exponent() == 2:
            if len(mon.exps) == 1:
                v = mon.exps[0][0]
                seconds[((v, v), mon.degree)] = 2 * coeff
            else:
                (u, _), (v, _) = mon.exps
                seconds[((u, v), mon.degree)] = coeff
    return constants, firsts, seconds


def check_shift_relations(series: TruncatedSeries) -> list[str]:
    """Verify the two dilaton-shift identities among the coefficient families.

    d^2/dt11 dt_v Psi|_0 = -d/dt_v Psi|_0  and  d/dt11 Psi|_0 = -2 Psi|_0.
    Returns a list of human-readable violations (empty when all hold).
    """
    constants, firsts, seconds = derivative_families(series)
    policy = series.policy
    bad: list[str] = []
    degrees = set(constants) | {d for _, d in firsts} | {d for _, d in seconds}
    for deg in sorted(degrees):
        lhs = firsts.get((DILATON_VAR, deg), _ZERO)
        rhs = -2 * constants.get(deg, _ZERO)
        if lhs != rhs:
            bad.append(f"d/dt11 at q^{deg}: {lhs} != {rhs}")
    vars_seen = {v for (v, _) in firsts} | {u for ((u, _), _) in seconds} | {v for ((_, v), _) in seconds}
    for v in sorted(vars_seen):
        if v.level > policy.max_level:
            continue
        for deg in sorted(degrees):
            pair = tuple(sorted((DILATON_VAR, v)))
            lhs = seconds.get((pair, deg), _ZERO)
            rhs = -firsts.get((v, deg), _ZERO)
            if lhs != rhs:
                bad.append(f"d2/dt11 dt{tuple(v)} at q^{deg}: {lhs} != {rhs}")
    return bad


# ---------------------------------------------------------------------------
# Commutator checking via operator actions on a basis window.
# ---------------------------------------------------------------------------

class _GradedPoly:
    """Polynomial with a lambda grading: maps lambda power -> series."""

    __slots__ = ("parts", "policy")

    def __init__(self, policy: TruncationPolicy, parts=None):
        self.policy = policy
        self.parts: dict[int, TruncatedSeries] = dict(parts or {})

    def add(self, power: int, series: TruncatedSeries) -> None:
        if series.is_zero():
            return
        if power in self.parts:
            acc = self.parts[power] + series
            if acc.is_zero():
                del self.parts[power]
            else:
                self.parts[power] = acc
        else:
            self.parts[power] = series

    def __sub__(self, other: "_GradedPoly") -> "_GradedPoly":
        out = _GradedPoly(self.policy, {k: v for k, v in self.parts.items()})
        for k, v in other.parts.items():
            out.add(k, -v)
        return out

    def is_zero(self) -> bool:
        return not self.parts


def _apply_to_poly(op: VirasoroOperator, poly: _GradedPoly) -> _GradedPoly:
    """Apply the lambda-graded operator to a graded polynomial exactly."""
    policy = poly.policy
    out = _GradedPoly(policy)
    classical = _classical_series(op.classical, policy)
    half = Fraction(1, 2)
    for power, series in poly.parts.items():
        for src, dst, coeff in op.linear:
            d = series_derive(series, dst)
            if d.is_zero():
                continue
            out.add(power, d.times_var(src).scale(coeff))
            if src == DILATON_VAR:
                out.add(power, d.scale(-coeff))
        # The quadratic block of the operator is (lambda^2/2) sum coeff d_u d_v.
        for u, v, coeff in op.quadratic:
            d2 = series_derive(series_derive(series, u), v)
            if not d2.is_zero():
                out.add(power + 2, d2.scale(half * coeff))
        if not classical.is_zero():
            out.add(power - 2, series_mul(classical, series))
        if op.constant:
            out.add(power, series.scale(op.constant))
    return out


def _work_policy(policy: TruncationPolicy) -> TruncationPolicy:
    """Internal ring for commutator checks: exponent headroom so that two
    operator applications on a degree-2 basis monomial never truncate (each
    classical multiplication adds total exponent 2)."""
    return TruncationPolicy(6, policy.max_level, policy.max_degree)


def _basis_window(ts: TargetSpace, max_basis_level: int,
                  policy: TruncationPolicy) -> list[tuple[str, _GradedPoly]]:
    work = _work_policy(policy)
    vids = [VarId(m, a) for m in range(max_basis_level + 1)
            for a in range(1, ts.classes + 1)]
    basis: list[tuple[str, _GradedPoly]] = []
    one = _GradedPoly(work, {0: TruncatedSeries.constant(work, 1)})
    basis.append(("1", one))
    for v in vids:
        basis.append((f"t{tuple(v)}", _GradedPoly(
            work, {0: TruncatedSeries.variable(work, v)})))
    for i, u in enumerate(vids):
        for v in vids[i:]:
            mon = TruncatedSeries.variable(work, u).times_var(v)
            basis.append((f"t{tuple(u)}t{tuple(v)}", _GradedPoly(work, {0: mon})))
    return basis


def _collect(label: str, poly: _GradedPoly, records: list) -> None:
    for power, series in sorted(poly.parts.items()):
        for mon, coeff in series.items_sorted():
            records.append((label, power, mon, coeff))


def _scale_op(op: VirasoroOperator, scale: Fraction) -> VirasoroOperator:
    return VirasoroOperator(
        tuple((s, d, scale * c) for s, d, c in op.linear),
        tuple((u, v, scale * c) for u, v, c in op.quadratic),
        tuple(tuple(scale * x for x in row) for row in op.classical),
        scale * op.constant,
    )


def _residual_records(basis, op_m: VirasoroOperator, op_n: VirasoroOperator,
                      rhs: VirasoroOperator | None) -> list:
    """Matrix elements of [L_m, L_n] - L_rhs on the basis window."""
    records: list = []
    for label, p in basis:
        r = _apply_to_poly(op_m, _apply_to_poly(op_n, p)) - \
            _apply_to_poly(op_n, _apply_to_poly(op_m, p))
        if rhs is not None:
            r = r - _apply_to_poly(rhs, p)
        _collect(label, r, records)
    return records


def _action_records(basis, op: VirasoroOperator) -> list:
    records: list = []
    for label, p in basis:
        _collect(label, _apply_to_poly(op, p), records)
    return records


def _reconstruct(ts: TargetSpace, records, policy: TruncationPolicy) -> VirasoroOperator:
    """Rebuild a Virasoro-shaped operator from basis matrix elements."""
    N = ts.classes
    constant = _ZERO
    classical = [[_ZERO] * N for _ in range(N)]
    linear: dict[tuple[VarId, VarId], Fraction] = {}
    quadratic: dict[tuple[VarId, VarId], Fraction] = {}
    by_label: dict[str, list] = {}
    for label, power, mon, coeff in records:
        by_label.setdefault(label, []).append((power, mon, coeff))
    for power, mon, coeff in by_label.get("1", []):
        if power == 0 and not mon.exps:
            constant = coeff
        elif power == -2 and mon.total_exponent() == 2 and mon.max_level() == 0:
            if len(mon.exps) == 1:
                a = mon.exps[0][0].cls
                classical[a - 1][a - 1] = 2 * coeff
            else:
                (u, _), (v, _) = mon.exps
                classical[u.cls - 1][v.cls - 1] = coeff
                classical[v.cls - 1][u.cls - 1] = coeff
        else:
            raise ValueError(f"residual not Virasoro-shaped at basis 1: {power}, {mon}")
    vids = [VarId(m, a) for m in range(policy.max_level + 1) for a in range(1, N + 1)]
    for v in vids:
        label = f"t{tuple(v)}"
        pure_deriv = _ZERO
        for power, mon, coeff in by_label.get(label, []):
            if power != 0:
                continue  # lambda^{-2} entries are the classical poly times t_v
            if mon.total_exponent() == 1:
                u = mon.exps[0][0]
                c = coeff - (constant if u == v else _ZERO)
                if c:
                    linear[(u, v)] = c
            elif not mon.exps:
                pure_deriv = coeff
            else:
                raise ValueError(f"residual not Virasoro-shaped at {label}: {mon}")
        expect = -linear.get((DILATON_VAR, v), _ZERO)
        if pure_deriv != expect:
            raise ValueError(f"residual d_{tuple(v)} term is not of ttilde form")
    for i, u in enumerate(vids):
        for v in vids[i:]:
            label = f"t{tuple(u)}t{tuple(v)}"
            for power, mon, coeff in by_label.get(label, []):
                if power == 2:
                    if mon.exps:
                        raise ValueError(f"residual lambda^2 part not constant at {label}")
                    # (1/2) c d_u d_v hits t_u t_v once off-diagonal, twice on it.
                    quadratic[(u, v)] = coeff if u == v else 2 * coeff
    return VirasoroOperator(
        tuple((s, d, c) for (s, d), c in sorted(linear.items()) if c),
        tuple((u, v, c) for (u, v), c in sorted(quadratic.items()) if c),
        tuple(tuple(row) for row in classical),
        constant,
    )


def commutator_residual(ts: TargetSpace, m: int, n: int,
                        policy: TruncationPolicy) -> VirasoroOperator:
    """[L_m, L_n] - (m - n) L_{m+n} on the level window the policy can certify.

    Matrix elements are read off on basis monomials with levels at most
    max_level - (m + n + 1); within that window truncation can never fabricate
    a zero, so an empty result certifies the relation there.  The returned
    operator is verified to reproduce every matrix element it was read from.
    """
    max_basis_level = policy.max_level - (m + n + 1)
    if max_basis_level < 0:
        raise PolicyTooTight("max_level must exceed m + n + 1 for the commutator window")
    op_m = build_operator(ts, m, policy.max_level)
    op_n = build_operator(ts, n, policy.max_level)
    rhs = _scale_op(build_operator(ts, m + n, policy.max_level), Fraction(m - n))
    basis = _basis_window(ts, max_basis_level, policy)
    records = _residual_records(basis, op_m, op_n, rhs)
    residual = _reconstruct(ts, records, policy)
    replay = _action_records(basis, residual)
    if _record_map(records) != _record_map(replay):
        raise ValueError("commutator residual is not representable as a Virasoro operator")
    return residual


def _record_map(records) -> dict:
    return {(label, power, mon): coeff for label, power, mon, coeff in records}


def bracket_l0_scale(ts: TargetSpace, policy: TruncationPolicy
                     ) -> tuple[Fraction | None, bool]:
    """Empirical scalar c with [L_{-1}, L_1] = c L_0, and whether it fits exactly.

    Returns (c, exact).  c is None when the bracket vanishes outright; exact
    reports whether every matrix element on the window matches c * L_0.
    """
    max_basis_level = policy.max_level - 2
    if max_basis_level < 0:
        raise PolicyTooTight("max_level too small for the bracket probe")
    op_m = build_operator(ts, -1, policy.max_level)
    op_n = build_operator(ts, 1, policy.max_level)
    op_0 = build_operator(ts, 0, policy.max_level)
    basis = _basis_window(ts, max_basis_level, policy)
    bra = _record_map(_residual_records(basis, op_m, op_n, None))
    l0m = _record_map(_action_records(basis, op_0))
    scale = None
    for key, c in sorted(l0m.items()):
        if c and key in bra:
            scale = bra[key] / c
            break
    if scale is None:
        return None, not bra
    keys = set(bra) | set(l0m)
    exact = all(bra.get(k, _ZERO) == scale * l0m.get(k, _ZERO) for k in keys)
    return scale, exact
