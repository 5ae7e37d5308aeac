"""Machine-checkable registry of correlator identities.

Every tag evaluates both sides of one identity as truncated series over all
free index tuples (descendent levels up to the policy level bound minus one,
all class indices) and reports per-tuple pass/fail with the first failing
coefficient.  Vector-field slots inside double brackets are tensor
contractions: the field expands into its ttilde-weighted sum of derivative
slots under the same policy.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterator

from .engine import Engine
from .errors import UnknownIdentity
from .series import Monomial, TruncatedSeries, TruncationPolicy, VarId, series_mul
from .virasoro import (CorrContext, LinearTerm, apply_operator, build_operator,
                       coeff_A, coeff_B, dilaton_field, euler_field,
                       string_field, _psi_closed_form, _psi_generic)

_ZERO = Fraction(0)
_ONE = Fraction(1)

Check = tuple[tuple, TruncatedSeries, TruncatedSeries]
Checker = Callable[["IdentityContext"], Iterator[Check]]


@dataclass(frozen=True)
class IdentityFinding:
    tag: str
    indices: tuple
    status: str  # "pass" | "fail"
    monomial: str | None = None
    lhs: str | None = None
    rhs: str | None = None


def render_monomial(mon: Monomial) -> str:
    parts = [f"t({v.level},{v.cls})" + (f"^{e}" if e > 1 else "")
             for v, e in mon.exps]
    body = "*".join(parts) if parts else "1"
    if mon.degree and any(mon.degree):
        body += " q^" + ",".join(str(d) for d in mon.degree)
    return body


class IdentityContext(CorrContext):
    """CorrContext plus the vector fields and polynomial helpers the lemmas use."""

    def __init__(self, engine: Engine, policy: TruncationPolicy, idx_max: int | None = None):
        super().__init__(engine, policy)
        self.idx = policy.max_level - 1 if idx_max is None else idx_max
        if self.idx < 0:
            self.idx = 0
        self._fields: dict[str, tuple[LinearTerm, ...]] = {}

    # vector fields ---------------------------------------------------------

    def field(self, name: str) -> tuple[LinearTerm, ...]:
        if name not in self._fields:
            ts, M = self.ts, self.policy.max_level
            if name == "S":
                terms = string_field(ts, M)
            elif name == "D":
                terms = dilaton_field(ts, M)
            elif name == "X":
                terms = euler_field(ts, M)
            elif name == "Ltilde1":
                terms = tuple((VarId(m, a), VarId(m + 1, a), _ONE)
                              for m in range(M + 1) for a in range(1, ts.classes + 1))
            elif name.startswith("L"):
                terms = build_operator(ts, int(name[1:]), M).linear
            else:
                raise UnknownIdentity(name)
            self._fields[name] = terms
        return self._fields[name]

    def field_minus_kD(self, name: str, k: int) -> tuple[LinearTerm, ...]:
        """Terms of (field - k * D)."""
        acc: dict[tuple[VarId, VarId], Fraction] = {}
        for src, dst, c in self.field(name):
            acc[(src, dst)] = acc.get((src, dst), _ZERO) + c
        for src, dst, c in self.field("D"):
            acc[(src, dst)] = acc.get((src, dst), _ZERO) - k * c
        return tuple((s, d, c) for (s, d), c in sorted(acc.items()) if c)

    def field_raised(self, terms: tuple[LinearTerm, ...], sigma: int,
                     *slots: tuple[int, int]) -> TruncatedSeries:
        out = TruncatedSeries.zero(self.policy)
        for rho, coeff in self.ts.raised(sigma):
            out = out + self.field_series(terms, (0, rho), *slots).scale(coeff)
        return out

    # polynomial helpers ----------------------------------------------------

    def const(self, value: Fraction | int) -> TruncatedSeries:
        return TruncatedSeries.constant(self.policy, value)

    def tvar(self, level: int, cls: int) -> TruncatedSeries:
        return TruncatedSeries.variable(self.policy, VarId(level, cls))

    def ttilde(self, level: int, cls: int) -> TruncatedSeries:
        out = self.tvar(level, cls)
        if (level, cls) == (1, 1):
            out = out + self.const(-1)
        return out

    def zero(self) -> TruncatedSeries:
        return TruncatedSeries.zero(self.policy)

    def classes(self) -> range:
        return range(1, self.ts.classes + 1)

    def levels(self) -> range:
        return range(self.idx + 1)


def _eta_quad(ctx: IdentityContext, matrix) -> TruncatedSeries:
    """1/2 sum M_{ab} t^a_0 t^b_0."""
    out = ctx.zero()
    half = Fraction(1, 2)
    for a in ctx.classes():
        for b in ctx.classes():
            if matrix[a - 1][b - 1]:
                out = out + ctx.tvar(0, a).times_var(VarId(0, b)).scale(half * matrix[a - 1][b - 1])
    return out


# --- section 2 lemmas ---------------------------------------------------------

def _check_string_eq(ctx: IdentityContext):
    # Operator route: the L_{-1} residual against F_0 vanishes identically.
    policy = ctx.policy
    big = TruncationPolicy(policy.max_insertions + 1, policy.max_level, policy.max_degree)
    f0 = ctx.engine.correlation_series((), big)
    op = build_operator(ctx.ts, -1, policy.max_level)
    yield ((), apply_operator(op, f0, policy), ctx.zero())


def _check_hori_l0(ctx: IdentityContext):
    # Operator route for the L_0 constraint (genus-0 part; no constant).
    policy = ctx.policy
    big = TruncationPolicy(policy.max_insertions + 1, policy.max_level, policy.max_degree)
    f0 = ctx.engine.correlation_series((), big)
    op = build_operator(ctx.ts, 0, policy.max_level)
    yield ((), apply_operator(op, f0, policy), ctx.zero())


def _check_string_corr1(ctx: IdentityContext):
    yield ((), ctx.field_series(ctx.field("S")), _eta_quad(ctx, ctx.ts.eta))


def _check_string_corr2(ctx: IdentityContext):
    for m in ctx.levels():
        for a in ctx.classes():
            rhs = ctx.corr((m - 1, a))
            if m == 0:
                for b in ctx.classes():
                    if ctx.ts.eta[a - 1][b - 1]:
                        rhs = rhs + ctx.tvar(0, b).scale(ctx.ts.eta[a - 1][b - 1])
            yield ((m, a), ctx.field_series(ctx.field("S"), (m, a)), rhs)


def _check_string_corr3(ctx: IdentityContext):
    for m in ctx.levels():
        for a in ctx.classes():
            for n in ctx.levels():
                for b in ctx.classes():
                    rhs = ctx.corr((m, a), (n - 1, b)) + ctx.corr((m - 1, a), (n, b))
                    if m == 0 and n == 0:
                        rhs = rhs + ctx.const(ctx.ts.eta[a - 1][b - 1])
                    yield ((m, a, n, b),
                           ctx.field_series(ctx.field("S"), (m, a), (n, b)), rhs)


def _check_dilaton_corr1(ctx: IdentityContext):
    f0 = ctx.corr()
    yield ((), ctx.field_series(ctx.field("D")), f0.scale(-2))


def _check_dilaton_corr2(ctx: IdentityContext):
    for m in ctx.levels():
        for a in ctx.classes():
            yield ((m, a), ctx.field_series(ctx.field("D"), (m, a)),
                   ctx.corr((m, a)).scale(-1))


def _check_dilaton_corr3(ctx: IdentityContext):
    for m in ctx.levels():
        for a in ctx.classes():
            for n in ctx.levels():
                for b in ctx.classes():
                    yield ((m, a, n, b),
                           ctx.field_series(ctx.field("D"), (m, a), (n, b)), ctx.zero())


def _check_quasi_homog(ctx: IdentityContext):
    rhs = ctx.corr().scale(3 - ctx.ts.complex_dim) + _eta_quad(ctx, ctx.ts.chern_power_eta(1))
    yield ((), ctx.field_series(ctx.field("X")), rhs)


def _check_euler_corr1(ctx: IdentityContext):
    # Same statement as QuasiHomog, exercised through the tensor-slot route
    # with X recombined as -(L0 + (3-d)/2 D).
    shift = Fraction(3 - ctx.ts.complex_dim, 2)
    terms = ctx.field_minus_kD("L0", -shift)  # L0 + shift*D = -X
    lhs = ctx.field_series(terms).scale(-1)
    rhs = ctx.corr().scale(3 - ctx.ts.complex_dim) + _eta_quad(ctx, ctx.ts.chern_power_eta(1))
    yield ((), lhs, rhs)


def _check_euler_corr2(ctx: IdentityContext):
    ts = ctx.ts
    shift = Fraction(3 - ts.complex_dim, 2)
    ceta = ts.chern_power_eta(1)
    for m in ctx.levels():
        for a in ctx.classes():
            rhs = ctx.corr((m, a)).scale(m + ts.b[a - 1] + shift)
            for be in ctx.classes():
                c = ts.c1_mat[a - 1][be - 1]
                if c:
                    rhs = rhs + ctx.corr((m - 1, be)).scale(c)
            if m == 0:
                for be in ctx.classes():
                    if ceta[a - 1][be - 1]:
                        rhs = rhs + ctx.tvar(0, be).scale(ceta[a - 1][be - 1])
            yield ((m, a), ctx.field_series(ctx.field("X"), (m, a)), rhs)


def _check_euler_corr3(ctx: IdentityContext):
    ts = ctx.ts
    ceta = ts.chern_power_eta(1)
    for m in ctx.levels():
        for a in ctx.classes():
            for n in ctx.levels():
                for b in ctx.classes():
                    rhs = ctx.corr((m, a), (n, b)).scale(m + n + ts.b[a - 1] + ts.b[b - 1])
                    if m == 0 and n == 0:
                        rhs = rhs + ctx.const(ceta[a - 1][b - 1])
                    for g in ctx.classes():
                        c = ts.c1_mat[a - 1][g - 1]
                        if c:
                            rhs = rhs + ctx.corr((m - 1, g), (n, b)).scale(c)
                        c = ts.c1_mat[b - 1][g - 1]
                        if c:
                            rhs = rhs + ctx.corr((m, a), (n - 1, g)).scale(c)
                    yield ((m, a, n, b),
                           ctx.field_series(ctx.field("X"), (m, a), (n, b)), rhs)


# --- section 2.3: recursion relations ----------------------------------------

def _check_trr(ctx: IdentityContext):
    for m in range(1, ctx.idx + 1):
        for a in ctx.classes():
            for n in ctx.levels():
                for b in ctx.classes():
                    for k in ctx.levels():
                        for g in ctx.classes():
                            lhs = ctx.corr((m, a), (n, b), (k, g))
                            rhs = ctx.zero()
                            for s in ctx.classes():
                                rhs = rhs + series_mul(
                                    ctx.corr((m - 1, a), (0, s)),
                                    ctx.corr_raised(s, (n, b), (k, g)))
                            yield ((m, a, n, b, k, g), lhs, rhs)


def _check_gen_wdvv(ctx: IdentityContext):
    vids = [(m, a) for m in ctx.levels() for a in ctx.classes()]
    prods: dict[tuple, TruncatedSeries] = {}
    diffs: dict[tuple, TruncatedSeries] = {}
    zero = ctx.zero()

    def pairing(pp: tuple) -> TruncatedSeries:
        # pp = (pair1, pair2), both canonically sorted slot pairs.
        if pp not in prods:
            (p1, p2), acc = pp, ctx.zero()
            for s in ctx.classes():
                acc = acc + series_mul(ctx.corr(p1[0], p1[1], (0, s)),
                                       ctx.corr_raised(s, p2[0], p2[1]))
            prods[pp] = acc
        return prods[pp]

    def canon(a, b, c, d) -> tuple:
        p = (a, b) if a <= b else (b, a)
        q = (c, d) if c <= d else (d, c)
        return (p, q) if p <= q else (q, p)

    for u in vids:
        for v in vids:
            for w in vids:
                for x in vids:
                    kl = canon(u, v, w, x)
                    kr = canon(u, w, v, x)
                    if kl == kr:
                        yield ((*u, *v, *w, *x), zero, zero)
                        continue
                    dkey = (kl, kr) if kl <= kr else (kr, kl)
                    if dkey not in diffs:
                        diffs[dkey] = pairing(dkey[0]) - pairing(dkey[1])
                    if diffs[dkey].is_zero():
                        yield ((*u, *v, *w, *x), zero, zero)
                    else:
                        yield ((*u, *v, *w, *x), pairing(kl), pairing(kr))


def _check_frr(ctx: IdentityContext):
    ts = ctx.ts
    ceta = ts.chern_power_eta(1)
    mid: dict[tuple[int, int], TruncatedSeries] = {}
    for mu in ctx.classes():
        for nu in ctx.classes():
            m_series = ctx.corr((0, mu), (0, nu)).scale(ts.b[mu - 1] + ts.b[nu - 1])
            if ceta[mu - 1][nu - 1]:
                m_series = m_series + ctx.const(ceta[mu - 1][nu - 1])
            mid[(mu, nu)] = m_series
    for m in ctx.levels():
        for a in ctx.classes():
            for n in ctx.levels():
                for b in ctx.classes():
                    lhs = ctx.zero()
                    for mu in ctx.classes():
                        left = ctx.corr_raised(mu, (m - 1, a))
                        if m == 0:
                            left = left + ctx.const(1 if mu == a else 0)
                        if left.is_zero():
                            continue
                        for nu in ctx.classes():
                            right = ctx.corr_raised(nu, (n - 1, b))
                            if n == 0:
                                right = right + ctx.const(1 if nu == b else 0)
                            if right.is_zero():
                                continue
                            lhs = lhs + series_mul(series_mul(left, mid[(mu, nu)]), right)
                    rhs = ctx.corr((m, a), (n, b)).scale(m + n + ts.b[a - 1] + ts.b[b - 1])
                    if m == 0 and n == 0:
                        rhs = rhs + ctx.const(ceta[a - 1][b - 1])
                    for s in ctx.classes():
                        c = ts.c1_mat[a - 1][s - 1]
                        if c:
                            rhs = rhs + ctx.corr((m - 1, s), (n, b)).scale(c)
                        c = ts.c1_mat[b - 1][s - 1]
                        if c:
                            rhs = rhs + ctx.corr((m, a), (n - 1, s)).scale(c)
                    yield ((m, a, n, b), lhs, rhs)


def _check_string_rec(ctx: IdentityContext):
    for m in ctx.levels():
        for a in ctx.classes():
            for n in ctx.levels():
                for b in ctx.classes():
                    lhs = ctx.corr((m, a), (n - 1, b)) + ctx.corr((m - 1, a), (n, b))
                    rhs = ctx.zero()
                    if m == 0:
                        rhs = rhs + ctx.corr((0, a), (n - 1, b))
                    if n == 0:
                        rhs = rhs + ctx.corr((m - 1, a), (0, b))
                    for s in ctx.classes():
                        rhs = rhs + series_mul(ctx.corr((m - 1, a), (0, s)),
                                               ctx.corr_raised(s, (n - 1, b)))
                    yield ((m, a, n, b), lhs, rhs)


def _check_swdvv(ctx: IdentityContext):
    for n in (1, 2):
        ln = ctx.field(f"L{n}")
        l0d = ctx.field_minus_kD("L0", n + 1)
        left_factor = {s: ctx.field2_series(ln, l0d, (0, s)) for s in ctx.classes()}
        for k in ctx.levels():
            for mu in ctx.classes():
                ln_k = {s: ctx.field_series(ln, (k, mu), (0, s)) for s in ctx.classes()}
                for l in ctx.levels():
                    for nu in ctx.classes():
                        lhs = ctx.zero()
                        rhs = ctx.zero()
                        for s in ctx.classes():
                            lhs = lhs + series_mul(left_factor[s],
                                                   ctx.corr_raised(s, (k, mu), (l, nu)))
                            rhs = rhs + series_mul(ln_k[s],
                                                   ctx.field_raised(l0d, s, (l, nu)))
                        yield ((n, k, mu, l, nu), lhs, rhs)


# --- section 4 lemmas ---------------------------------------------------------

def _l0_l0d_rhs_fields(ctx: IdentityContext) -> tuple[LinearTerm, ...]:
    """The ttilde-weighted 2-point sums shared by the Lemma 4.1 right side."""
    ts = ctx.ts
    terms: list[LinearTerm] = []
    c2 = ts.chern_power(2)
    for n in range(ctx.policy.max_level + 1):
        for s in ctx.classes():
            b = ts.b[s - 1]
            terms.append((VarId(n, s), VarId(n, s), -(n + b) * (n + b + 1)))
            for r in ctx.classes():
                c = ts.c1_mat[s - 1][r - 1]
                if c and n >= 1:
                    terms.append((VarId(n, s), VarId(n - 1, r), -(2 * n + 2 * b + 1) * c))
                if c2[s - 1][r - 1] and n >= 2:
                    terms.append((VarId(n, s), VarId(n - 2, r), -c2[s - 1][r - 1]))
    return tuple(terms)


def _check_xx_corr(ctx: IdentityContext):
    ts = ctx.ts
    l0 = ctx.field("L0")
    l0d = ctx.field_minus_kD("L0", 1)
    ceta = ts.chern_power_eta(1)
    c2, c2eta = ts.chern_power(2), ts.chern_power_eta(2)
    tilde_part = _l0_l0d_rhs_fields(ctx)
    for m in ctx.levels():
        for a in ctx.classes():
            b = ts.b[a - 1]
            lhs = ctx.field2_series(l0, l0d, (m, a))
            rhs = ctx.field_series(tilde_part, (m, a))
            rhs = rhs + ctx.corr((m, a)).scale((m + b) * (m + b - 1))
            for s in ctx.classes():
                c = ts.c1_mat[a - 1][s - 1]
                if c:
                    rhs = rhs + ctx.corr((m - 1, s)).scale((b + ts.b[s - 1] + 2 * m - 2) * c)
                if c2[a - 1][s - 1]:
                    rhs = rhs + ctx.corr((m - 2, s)).scale(c2[a - 1][s - 1])
            if m == 0:
                for s in ctx.classes():
                    if ceta[a - 1][s - 1]:
                        rhs = rhs + ctx.tvar(0, s).scale((2 * b - 1) * ceta[a - 1][s - 1])
                    if c2eta[a - 1][s - 1]:
                        rhs = rhs - ctx.ttilde(1, s).scale(c2eta[a - 1][s - 1])
            if m == 1:
                for s in ctx.classes():
                    if c2eta[a - 1][s - 1]:
                        rhs = rhs + ctx.tvar(0, s).scale(c2eta[a - 1][s - 1])
            yield ((m, a), lhs, rhs)


def _check_qf1(ctx: IdentityContext):
    ts = ctx.ts
    for k in ctx.levels():
        for mu in ctx.classes():
            bm = ts.b[mu - 1]
            for l in ctx.levels():
                for nu in ctx.classes():
                    bn = ts.b[nu - 1]
                    gap = k + bm - l - bn
                    lhs = ctx.zero()
                    for a in ctx.classes():
                        w = ts.b[a - 1] * gap - (k + bm) * (l + bn + 1)
                        if w:
                            lhs = lhs + series_mul(ctx.corr((k, mu), (0, a)),
                                                   ctx.corr_raised(a, (l, nu))).scale(w)
                    rhs = ctx.zero()
                    for a in ctx.classes():
                        c = ts.c1_mat[nu - 1][a - 1]
                        if c:
                            rhs = rhs + ctx.corr((k, mu), (l, a)).scale(gap * c)
                        c = ts.c1_mat[mu - 1][a - 1]
                        if c:
                            rhs = rhs - ctx.corr((k, a), (l, nu)).scale(gap * c)
                    rhs = rhs - ctx.corr((k + 1, mu), (l, nu)).scale((k + bm) * (k + bm + 1))
                    rhs = rhs - ctx.corr((k, mu), (l + 1, nu)).scale((l + bn) * (l + bn + 1))
                    yield ((k, mu, l, nu), lhs, rhs)


def _check_qf2(ctx: IdentityContext):
    ts = ctx.ts
    c2, c2eta = ts.chern_power(2), ts.chern_power_eta(2)
    for k in ctx.levels():
        for mu in ctx.classes():
            bm = ts.b[mu - 1]
            for l in ctx.levels():
                for nu in ctx.classes():
                    bn = ts.b[nu - 1]
                    lhs = ctx.zero()
                    for a in ctx.classes():
                        for be in ctx.classes():
                            cnb = ts.c1_mat[nu - 1][be - 1]
                            if not cnb:
                                continue
                            w = (k + ts.b[a - 1] + bm) * cnb
                            if w:
                                lhs = lhs + series_mul(
                                    ctx.corr((k, mu), (0, a)),
                                    ctx.corr_raised(a, (l - 1, be))).scale(w)
                    for a in ctx.classes():
                        cma = ts.c1_mat[mu - 1][a - 1]
                        if not cma:
                            continue
                        for be in ctx.classes():
                            cnb = ts.c1_mat[nu - 1][be - 1]
                            if not cnb:
                                continue
                            for s in ctx.classes():
                                lhs = lhs + series_mul(
                                    ctx.corr((k - 1, a), (0, s)),
                                    ctx.corr_raised(s, (l - 1, be))).scale(cma * cnb)
                    rhs = ctx.zero()
                    for a in ctx.classes():
                        c = ts.c1_mat[nu - 1][a - 1]
                        if c:
                            rhs = rhs + ctx.corr((k, mu), (l, a)).scale(
                                (k + bm + l + bn + 1) * c)
                        if c2[nu - 1][a - 1]:
                            rhs = rhs + ctx.corr((k, mu), (l - 1, a)).scale(c2[nu - 1][a - 1])
                    for a in ctx.classes():
                        cma = ts.c1_mat[mu - 1][a - 1]
                        if not cma:
                            continue
                        for be in ctx.classes():
                            cnb = ts.c1_mat[nu - 1][be - 1]
                            if cnb:
                                rhs = rhs + ctx.corr((k - 1, a), (l, be)).scale(cma * cnb)
                    if k == 0:
                        for a in ctx.classes():
                            cma = ts.c1_mat[mu - 1][a - 1]
                            if not cma:
                                continue
                            for be in ctx.classes():
                                cnb = ts.c1_mat[nu - 1][be - 1]
                                if cnb:
                                    rhs = rhs - ctx.corr((0, a), (l - 1, be)).scale(cma * cnb)
                    if l == 0:
                        for a in ctx.classes():
                            c = ts.c1_mat[nu - 1][a - 1]
                            if c:
                                rhs = rhs - ctx.field_series(
                                    ctx.field("X"), (k, mu), (0, a)).scale(c)
                    if k == 0 and l == 0:
                        rhs = rhs + ctx.const(c2eta[mu - 1][nu - 1])
                    yield ((k, mu, l, nu), lhs, rhs)


def _check_wdvv_right(ctx: IdentityContext):
    ts = ctx.ts
    l0 = ctx.field("L0")
    l0d = ctx.field_minus_kD("L0", 1)
    c2, c2eta = ts.chern_power(2), ts.chern_power_eta(2)
    for k in ctx.levels():
        for mu in ctx.classes():
            bm = ts.b[mu - 1]
            for l in ctx.levels():
                for nu in ctx.classes():
                    bn = ts.b[nu - 1]
                    lhs = ctx.zero()
                    for a in ctx.classes():
                        lhs = lhs + series_mul(ctx.field_series(l0, (k, mu), (0, a)),
                                               ctx.field_raised(l0d, a, (l, nu)))
                    rhs = ctx.corr((k + 1, mu), (l, nu)).scale((k + bm) * (k + bm + 1))
                    rhs = rhs + ctx.corr((k, mu), (l + 1, nu)).scale((l + bn) * (l + bn + 1))
                    for a in ctx.classes():
                        c = ts.c1_mat[mu - 1][a - 1]
                        if c:
                            rhs = rhs + ctx.corr((k, a), (l, nu)).scale((2 * k + 2 * bm + 1) * c)
                        c = ts.c1_mat[nu - 1][a - 1]
                        if c:
                            rhs = rhs + ctx.corr((k, mu), (l, a)).scale((2 * l + 2 * bn + 1) * c)
                        if c2[mu - 1][a - 1]:
                            rhs = rhs + ctx.corr((k - 1, a), (l, nu)).scale(c2[mu - 1][a - 1])
                        if c2[nu - 1][a - 1]:
                            rhs = rhs + ctx.corr((k, mu), (l - 1, a)).scale(c2[nu - 1][a - 1])
                        w = ts.b[a - 1] * (1 - ts.b[a - 1])
                        if w:
                            rhs = rhs + series_mul(ctx.corr((k, mu), (0, a)),
                                                   ctx.corr_raised(a, (l, nu))).scale(w)
                    if k == 0 and l == 0:
                        rhs = rhs + ctx.const(c2eta[mu - 1][nu - 1])
                    yield ((k, mu, l, nu), lhs, rhs)


# --- section 5 lemmas ---------------------------------------------------------

def _check_l1_corr(ctx: IdentityContext):
    ts = ctx.ts
    l1 = ctx.field("L1")
    c2, c2eta = ts.chern_power(2), ts.chern_power_eta(2)
    for m in ctx.levels():
        for a in ctx.classes():
            ba = ts.b[a - 1]
            for n in ctx.levels():
                for be in ctx.classes():
                    bb = ts.b[be - 1]
                    lhs = ctx.field_series(l1, (m, a), (n, be))
                    rhs = ctx.corr((m + 1, a), (n, be)).scale(-(m + ba) * (m + ba + 1))
                    rhs = rhs - ctx.corr((m, a), (n + 1, be)).scale((n + bb) * (n + bb + 1))
                    for s in ctx.classes():
                        c = ts.c1_mat[a - 1][s - 1]
                        if c:
                            rhs = rhs - ctx.corr((m, s), (n, be)).scale((2 * m + 2 * ba + 1) * c)
                        c = ts.c1_mat[be - 1][s - 1]
                        if c:
                            rhs = rhs - ctx.corr((m, a), (n, s)).scale((2 * n + 2 * bb + 1) * c)
                        if c2[a - 1][s - 1]:
                            rhs = rhs - ctx.corr((m - 1, s), (n, be)).scale(c2[a - 1][s - 1])
                        if c2[be - 1][s - 1]:
                            rhs = rhs - ctx.corr((m, a), (n - 1, s)).scale(c2[be - 1][s - 1])
                        w = ts.b[s - 1] * (1 - ts.b[s - 1])
                        if w:
                            rhs = rhs - series_mul(ctx.corr((m, a), (n, be), (0, s)),
                                                   ctx.corr_raised(s)).scale(w)
                            rhs = rhs - series_mul(ctx.corr((m, a), (0, s)),
                                                   ctx.corr_raised(s, (n, be))).scale(w)
                    if m == 0 and n == 0:
                        rhs = rhs - ctx.const(c2eta[a - 1][be - 1])
                    yield ((m, a, n, be), lhs, rhs)


def _l1_l0_tilde_fields(ctx: IdentityContext) -> tuple[LinearTerm, ...]:
    """ttilde-weighted sums on the right side of the Lemma 5.2 display."""
    ts = ctx.ts
    c2, c3 = ts.chern_power(2), ts.chern_power(3)
    terms: list[LinearTerm] = []
    for m in range(ctx.policy.max_level + 1):
        for a in ctx.classes():
            b = ts.b[a - 1]
            terms.append((VarId(m, a), VarId(m + 1, a),
                          -(m + b) * (m + b + 1) * (m + b + 2)))
            for s in ctx.classes():
                c = ts.c1_mat[a - 1][s - 1]
                if c:
                    terms.append((VarId(m, a), VarId(m, s),
                                  -(3 * (m + b) ** 2 + 6 * (m + b) + 2) * c))
                if c2[a - 1][s - 1] and m >= 1:
                    terms.append((VarId(m, a), VarId(m - 1, s),
                                  -3 * (m + b + 1) * c2[a - 1][s - 1]))
                if c3[a - 1][s - 1] and m >= 2:
                    terms.append((VarId(m, a), VarId(m - 2, s), -c3[a - 1][s - 1]))
    return tuple(terms)


def _check_l1_l0_corr(ctx: IdentityContext):
    ts = ctx.ts
    l1 = ctx.field("L1")
    l0d2 = ctx.field_minus_kD("L0", 2)
    c1 = ts.c1_mat
    c2, c3 = ts.chern_power(2), ts.chern_power(3)
    ceta, c2eta, c3eta = (ts.chern_power_eta(1), ts.chern_power_eta(2),
                          ts.chern_power_eta(3))
    tilde_part = _l1_l0_tilde_fields(ctx)
    for n in ctx.levels():
        for be in ctx.classes():
            b = ts.b[be - 1]
            lhs = ctx.field2_series(l1, l0d2, (n, be))
            rhs = ctx.field_series(tilde_part, (n, be))
            rhs = rhs + ctx.corr((n + 1, be)).scale((n + b) * (n + b + 1) * (n + b - 1))
            for s in ctx.classes():
                if c1[be - 1][s - 1]:
                    rhs = rhs + ctx.corr((n, s)).scale(
                        (3 * (n + b) ** 2 - 1) * c1[be - 1][s - 1])
                if c2[be - 1][s - 1]:
                    rhs = rhs + ctx.corr((n - 1, s)).scale(3 * (n + b) * c2[be - 1][s - 1])
                if c3[be - 1][s - 1]:
                    rhs = rhs + ctx.corr((n - 2, s)).scale(c3[be - 1][s - 1])
            for s in ctx.classes():
                bs = ts.b[s - 1]
                w = (bs - 1) * bs * (n + b - 1)
                if w:
                    rhs = rhs - series_mul(ctx.corr_raised(s),
                                           ctx.corr((0, s), (n, be))).scale(w)
                if (bs - 1) * bs:
                    for r in ctx.classes():
                        c = c1[be - 1][r - 1]
                        if c:
                            rhs = rhs - series_mul(ctx.corr((n - 1, r), (0, s)),
                                                   ctx.corr_raised(s)).scale((bs - 1) * bs * c)
            if n == 0:
                for s in ctx.classes():
                    if ceta[be - 1][s - 1]:
                        rhs = rhs - ctx.corr_raised(s).scale(b * (b + 1) * ceta[be - 1][s - 1])
                    if c2eta[be - 1][s - 1]:
                        rhs = rhs + ctx.tvar(0, s).scale(3 * b * c2eta[be - 1][s - 1])
                    if c3eta[be - 1][s - 1]:
                        rhs = rhs - ctx.ttilde(1, s).scale(c3eta[be - 1][s - 1])
            if n == 1:
                for s in ctx.classes():
                    if c3eta[be - 1][s - 1]:
                        rhs = rhs + ctx.tvar(0, s).scale(c3eta[be - 1][s - 1])
            yield ((n, be), lhs, rhs)


def _check_quadrel_i(ctx: IdentityContext):
    x = ctx.field("X")
    for k in ctx.levels():
        for mu in ctx.classes():
            for l in ctx.levels():
                for nu in ctx.classes():
                    lhs = ctx.zero()
                    rhs = ctx.zero()
                    for be in ctx.classes():
                        lhs = lhs + series_mul(ctx.field_series(x, (k, mu), (1, be)),
                                               ctx.field_raised(x, be, (l, nu)))
                        rhs = rhs + series_mul(ctx.field_raised(x, be, (k, mu)),
                                               ctx.field_series(x, (1, be), (l, nu)))
                    yield ((k, mu, l, nu), lhs, rhs)


def _check_quadrel_ii(ctx: IdentityContext):
    x = ctx.field("X")
    for k in ctx.levels():
        for mu in ctx.classes():
            for l in ctx.levels():
                for nu in ctx.classes():
                    lhs = ctx.zero()
                    rhs = ctx.zero()
                    for be in ctx.classes():
                        lhs = lhs + series_mul(ctx.corr_raised(be, (k - 1, mu)),
                                               ctx.field_series(x, (1, be), (l, nu)))
                        rhs = rhs + series_mul(ctx.corr((k - 1, mu), (1, be)),
                                               ctx.field_raised(x, be, (l, nu)))
                    rhs = rhs + ctx.field_series(x, (k + 1, mu), (l, nu))
                    if k == 0:
                        rhs = rhs - ctx.field_series(x, (1, mu), (l, nu))
                    yield ((k, mu, l, nu), lhs, rhs)


def _check_quadrel_iii(ctx: IdentityContext):
    for k in ctx.levels():
        for mu in ctx.classes():
            for l in ctx.levels():
                for nu in ctx.classes():
                    lhs = ctx.zero()
                    rhs = ctx.zero()
                    for be in ctx.classes():
                        lhs = lhs + series_mul(ctx.corr_raised(be, (k, mu)),
                                               ctx.corr((1, be), (l, nu)))
                        rhs = rhs + series_mul(ctx.corr((k, mu), (1, be)),
                                               ctx.corr_raised(be, (l, nu)))
                    rhs = rhs + ctx.corr((k + 2, mu), (l, nu))
                    rhs = rhs - ctx.corr((k, mu), (l + 2, nu))
                    yield ((k, mu, l, nu), lhs, rhs)


def _check_quad_form(ctx: IdentityContext):
    ts = ctx.ts
    ceta = ts.chern_power_eta(1)
    c2 = ts.chern_power(2)
    for k in ctx.levels():
        for mu in ctx.classes():
            bm = ts.b[mu - 1]
            for l in ctx.levels():
                for nu in ctx.classes():
                    bn = ts.b[nu - 1]
                    lhs = ctx.zero()
                    for be in ctx.classes():
                        bb = ts.b[be - 1]
                        if bb * (bb + 1):
                            lhs = lhs + series_mul(
                                ctx.corr((k, mu), (1, be)),
                                ctx.corr_raised(be, (l, nu))).scale(bb * (bb + 1))
                        if bb * (1 - bb):
                            lhs = lhs + series_mul(
                                ctx.corr_raised(be, (k, mu)),
                                ctx.corr((1, be), (l, nu))).scale(bb * (1 - bb))
                    for a in ctx.classes():
                        for be in ctx.classes():
                            c = ceta[a - 1][be - 1]
                            if c:
                                lhs = lhs + series_mul(
                                    ctx.corr_raised(a, (k, mu)),
                                    ctx.corr_raised(be, (l, nu))).scale(
                                        (2 * ts.b[be - 1] + 1) * c)
                    rhs = ctx.corr((k + 2, mu), (l, nu)).scale(-(k + bm) * (k + bm + 1))
                    rhs = rhs + ctx.corr((k, mu), (l + 2, nu)).scale(
                        (l + bn + 1) * (l + bn + 2))
                    for a in ctx.classes():
                        c = ts.c1_mat[mu - 1][a - 1]
                        if c:
                            rhs = rhs - ctx.corr((k + 1, a), (l, nu)).scale(
                                (2 * k + 2 * bm + 1) * c)
                        c = ts.c1_mat[nu - 1][a - 1]
                        if c:
                            rhs = rhs + ctx.corr((k, mu), (l + 1, a)).scale(
                                (2 * l + 2 * bn + 3) * c)
                        if c2[mu - 1][a - 1]:
                            rhs = rhs - ctx.corr((k, a), (l, nu)).scale(c2[mu - 1][a - 1])
                        if c2[nu - 1][a - 1]:
                            rhs = rhs + ctx.corr((k, mu), (l, a)).scale(c2[nu - 1][a - 1])
                    yield ((k, mu, l, nu), lhs, rhs)


# --- section 6 lemmas ---------------------------------------------------------

def _check_tilde1_corr(ctx: IdentityContext):
    lt1 = ctx.field("Ltilde1")
    for m in ctx.levels():
        for a in ctx.classes():
            rhs = ctx.corr((m + 1, a)).scale(-1)
            for s in ctx.classes():
                rhs = rhs + series_mul(ctx.corr((m, a), (0, s)), ctx.corr_raised(s))
            yield ((m, a), ctx.field_series(lt1, (m, a)), rhs)
    for m in ctx.levels():
        for a in ctx.classes():
            for n in ctx.levels():
                for b in ctx.classes():
                    rhs = ctx.zero()
                    for s in ctx.classes():
                        rhs = rhs + series_mul(ctx.corr((m, a), (n, b), (0, s)),
                                               ctx.corr_raised(s))
                    yield ((m, a, n, b), ctx.field_series(lt1, (m, a), (n, b)), rhs)


def _check_tilde_quad_form(ctx: IdentityContext):
    ts = ctx.ts
    for m in ctx.levels():
        for a in ctx.classes():
            ba = ts.b[a - 1]
            for n in ctx.levels():
                for be in ctx.classes():
                    bb = ts.b[be - 1]
                    lhs = ctx.zero()
                    for s in ctx.classes():
                        bs = ts.b[s - 1]
                        if bs:
                            lhs = lhs + series_mul(ctx.corr_raised(s, (m, a)),
                                                   ctx.corr((1, s), (n, be))).scale(bs)
                            lhs = lhs + series_mul(ctx.corr((m, a), (1, s)),
                                                   ctx.corr_raised(s, (n, be))).scale(bs)
                    rhs = ctx.corr((m + 2, a), (n, be)).scale(m + ba + 1)
                    rhs = rhs + ctx.corr((m, a), (n + 2, be)).scale(n + bb + 1)
                    for s in ctx.classes():
                        c = ts.c1_mat[a - 1][s - 1]
                        if c:
                            rhs = rhs + ctx.corr((m + 1, s), (n, be)).scale(c)
                        c = ts.c1_mat[be - 1][s - 1]
                        if c:
                            rhs = rhs + ctx.corr((m, a), (n + 1, s)).scale(c)
                    for s in ctx.classes():
                        for r in ctx.classes():
                            c = ts.c1_mat[s - 1][r - 1]
                            if c:
                                rhs = rhs - series_mul(
                                    ctx.corr_raised(s, (m, a)),
                                    ctx.corr((0, r), (n, be))).scale(c)
                    yield ((m, a, n, be), lhs, rhs)


# --- closed-form coefficient agreement ----------------------------------------

def _check_psi_closed_form(ctx: IdentityContext, n: int):
    ts = ctx.ts
    for a in ctx.classes():
        b = ts.b[a - 1]
        for m in range(ctx.idx + 3):
            if n == 1:
                closed = {
                    (0,): (m + b) * (m + b + 1),
                    (1,): 2 * m + 2 * b + 1,
                    (2,): _ONE,
                }
            else:
                closed = {
                    (0,): (m + b) * (m + b + 1) * (m + b + 2),
                    (1,): 3 * (m + b) ** 2 + 6 * (m + b) + 2,
                    (2,): 3 * (m + b + 1),
                    (3,): _ONE,
                }
            for (j,), expect in closed.items():
                got = coeff_A(b, j, m, n)
                yield ((a, m, "A", j), ctx.const(got), ctx.const(expect))
        if n == 1:
            quads = {(0, 0): b * (1 - b)}
        else:
            quads = {
                (0, 0): -(b - 1) * b * (b + 1),
                (0, 1): (b - 2) * (b - 1) * b,
                (1, 0): -(3 * b * b - 1),
            }
        for (j, k), expect in quads.items():
            got = coeff_B(b, j, k, n)
            yield ((a, "B", j, k), ctx.const(got), ctx.const(expect))
    yield (("series", n), _psi_generic(ctx, n), _psi_closed_form(ctx, n))


def _check_psi_closed_form1(ctx: IdentityContext):
    yield from _check_psi_closed_form(ctx, 1)


def _check_psi_closed_form2(ctx: IdentityContext):
    yield from _check_psi_closed_form(ctx, 2)


REGISTRY: dict[str, Checker] = {
    "StringEq": _check_string_eq,
    "StringCorr1": _check_string_corr1,
    "StringCorr2": _check_string_corr2,
    "StringCorr3": _check_string_corr3,
    "DilatonCorr1": _check_dilaton_corr1,
    "DilatonCorr2": _check_dilaton_corr2,
    "DilatonCorr3": _check_dilaton_corr3,
    "QuasiHomog": _check_quasi_homog,
    "EulerCorr1": _check_euler_corr1,
    "EulerCorr2": _check_euler_corr2,
    "EulerCorr3": _check_euler_corr3,
    "HoriL0": _check_hori_l0,
    "TRR": _check_trr,
    "GenWDVV": _check_gen_wdvv,
    "FRR": _check_frr,
    "StringRec": _check_string_rec,
    "SWDVV": _check_swdvv,
    "XXCorr": _check_xx_corr,
    "QF1": _check_qf1,
    "QF2": _check_qf2,
    "WDVVRight": _check_wdvv_right,
    "L1Corr": _check_l1_corr,
    "L1L0Corr": _check_l1_l0_corr,
    "QuadRel_i": _check_quadrel_i,
    "QuadRel_ii": _check_quadrel_ii,
    "QuadRel_iii": _check_quadrel_iii,
    "QuadForm": _check_quad_form,
    "Tilde1Corr": _check_tilde1_corr,
    "TildeQuadForm": _check_tilde_quad_form,
    "PsiClosedForm1": _check_psi_closed_form1,
    "PsiClosedForm2": _check_psi_closed_form2,
}

IDENTITY_TAGS = tuple(REGISTRY)


def verify_identity(ts_or_engine, tag: str, policy: TruncationPolicy,
                    backend=None, cache=None, idx_max: int | None = None,
                    ctx: IdentityContext | None = None) -> list[IdentityFinding]:
    """Evaluate one tagged identity over all index tuples; exact comparison."""
    if tag not in REGISTRY:
        raise UnknownIdentity(f"unknown identity tag {tag!r}")
    if ctx is None:
        engine = ts_or_engine if isinstance(ts_or_engine, Engine) \
            else Engine(ts_or_engine, backend, cache)
        ctx = IdentityContext(engine, policy, idx_max)
    findings: list[IdentityFinding] = []
    for indices, lhs, rhs in REGISTRY[tag](ctx):
        diff = lhs - rhs
        if diff.is_zero():
            findings.append(IdentityFinding(tag, indices, "pass"))
        else:
            mon, _ = diff.items_sorted()[0]
            findings.append(IdentityFinding(
                tag, indices, "fail", render_monomial(mon),
                str(lhs.coefficient(mon)), str(rhs.coefficient(mon))))
    return findings
