from __future__ import annotations

from fractions import Fraction

import pytest

from gwvir.engine import Engine
from gwvir.errors import UnknownIdentity
from gwvir.identities import (IDENTITY_TAGS, IdentityContext, REGISTRY,
                              verify_identity)
from gwvir.series import TruncationPolicy
from gwvir.target import preset


def test_registry_covers_every_tag_once():
    assert len(IDENTITY_TAGS) == len(set(IDENTITY_TAGS)) == len(REGISTRY)
    expected = {
        "StringEq", "StringCorr1", "StringCorr2", "StringCorr3",
        "DilatonCorr1", "DilatonCorr2", "DilatonCorr3", "QuasiHomog",
        "EulerCorr1", "EulerCorr2", "EulerCorr3", "HoriL0", "TRR", "GenWDVV",
        "FRR", "StringRec", "SWDVV", "XXCorr", "QF1", "QF2", "WDVVRight",
        "L1Corr", "L1L0Corr", "QuadRel_i", "QuadRel_ii", "QuadRel_iii",
        "QuadForm", "Tilde1Corr", "TildeQuadForm", "PsiClosedForm1",
        "PsiClosedForm2",
    }
    assert set(IDENTITY_TAGS) == expected


def test_unknown_identity():
    with pytest.raises(UnknownIdentity):
        verify_identity(preset("point"), "NoSuchLemma", TruncationPolicy(2, 1, ()))


def test_full_registry_on_point(point_engine):
    policy = TruncationPolicy(4, 3, ())
    ctx = IdentityContext(point_engine, policy)
    for tag in IDENTITY_TAGS:
        findings = verify_identity(point_engine, tag, policy, ctx=ctx)
        assert findings, tag
        bad = [f for f in findings if f.status != "pass"]
        assert not bad, f"{tag}: {bad[:2]}"


def test_selected_tags_on_p1(p1_engine):
    policy = TruncationPolicy(3, 2, (2,))
    ctx = IdentityContext(p1_engine, policy)
    for tag in ("StringCorr3", "EulerCorr3", "TRR", "GenWDVV", "FRR", "SWDVV",
                "XXCorr", "L1L0Corr", "QuadForm", "TildeQuadForm",
                "PsiClosedForm2"):
        findings = verify_identity(p1_engine, tag, policy, ctx=ctx)
        assert all(f.status == "pass" for f in findings), tag


def test_selected_tags_on_p2_small(p2_engine):
    policy = TruncationPolicy(3, 2, (2,))
    ctx = IdentityContext(p2_engine, policy)
    for tag in ("TRR", "GenWDVV", "FRR", "StringRec", "XXCorr", "QF1", "QF2",
                "WDVVRight", "L1Corr", "QuadRel_ii", "Tilde1Corr"):
        findings = verify_identity(p2_engine, tag, policy, ctx=ctx)
        assert all(f.status == "pass" for f in findings), tag


def test_corrupted_c_matrix_located():
    base = preset("P2")
    c1 = [list(r) for r in base.c1_mat]
    c1[0][1] = Fraction(4)  # c1 = 3H perturbed to 4H on the identity row
    bad = type(base)(name="P2", classes=3, complex_dim=2, q=base.q, eta=base.eta,
                     cup=base.cup, c1_mat=tuple(tuple(r) for r in c1),
                     novikov_rank=1, c1_deg=(3,), divisors=base.divisors,
                     euler_char=3, c1_cdm1=base.c1_cdm1)
    engine = Engine(bad)
    policy = TruncationPolicy(3, 2, (1,))
    ctx = IdentityContext(engine, policy)
    findings = verify_identity(engine, "FRR", policy, ctx=ctx)
    bad_findings = [f for f in findings if f.status == "fail"]
    assert bad_findings
    first = bad_findings[0]
    assert first.monomial is not None and first.lhs != first.rhs
    # SWDVV stays green here by construction: contracting the generalized WDVV
    # tensor with any vector-field coefficients yields it identically, so it
    # cannot see the Chern matrix.  The quasi-homogeneity family does.
    swdvv = verify_identity(engine, "SWDVV", policy, ctx=ctx)
    assert all(f.status == "pass" for f in swdvv)


def test_findings_report_shape(point_engine):
    policy = TruncationPolicy(3, 2, ())
    findings = verify_identity(point_engine, "TRR", policy)
    for f in findings:
        assert f.tag == "TRR"
        assert f.status == "pass" and f.monomial is None
