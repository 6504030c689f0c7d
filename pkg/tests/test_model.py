import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_model_text
from ldjt.model import (
    Constraint,
    DynamicModel,
    Evidence,
    GroundPRV,
    InconsistentEvidence,
    Logvar,
    Model,
    ModelError,
    ModelSyntaxError,
    Parfactor,
    PRV,
    TemporalQuery,
    format_model,
    ground,
    ground_cardinalities,
    parse_model,
    parse_term,
    unroll,
)


def test_gex_vocabulary(gex):
    cards = ground_cardinalities(gex)
    assert len(cards) == 14
    assert len(ground(gex)) == 16
    assert [pf.name for pf in gex.parfactors] == ["g0", "g1", "g2", "g3", "g4"]


def test_dynamic_fixture(gex_dyn):
    assert isinstance(gex_dyn, DynamicModel)
    assert [str(p) for p in gex_dyn.interface] == ["Admin(Y)@-1", "User(X)@-1"]
    assert len(gex_dyn.step_parfactors()) == 7
    assert len(unroll(gex_dyn, 1).parfactors) == 12
    assert len(ground_cardinalities(unroll(gex_dyn, 5))) == 84


def test_unroll_uses_absolute_times(gex_dyn):
    m = unroll(gex_dyn, 3)
    times = {a.time for pf in m.parfactors for a in pf.args}
    assert times == {0, 1, 2, 3}
    with pytest.raises(ModelError):
        unroll(gex_dyn, -1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**9), st.booleans())
def test_format_round_trip(seed, dynamic):
    text = random_model_text(random.Random(seed), dynamic=dynamic)
    m = parse_model(text)
    again = parse_model(format_model(m))
    assert format_model(again) == format_model(m)
    a = m.g0.parfactors + m.transition.parfactors if dynamic else m.parfactors
    b = again.g0.parfactors + again.transition.parfactors if dynamic else again.parfactors
    for p, q in zip(a, b):
        assert p.args == q.args and p.constraint == q.constraint
        np.testing.assert_array_equal(p.table, q.table)


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("", "empty model"),
        ("domain X = {a}\nprv P(X) : {t}\n", "at least two"),
        ("domain X = {a}\nprv P(Z) : {t, f}\n", "undeclared logvar"),
        ("prv P : {t, f}\nparfactor g (P) { t=1 }\n", "incomplete"),
        ("prv P : {t, f}\nparfactor g (P) { t=1; t=2; f=1 }\n", "twice"),
        ("prv P : {t, f}\nparfactor g (Q) { t=1; f=1 }\n", "undeclared PRV"),
        ("prv P : {t, f}\nparfactor g (P) { t=-1; f=1 }\n", "non-negative"),
        ("domain X = {a, b}\nprv P(X) : {t, f}\nparfactor g (P(X)) | (X) in {a} { t=1; f=1 }\n", "non-Cartesian"),
        ("domain X = {a, b}\nprv P(X) : {t, f}\nparfactor g (P(X)) | X in {c} { t=1; f=1 }\n", "outside the domain"),
        ("prv P : {t, f}\n[g0]\nparfactor g (P) { t=1; f=1 }\n", "non-empty"),
        ("prv P : {t, f}\n[g0]\nparfactor g (P@t-1) { t=1; f=1 }\n[g->]\nparfactor h (P@t) { t=1; f=1 }\n", "@0"),
    ],
)
def test_syntax_errors(text, fragment):
    with pytest.raises(ModelSyntaxError) as exc:
        parse_model(text)
    assert fragment in str(exc.value)
    assert exc.value.line >= 1


def test_missing_inter_slice_rejected():
    text = "prv P : {t, f}\n[g0]\nparfactor g (P) { t=1; f=1 }\n[g->]\nparfactor h (P@t) { t=1; f=1 }\n"
    with pytest.raises(ModelSyntaxError, match="inter-slice"):
        parse_model(text)


def test_constraint_and_parfactor_validation():
    x = Logvar("X", ("a", "b", "c"))
    with pytest.raises(ModelError):
        Constraint.of({x: ["z"]})
    c = Constraint.of({x: ["a", "b"]})
    assert c.count() == 2 and x in c and not c.is_top()
    p = PRV("P", (x,), ("t", "f"))
    with pytest.raises(ModelError):
        Parfactor.make((p,), np.ones(3))
    with pytest.raises(ModelError):
        PRV("P", (x, x), ("t", "f"))
    with pytest.raises(ModelError):
        PRV("P", (x,), ("t",))
    pf = Parfactor.make((p,), np.array([1.0, 2.0]), c)
    assert pf.n_groundings() == 2


def test_evidence_conflicts(gex):
    e = Evidence()
    s = parse_term("Server", gex)
    e.add(3, s, "true")
    e.add(3, s, "true")
    with pytest.raises(InconsistentEvidence):
        e.add(3, s, "false")
    with pytest.raises(ModelError):
        e.add(3, s, "maybe")
    assert e.steps() == [3] and len(e.upto(2)) == 0


def test_terms_and_queries(gex):
    g = parse_term("Infects(x2, y1)", gex)
    assert str(g) == "Infects(x2,y1)"
    with pytest.raises(ModelError):
        parse_term("User(x9)", gex)
    with pytest.raises(ModelError):
        parse_term("Nope", gex)
    assert TemporalQuery(g, 3, 3).kind == "filtering"
    assert TemporalQuery(g, 5, 3).kind == "prediction"
    assert TemporalQuery(g, 1, 3).kind == "smoothing"
    assert isinstance(GroundPRV(g.prv, ("x1", "y2")).atom(0), PRV)


def test_ground_dedupes_repeated_variables():
    x = Logvar("X", ("a", "b"))
    x2 = Logvar("X2", ("a", "b"))
    p = PRV("P", (x,), ("t", "f"))
    pf = Parfactor.make((p, p.with_params((x2,))), np.arange(1.0, 5.0).reshape(2, 2))
    m = Model([pf])
    fs = ground(m)
    diag = [f for f in fs if len(f.vars) == 1]
    assert len(diag) == 2
    np.testing.assert_array_equal(diag[0].table, [1.0, 4.0])
