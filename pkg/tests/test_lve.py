import itertools
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import joint, random_model_text
from ldjt import jtree, lve, oracle
from ldjt.model import (
    Constraint,
    GroundPRV,
    InconsistentEvidence,
    Logvar,
    Model,
    Parfactor,
    ground,
    ground_cardinalities,
    parse_model,
    parse_term,
)


def pf_named(m, name):
    return next(p for p in m.parfactors if p.name == name)


def ground_multiset(pfs):
    out = []
    for f in ground(Model(list(pfs))):
        order = np.argsort([repr(v) for v in f.vars])
        out.append((tuple(f.vars[i] for i in order), np.transpose(f.table, order).round(12).tobytes()))
    return sorted(out)


def test_shatter_user_x1(gex):
    g0 = pf_named(gex, "g0")
    parts = lve.shatter(g0, [parse_term("User(x1)", gex).atom()])
    assert len(parts) == 2
    cells = sorted(
        sorted(p.constraint.items[0][1]) if p.logvars else [a.params[0] for a in p.args if a.params][0:1]
        for p in parts
    )
    assert cells == [["x1"], ["x2", "x3"]]
    assert ground_multiset(parts) == ground_multiset([g0])


def test_shatter_identity(gex):
    g2 = pf_named(gex, "g2")
    assert lve.shatter(g2, []) == [g2]


def test_shatter_infects(gex):
    g2 = pf_named(gex, "g2")
    parts = lve.shatter(g2, [parse_term("Infects(x1,y1)", gex).atom()])
    assert sum(p.n_groundings() for p in parts) == 6
    assert ground_multiset(parts) == ground_multiset([g2])
    assert any(all(isinstance(x, str) for a in p.args for x in a.params) and len(p.args) == 3 for p in parts)


def test_shatter_rejects_bad_constant(gex):
    g0 = pf_named(gex, "g0")
    atom = parse_term("User(x1)", gex).atom()
    bad = atom.with_params(("x9",))
    with pytest.raises(ValueError):
        lve.shatter(g0, [bad])


def test_absorb_server(gex):
    g3 = pf_named(gex, "g3")
    res = lve.absorb_evidence(g3, {parse_term("Server", gex).atom(): "true"})
    assert [a.name for a in res.args] == ["User"]
    np.testing.assert_array_equal(res.table, g3.table[0])
    assert lve.absorb_evidence(g3, {}) is g3
    with pytest.raises(ValueError):
        lve.absorb_evidence(g3, {parse_term("Server", gex).atom(): "maybe"})


def test_absorb_user_x1_matches_oracle(gex):
    u1 = parse_term("User(x1)", gex)
    ev = {u1.atom(): "true"}
    cell = [p for p in lve.shatter(pf_named(gex, "g0"), ev) if not p.logvars][0]
    res = lve.absorb_evidence(cell, ev)
    assert [a.name for a in res.args] == ["Attack1"]
    pfs = lve.absorb_all(gex.parfactors, tuple(ev.items()))
    a1 = parse_term("Attack1", gex)
    np.testing.assert_allclose(lve.marginal(pfs, a1.atom()), oracle.oracle_marginal(gex, a1, {u1: "true"}).probs, atol=1e-12)


def test_multiply_identity(gex):
    g2 = pf_named(gex, "g2")
    ones = Parfactor(g2.scope, np.ones_like(g2.table))
    res = lve.multiply(g2, ones)
    assert joint([res])[1].tolist() == joint([g2])[1].tolist()


def test_multiply_g3_g4(gex):
    g3, g4 = pf_named(gex, "g3"), pf_named(gex, "g4")
    res = lve.multiply(g3, g4)
    assert sorted(a.name for a in res.args) == ["Admin", "Server", "User"]
    vars_, want = joint([g3, g4])
    _, got = joint([res], vars_)
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_multiply_commutes(gex):
    g2, g3 = pf_named(gex, "g2"), pf_named(gex, "g3")
    a, b = lve.multiply(g2, g3), lve.multiply(g3, g2)
    assert a.scope is b.scope
    np.testing.assert_allclose(a.table, b.table, rtol=1e-14)


def test_multiply_associative(gex):
    g2, g3, g4 = (pf_named(gex, n) for n in ("g2", "g3", "g4"))
    a = lve.multiply(lve.multiply(g2, g3), g4)
    b = lve.multiply(g2, lve.multiply(g3, g4))
    vars_, ja = joint([a])
    np.testing.assert_allclose(joint([b], vars_)[1], ja, rtol=1e-12)


def test_multiply_misaligned(gex):
    x = gex.logvars["X"]
    user = gex.prvs["User"]
    f = Parfactor.make((user,), np.ones(2), Constraint.of({x: ["x1", "x2"]}))
    g = Parfactor.make((user,), np.ones(2), Constraint.of({x: ["x2", "x3"]}))
    with pytest.raises(lve.LiftingError):
        lve.multiply(f, g)


def test_sum_out_exponent_law(gex):
    g0 = pf_named(gex, "g0")
    user = next(a for a in g0.args if a.name == "User")
    res = lve.sum_out(g0, user)
    np.testing.assert_allclose(res.table, g0.table.sum(axis=1) ** 3, rtol=1e-14)
    # same thing by eliminating the three ground variables one by one
    fs = ground(Model([g0]))
    cards = ground_cardinalities(Model([g0]))
    for c in ("x1", "x2", "x3"):
        fs = oracle.oracle_eliminate(fs, ("User", (c,), None), cards)
    prod = np.ones(2)
    for f in fs:
        prod = prod * f.table
    np.testing.assert_allclose(res.table, prod, rtol=1e-12)


def test_sum_out_exponent_one(gex):
    g2 = pf_named(gex, "g2")
    inf = next(a for a in g2.args if a.name == "Infects")
    res = lve.sum_out(g2, inf)
    assert [a.name for a in res.args] == ["Admin", "User"]
    np.testing.assert_allclose(res.table, g2.table.sum(axis=2).T, rtol=1e-14)
    vars_, want = joint([g2])
    keep = [i for i, v in enumerate(vars_) if v[0] != "Infects"]
    want = want.sum(axis=tuple(i for i in range(len(vars_)) if i not in keep))
    np.testing.assert_allclose(joint([res], [vars_[i] for i in keep])[1], want, rtol=1e-12)


def test_sum_out_not_liftable(gex):
    g0 = pf_named(gex, "g0")
    a1 = next(a for a in g0.args if a.name == "Attack1")
    with pytest.raises(lve.LiftingError):
        lve.sum_out(g0, a1)


def test_ground_eliminate_matches_sum_out(gex):
    g0 = pf_named(gex, "g0")
    user = next(a for a in g0.args if a.name == "User")
    lifted = lve.sum_out(g0, user)
    ground_res = lve.ground_eliminate([g0], user)
    np.testing.assert_allclose(joint(ground_res)[1], joint([lifted])[1], rtol=1e-12)


def test_ground_eliminate_parameterless(gex):
    g0 = pf_named(gex, "g0")
    a1 = next(a for a in g0.args if a.name == "Attack1")
    res = lve.ground_eliminate([g0], a1)
    vars_, want = joint([g0])
    want = want.sum(axis=[i for i, v in enumerate(vars_) if v[0] == "Attack1"][0])
    got = joint(res, [v for v in vars_ if v[0] != "Attack1"])[1]
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_ground_eliminate_admin(gex):
    g2, g4 = pf_named(gex, "g2"), pf_named(gex, "g4")
    admin = next(a for a in g4.args if a.name == "Admin")
    res = lve.ground_eliminate([g2, g4], admin)
    m = Model(res + [p for p in gex.parfactors if p.name in ("g0", "g1", "g3")])
    # g1 still mentions Admin, so compare P(Server) on the sub-model without it
    sub = Model([g2, g4, pf_named(gex, "g3")])
    s = parse_term("Server", gex)
    want = oracle.oracle_marginal(sub, s).probs
    got = lve.marginal(res + [pf_named(gex, "g3")], s.atom())
    np.testing.assert_allclose(got, want, atol=1e-12)
    assert m.parfactors


def test_normalize_msg(gex):
    g = Parfactor(pf_named(gex, "g3").scope, np.array([[2.0, 4.0], [1.0, 1.0]]))
    np.testing.assert_array_equal(lve.normalize_msg(g).table, [[0.5, 1.0], [0.25, 0.25]])
    one = lve.normalize_msg(g)
    np.testing.assert_array_equal(lve.normalize_msg(one).table, one.table)
    with pytest.raises(InconsistentEvidence):
        lve.normalize_msg(Parfactor(g.scope, np.zeros((2, 2))))


def test_normalization_does_not_change_answers(gex, monkeypatch):
    ev = {parse_term("Server", gex).atom(): "true"}
    queries = [parse_term(q, gex).atom() for q in ("User(x1)", "Attack1", "Attack2", "Infects(x1,y2)")]

    def run():
        j = jtree.construct_fojt(gex).instantiate()
        jtree.enter_evidence(j, ev)
        jtree.pass_messages(j)
        return [jtree.answer_query(j, q).probs for q in queries]

    a = run()
    monkeypatch.setattr(lve, "normalize_msg", lambda f: f)
    b = run()
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, atol=1e-12, rtol=0)


def test_plan_replay_matches_fresh_trace(gex):
    rng = np.random.default_rng(5)
    ev = {parse_term("Server", gex).atom(): "false"}
    q = parse_term("User(x2)", gex).atom()
    for _ in range(3):
        pfs = [Parfactor(p.scope, rng.uniform(0.1, 3, p.table.shape), p.name) for p in gex.parfactors]
        st = lve.Stats()
        replay = lve.marginal(lve.absorb_all(pfs, tuple(ev.items()), stats=st), q, stats=st)
        lve.PLAN_CACHE = False
        try:
            fresh = lve.marginal(lve.absorb_all(pfs, tuple(ev.items())), q)
        finally:
            lve.PLAN_CACHE = True
        want = oracle.oracle_marginal(Model(pfs), parse_term("User(x2)", gex), {parse_term("Server", gex): "false"}).probs
        np.testing.assert_array_equal(replay, fresh)
        np.testing.assert_allclose(replay, want, atol=1e-12)
    assert st.plan_hits >= 1


def test_neutral_parfactors_are_skipped(gex):
    g3 = pf_named(gex, "g3")
    neutral = Parfactor(g3.scope, np.full(g3.table.shape, 7.0), "n", neutral=True)
    s = parse_term("Server", gex).atom()
    np.testing.assert_allclose(lve.marginal([g3, neutral], s), lve.marginal([g3], s), rtol=1e-14)


# -- ground-semantics preservation on random models ---------------------------


def _shattered(seed):
    m = parse_model(random_model_text(random.Random(seed)))
    return m, lve.shatter_all(m.parfactors)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**9))
def test_shatter_all_preserves_semantics(seed):
    m, pfs = _shattered(seed)
    vars_, want = joint(m.parfactors)
    np.testing.assert_allclose(joint(pfs, vars_)[1], want, rtol=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**9))
def test_lifted_operators_preserve_semantics(seed):
    m, pfs = _shattered(seed)
    for f, g in itertools.combinations(pfs, 2):
        try:
            prod = lve.multiply(f, g)
        except lve.LiftingError:
            continue
        vars_, want = joint([f, g])
        np.testing.assert_allclose(joint([prod], vars_)[1], want, rtol=1e-10)
    for f in pfs:
        for a in f.args:
            try:
                res = lve.sum_out(f, a)
            except lve.LiftingError:
                continue
            vars_, want = joint([f])
            gone = [i for i, v in enumerate(vars_) if v not in ground_cardinalities(Model([res])) and v[0] == a.name]
            want = want.sum(axis=tuple(gone)) if gone else want
            rest = [v for i, v in enumerate(vars_) if i not in gone]
            np.testing.assert_allclose(joint([res], rest)[1], want, rtol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**9))
def test_elimination_matches_oracle(seed):
    rng = random.Random(seed)
    m = parse_model(random_model_text(rng))
    cards = ground_cardinalities(m)
    var = rng.choice(sorted(cards, key=repr))
    g = GroundPRV(m.prvs[var[0]], var[1])
    try:
        want = oracle.oracle_marginal(m, g).probs
    except oracle.OracleBoundError:
        want = oracle.oracle_ve_marginal(m, g).probs
    got = lve.marginal(m.parfactors, g.atom())
    np.testing.assert_allclose(got, want, atol=1e-10)
