import random
from pathlib import Path

import numpy as np
import pytest

from conftest import random_model_text
from ldjt import jtree, lve, oracle
from ldjt.model import (
    InconsistentEvidence,
    Model,
    Parfactor,
    ground_cardinalities,
    parse_model,
    parse_term,
)

GOLDEN = Path(__file__).parent / "golden"

CHAIN = """
prv A : {on, off}
[g0]
parfactor p (A) { on=1; off=2 }
[g->]
parfactor t (A@t-1, A@t) { (on,on)=3; (on,off)=1; (off,on)=1; (off,off)=3 }
"""


def fams(j):
    return sorted(sorted(f"{k[0]}@{k[1]}" for k in n.keys) for n in j.nodes)


def all_local(j):
    return [p for n in j.nodes for p in n.local]


@pytest.mark.parametrize(
    "fixture, which, golden",
    [
        ("gex", None, "gex_fojt.txt"),
        ("gex_dyn", "j0", "gex_j0.txt"),
        ("gex_dyn", "jt", "gex_jt.txt"),
        ("hmm", "jt", "hmm_jt.txt"),
    ],
)
def test_golden_exports(request, fixture, which, golden):
    m = request.getfixturevalue(fixture)
    if which is None:
        text = jtree.export(jtree.construct_fojt(m), "gex")
    else:
        tpl = jtree.construct_dynamic(m)
        title = {"gex_j0.txt": "gex J0", "gex_jt.txt": "gex Jt", "hmm_jt.txt": "hmm Jt"}[golden]
        text = jtree.export(getattr(tpl, which), title)
    assert text == (GOLDEN / golden).read_text()


def test_static_shape(gex):
    j = jtree.construct_fojt(gex)
    assert fams(j) == [
        ["Admin@None", "Attack2@None"],
        ["Admin@None", "Infects@None", "Server@None", "User@None"],
        ["Attack1@None", "User@None"],
    ]
    center = next(n for n in j.nodes if len(n.prvs) == 4)
    assert sorted(len(j.separator(a, b)) for a, b in j.edges) == [1, 1]
    assert all(center.id in e for e in j.edges)
    assert jtree.check_properties(j, gex.parfactors) == []


def test_dynamic_shape(gex_dyn):
    tpl = jtree.construct_dynamic(gex_dyn)
    jt = tpl.jt
    assert len(jt.nodes) == 5
    assert {str(p) for p in tpl.interface} == {"User(X)@-1", "Admin(Y)@-1"}
    assert jt.in_cluster.keys == {("User", -1), ("User", 0), ("Admin", -1)}
    assert jt.out_cluster.keys == {("Server", 0), ("User", 0), ("Admin", -1), ("Admin", 0)}
    assert sorted(jt.in_cluster.local_names) == ["gI_prev", "gU"]
    assert sorted(jt.out_cluster.local_names) == ["g3", "g4", "gA", "gI"]
    assert jtree.check_properties(jt, all_local(jt)) == []
    j0 = tpl.j0
    assert len(j0.nodes) == 3
    both = [n for n in j0.nodes if n.label == jtree.BOTH]
    assert len(both) == 1 and "gI_0" in both[0].local_names and len(both[0].prvs) == 4
    assert jtree.check_properties(j0, all_local(j0)) == []


def test_interface_of_chain():
    d = parse_model(CHAIN)
    assert [str(p) for p in jtree.identify_interface(d)] == ["A@-1"]
    tpl = jtree.construct_dynamic(d)
    assert len(tpl.jt.nodes) == 1 and tpl.jt.nodes[0].label == jtree.BOTH


def test_single_parfactor_model():
    m = parse_model("prv A : {a, b}\nparfactor f (A) { a=1; b=3 }\n")
    j = jtree.construct_fojt(m)
    assert len(j.nodes) == 1 and j.edges == []
    inst = j.instantiate()
    assert jtree.pass_messages(inst) == 0
    np.testing.assert_allclose(jtree.answer_query(inst, m.parfactors[0].args[0]).probs, [0.25, 0.75])


@pytest.mark.parametrize("seed", range(20))
def test_random_models_satisfy_jtree_properties(seed):
    m = parse_model(random_model_text(random.Random(seed), max_pfs=6))
    j = jtree.construct_fojt(m)
    assert jtree.check_properties(j, m.parfactors) == []
    d = parse_model(random_model_text(random.Random(1000 + seed), max_pfs=6, dynamic=True))
    tpl = jtree.construct_dynamic(d)
    for t in (tpl.j0, tpl.jt):
        assert jtree.check_properties(t, all_local(t)) == []
    assert tpl.jt.in_cluster is not None and tpl.jt.out_cluster is not None


def test_message_counts(gex):
    j = jtree.construct_fojt(gex).instantiate()
    st = lve.Stats()
    center = next(n.id for n in j.nodes if len(n.prvs) == 4)
    assert jtree.pass_messages(j, root=center, inbound_only=True, stats=st) == 2
    assert set(j.messages) == {(0, center), (1, center)}
    assert jtree.pass_messages(j, root=center, stats=st) == 2
    assert st.messages == 4 == 2 * (len(j.nodes) - 1)
    assert jtree.is_calibrated(j)
    fresh = jtree.construct_fojt(gex).instantiate()
    assert jtree.pass_messages(fresh) == 2 * (len(fresh.nodes) - 1)


def _calibrated(gex, ev=None):
    j = jtree.construct_fojt(gex).instantiate()
    jtree.enter_evidence(j, ev or {parse_term("Server", gex).atom(): "true"})
    jtree.pass_messages(j)
    return j


def test_calibration_across_separators(gex):
    j = _calibrated(gex)
    for a, b in j.edges:
        sep = j.separator(a, b)
        sides = []
        for i in (a, b):
            pfs = j.factors(i) + [j.messages[(u, i)] for u in j.adj[i] if j.messages[(u, i)] is not None]
            sides.append(lve.eliminate(pfs, sep))
        x, y = sides
        assert x.scope is y.scope
        ratio = x.table / y.table
        np.testing.assert_allclose(ratio / ratio.flat[0], 1.0, atol=1e-9)


def test_query_location_independence(gex):
    j = _calibrated(gex)
    for q in ("User(x1)", "Admin(y2)"):
        atom = parse_term(q, gex).atom()
        answers = [jtree.answer_query(j, atom, cluster=n.id).probs for n in j.nodes if atom.key in n.keys]
        assert len(answers) == 2
        np.testing.assert_allclose(answers[0], answers[1], atol=1e-12, rtol=0)


def test_answers_match_oracle(gex):
    s = parse_term("Server", gex)
    j = _calibrated(gex)
    for var in ground_cardinalities(gex):
        g = parse_term(var[0] + (f"({','.join(var[1])})" if var[1] else ""), gex)
        want = oracle.oracle_marginal(gex, g, {s: "true"}).probs
        np.testing.assert_allclose(jtree.answer_query(j, g.atom()).probs, want, atol=1e-9)


def test_answer_attack1_at_its_cluster(gex):
    j = _calibrated(gex)
    atom = parse_term("Attack1", gex).atom()
    assert jtree.cluster_for(j, atom).keys == {("Attack1", None), ("User", None)}
    with pytest.raises(KeyError):
        jtree.answer_query(jtree.construct_fojt(Model([gex.parfactors[0]])).instantiate(), parse_term("Server", gex).atom())


def test_uniform_potentials(gex):
    pfs = [Parfactor(p.scope, np.ones(p.table.shape), p.name) for p in gex.parfactors]
    j = jtree.construct_fojt(Model(pfs)).instantiate()
    jtree.pass_messages(j)
    for q in ("User(x3)", "Attack2", "Infects(x1,y1)"):
        np.testing.assert_allclose(jtree.answer_query(j, parse_term(q, gex).atom()).probs, [0.5, 0.5], atol=1e-12)


def test_evidence_order_does_not_matter(gex):
    s = parse_term("Server", gex).atom()
    u = parse_term("User(x2)", gex).atom()
    a = jtree.construct_fojt(gex).instantiate()
    jtree.enter_evidence(a, {s: "true", u: "false"})
    b = jtree.construct_fojt(gex).instantiate()
    jtree.enter_evidence(b, {u: "false"})
    jtree.pass_messages(b)
    jtree.enter_evidence(b, {s: "true"})
    assert b.messages == {}
    for j in (a, b):
        jtree.pass_messages(j)
    for q in ("User(x1)", "Attack1", "Infects(x2,y2)", "User(x2)"):
        atom = parse_term(q, gex).atom()
        np.testing.assert_allclose(jtree.answer_query(a, atom).probs, jtree.answer_query(b, atom).probs, atol=1e-12)
    np.testing.assert_array_equal(jtree.answer_query(a, u).probs, [0.0, 1.0])


def test_evidence_errors_and_empty(gex):
    j = _calibrated(gex)
    assert j.messages
    jtree.enter_evidence(j, {})
    assert j.messages == {}
    with pytest.raises(InconsistentEvidence):
        jtree.enter_evidence(j, {parse_term("Server", gex).atom(): "false"})


def test_inserting_a_message_invalidates_only_outward(gex_dyn):
    jt = jtree.construct_dynamic(gex_dyn).jt.instantiate(1)
    n = jtree.pass_messages(jt)
    assert n == 2 * (len(jt.nodes) - 1)
    out = jt.out_cluster.id
    pf = Parfactor.make((jt.out_cluster.prvs[0],), np.ones(2))
    jt.insert(out, "beta", pf)
    assert len(jt.messages) == len(jt.nodes) - 1
    # what is left all flows toward the out-cluster
    assert all(jtree._inbound_order(jt, out).count(e) == 1 for e in jt.messages)
    assert jtree.pass_messages(jt) == len(jt.nodes) - 1
