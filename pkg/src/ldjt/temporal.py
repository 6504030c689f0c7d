"""Temporal inference over a dynamic model with per-step junction trees.

Jtree instances use relative time: ``0`` is the step the instance stands
for and ``-1`` the previous step.  Forward messages (alpha) leave the
out-cluster over the current-slice interface and enter the next
instance's in-cluster at time -1; backward messages (beta) leave the
in-cluster over the previous-slice interface and enter the previous
instance's out-cluster at time 0.
"""
from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import jtree as jt
from . import lve
from .model import (
    PRV,
    Constraint,
    Distribution,
    DynamicModel,
    Evidence,
    GroundPRV,
    InconsistentEvidence,
    Logvar,
    ModelError,
    Parfactor,
    Scope,
    TemporalQuery,
    parse_term,
    shift_parfactor,
    unroll,
)


class WindowError(LookupError):
    """A backward pass needs a jtree the keep-window strategy has dropped."""


@dataclass(frozen=True)
class Strategy:
    """Which past jtrees stay in memory.

    ``keep`` retains the last ``k`` instances (all when ``k`` is None),
    ``reinst`` retains none and rebuilds on demand, ``combined`` retains
    ``k`` and rebuilds older ones.
    """

    kind: str
    k: int | None = None

    def __post_init__(self):
        if self.kind not in ("keep", "reinst", "combined"):
            raise ValueError(f"unknown strategy {self.kind}")
        if self.k is not None and self.k < 0:
            raise ValueError("window size must be non-negative")

    @property
    def size(self) -> int | None:
        return 0 if self.kind == "reinst" else self.k

    @property
    def rebuilds(self) -> bool:
        return self.kind != "keep"


def keep_window(k: int | None = None) -> Strategy:
    return Strategy("keep", k)


def reinstantiate_all() -> Strategy:
    return Strategy("reinst")


def combined(k: int = 10) -> Strategy:
    return Strategy("combined", k)


@dataclass
class InterfaceMessage:
    direction: str
    step: int
    payload: Parfactor | None


@dataclass
class Answer:
    query: TemporalQuery
    dist: Distribution
    clamped: bool = False

    @property
    def lag(self) -> int:
        return self.query.issued - self.query.target


class Engine:
    """Sequential filtering with on-demand prediction and smoothing."""

    def __init__(self, d: DynamicModel, strategy: Strategy | None = None, stats: lve.Stats | None = None):
        self.d = d
        self.strategy = strategy or combined(10)
        tpl = jt.construct_dynamic(d)
        self.template0 = tpl.j0
        self.templateT = tpl.jt
        self.interface = tpl.interface
        self.iface_names = frozenset(p.name for p in self.interface)
        self.keys_cur = frozenset((n, 0) for n in self.iface_names)
        self.keys_prev = frozenset((n, -1) for n in self.iface_names)
        self.stats = stats or lve.Stats()
        self.t = -1
        self.current: jt.FOJtree | None = None
        self.alpha_log: dict[int, Parfactor | None] = {}
        self.evidence_log: dict[int, dict[GroundPRV, str]] = {}
        self.window: OrderedDict[int, jt.FOJtree] = OrderedDict()
        self.version = 0
        self.events: list[dict] | None = None
        self._alpha_now: tuple | None = None
        self._pred: dict | None = None
        self._walk: dict | None = None

    # -- bookkeeping -----------------------------------------------------------

    def _event(self, **kw):
        if self.events is not None:
            self.events.append(kw)

    def _template(self, step: int) -> jt.FOJtree:
        return self.template0 if step == 0 else self.templateT

    def _jtree_evidence(self, step: int, future: bool = False) -> dict[PRV, str]:
        ev = {}
        if not future:
            ev.update({g.atom(0): v for g, v in self.evidence_log.get(step, {}).items()})
        if step >= 1:
            for g, v in self.evidence_log.get(step - 1, {}).items():
                if g.prv.name in self.iface_names:
                    ev[g.atom(-1)] = v
        return ev

    def _make(self, step: int, alpha: Parfactor | None, ev: Mapping[PRV, str]) -> jt.FOJtree:
        j = self._template(step).instantiate(step)
        jt.enter_evidence(j, ev, self.stats)
        if step >= 1 and alpha is not None:
            j.insert(j.in_cluster.id, "alpha", alpha)
        return j

    def _eliminate_at(self, j: jt.FOJtree, node: int, keep, skip=()) -> Parfactor | None:
        jt.collect(j, node, self.stats)
        pfs = [pf for tag, pf in j.inserted.get(node, {}).items() if tag not in skip]
        pfs = j.nodes[node].local + pfs
        for u in j.adj[node]:
            m = j.messages[(u, node)]
            if m is not None:
                pfs.append(m)
        res = lve.eliminate(pfs, keep, stats=self.stats)
        return None if res is None else lve.normalize_msg(res)

    def alpha(self, j: jt.FOJtree) -> Parfactor | None:
        """Forward message of ``j``, already shifted to time -1."""
        res = self._eliminate_at(j, j.out_cluster.id, self.keys_cur)
        return None if res is None else shift_parfactor(res, -1, "alpha")

    def beta(self, j: jt.FOJtree) -> Parfactor | None:
        """Backward message of ``j`` (without its alpha), shifted to time 0."""
        res = self._eliminate_at(j, j.in_cluster.id, self.keys_prev, skip=("alpha",))
        return None if res is None else shift_parfactor(res, 1, "beta")

    # -- forward -------------------------------------------------------------

    def _current_alpha(self) -> Parfactor | None:
        key = (self.t, self.version)
        if self._alpha_now is not None and self._alpha_now[0] == key:
            return self._alpha_now[1]
        a = self.alpha(self.current)
        self._alpha_now = (key, a)
        return a

    def advance(self, evidence: Mapping[GroundPRV, str] | None = None) -> jt.FOJtree:
        """Move to step t+1: emit alpha_t, instantiate, enter evidence, calibrate."""
        evidence = dict(evidence or {})
        step = self.t + 1
        alpha = None
        if self.current is not None:
            alpha = self._current_alpha()
            self.alpha_log[self.t] = alpha
            self._retain(self.t, self.current)
        self.evidence_log[step] = evidence
        self.t = step
        self.version += 1
        self.current = self._make(step, alpha, self._jtree_evidence(step))
        n = jt.pass_messages(self.current, stats=self.stats)
        self._event(event="forward", step=step, messages=n)
        self._walk = None
        self._pred = None
        return self.current

    def observe(self, evidence: Mapping[GroundPRV, str]) -> None:
        """Add evidence for the current step."""
        log = self.evidence_log.setdefault(self.t, {})
        new = {}
        for g, v in evidence.items():
            if g in log and log[g] != v:
                raise InconsistentEvidence(f"{g} at step {self.t} observed as both {log[g]} and {v}")
            if g not in log:
                new[g] = v
        if not new:
            return
        log.update(new)
        self.version += 1
        jt.enter_evidence(self.current, {g.atom(0): v for g, v in new.items()}, self.stats)
        jt.pass_messages(self.current, stats=self.stats)
        self._walk = None
        self._pred = None

    def _retain(self, step: int, j: jt.FOJtree) -> None:
        size = self.strategy.size
        if size == 0:
            return
        self.window[step] = j
        while size is not None and len(self.window) > size:
            self.window.popitem(last=False)

    # -- backward --------------------------------------------------------------

    def reinstantiate(self, step: int, beta: Parfactor | None = None, emit_only: bool = False) -> jt.FOJtree:
        """Rebuild J_step from the logs, add beta, and pass messages.

        With ``emit_only`` only the inbound pass toward the in-cluster runs,
        which is all a jtree needs to emit its own backward message.
        """
        if not 0 <= step < self.t:
            raise ValueError(f"cannot reinstantiate step {step} at step {self.t}")
        if step not in self.evidence_log or (step >= 1 and step - 1 not in self.alpha_log):
            raise KeyError(f"missing log entries for step {step}")
        j = self._make(step, self.alpha_log.get(step - 1), self._jtree_evidence(step))
        if beta is not None:
            j.insert(j.out_cluster.id, "beta", beta)
        if emit_only:
            n = jt.pass_messages(j, root=j.in_cluster.id, inbound_only=True, stats=self.stats)
        else:
            n = jt.pass_messages(j, stats=self.stats)
        self._event(event="backward", step=step, source="reinst", messages=n, emit_only=emit_only)
        return j

    def _back_one(self, j: jt.FOJtree, target: int) -> jt.FOJtree:
        step = j.time_step - 1
        if step < 0:
            raise ValueError("step 0 has no predecessor")
        beta = self.beta(j)
        prev = self.window.get(step)
        if prev is not None:
            prev.insert(prev.out_cluster.id, "beta", beta)
            n = jt.pass_messages(prev, stats=self.stats)
            self._event(event="backward", step=step, source="window", messages=n)
            return prev
        if not self.strategy.rebuilds:
            raise WindowError(f"step {step} is outside the kept window")
        return self.reinstantiate(step, beta, emit_only=step != target)

    def _walk_to(self, target: int) -> jt.FOJtree:
        w = self._walk
        fresh = w is not None and w["key"] == (self.t, self.version)
        if not fresh or target > w["pos"] and not (target in w["visited"] and target in self.window):
            w = {"key": (self.t, self.version), "pos": self.t, "jtree": self.current, "visited": {self.t}}
            self._walk = w
        if target == w["pos"]:
            j = w["jtree"]
            if not jt.is_calibrated(j):
                n = jt.pass_messages(j, stats=self.stats)
                self._event(event="calibrate", step=target, messages=n)
            return j
        if target > w["pos"]:
            return self.window[target]
        j = w["jtree"]
        while j.time_step > target:
            j = self._back_one(j, target)
            w["visited"].add(j.time_step)
        w["pos"], w["jtree"] = target, j
        return j

    # -- prediction --------------------------------------------------------------

    def _predict_to(self, target: int) -> jt.FOJtree:
        p = self._pred
        if p is None or p["key"] != (self.t, self.version):
            p = {"key": (self.t, self.version), "jtree": self.current, "step": self.t}
            self._pred = p
        if target < p["step"]:
            p.update(jtree=self.current, step=self.t)
        j = p["jtree"]
        while j.time_step < target:
            a = self._current_alpha() if j is self.current else self.alpha(j)
            step = j.time_step + 1
            j = self._make(step, a, self._jtree_evidence(step, future=step > self.t))
            self._event(event="predict", step=step)
        p.update(jtree=j, step=target)
        return j

    # -- queries ---------------------------------------------------------------

    def answer(self, q: TemporalQuery) -> Distribution:
        """Answer a query issued at the current step."""
        if q.issued != self.t:
            raise ValueError(f"query issued at {q.issued} but the engine is at step {self.t}")
        try:
            self.d.find_prv(q.term.prv.name)
        except ModelError as e:
            raise KeyError(str(e)) from None
        atom = q.term.atom(0)
        if q.target == self.t:
            j = self.current
        elif q.target > self.t:
            j = self._predict_to(q.target)
        else:
            j = self._walk_to(q.target)
        return jt.answer_query(j, atom, self.stats)

    def answer_all(self, qs: Sequence[TemporalQuery]) -> list[Distribution]:
        """Answer in reuse-friendly order (increasing distance from now); returns input order."""
        order = sorted(range(len(qs)), key=lambda i: (qs[i].target > self.t, abs(self.t - qs[i].target), i))
        out: list[Distribution | None] = [None] * len(qs)
        for i in order:
            out[i] = self.answer(qs[i])
        return out

    # -- checkpoints -----------------------------------------------------------

    def checkpoint(self, path) -> None:
        """Write one JSON record per finished step: evidence and alpha."""
        with open(path, "w") as fh:
            for s in range(self.t + 1):
                rec = {
                    "step": s,
                    "evidence": [[str(g), v] for g, v in self.evidence_log.get(s, {}).items()],
                    "alpha": _dump_pf(self.alpha_log[s]) if s in self.alpha_log else None,
                    "has_alpha": s in self.alpha_log,
                }
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def resume(cls, d: DynamicModel, path, strategy: Strategy | None = None, stats=None) -> Engine:
        """Rebuild an engine at the last checkpointed step.

        No jtree is retained, so earlier steps are reinstantiated on demand.
        """
        eng = cls(d, strategy or reinstantiate_all(), stats)
        if not eng.strategy.rebuilds:
            raise ValueError("resuming needs a strategy that can reinstantiate")
        recs = [json.loads(line) for line in open(path) if line.strip()]
        for rec in recs:
            s = rec["step"]
            eng.evidence_log[s] = {parse_term(t, d): v for t, v in rec["evidence"]}
            if rec.get("has_alpha"):
                eng.alpha_log[s] = _load_pf(rec["alpha"], d)
        last = max(r["step"] for r in recs)
        eng.t = last
        eng.version += 1
        eng.current = eng._make(last, eng.alpha_log.get(last - 1), eng._jtree_evidence(last))
        jt.pass_messages(eng.current, stats=eng.stats)
        return eng


def _dump_pf(pf: Parfactor | None):
    if pf is None:
        return None
    return {
        "args": [
            {"name": a.name, "time": a.time, "params": [p if isinstance(p, str) else {"lv": p.name} for p in a.params]}
            for a in pf.args
        ],
        "constraint": {lv.name: sorted(v, key=lv.domain.index) for lv, v in pf.constraint.items},
        "table": pf.table.ravel().tolist(),
    }


def _load_pf(rec, d: DynamicModel) -> Parfactor | None:
    if rec is None:
        return None
    lvs: dict[str, Logvar] = {}
    args = []
    for a in rec["args"]:
        decl = d.find_prv(a["name"])
        params = []
        for i, p in enumerate(a["params"]):
            if isinstance(p, str):
                params.append(p)
            else:
                lv = lvs.setdefault(p["lv"], Logvar(p["lv"], decl.domain(i)))
                params.append(lv)
        args.append(PRV(a["name"], tuple(params), decl.range, a["time"], decl.params))
    c = Constraint(tuple((lvs[n], frozenset(v)) for n, v in sorted(rec["constraint"].items())))
    shape = tuple(len(a.range) for a in args)
    return Parfactor(Scope(tuple(args), c), np.array(rec["table"], dtype=float).reshape(shape), "alpha")


# ---------------------------------------------------------------------------
# sessions


def clamp(issued: int, lag: int) -> tuple[int, bool]:
    """Target step of a lag query; negative targets clamp to 0 (flagged)."""
    target = issued - lag
    return (target, False) if target >= 0 else (0, True)


@dataclass
class Schedule:
    """Per-step query specs ``(term, lag)`` where a negative lag predicts ahead."""

    terms: dict[int, list[tuple[GroundPRV, int]]] = field(default_factory=dict)
    every: list[tuple[GroundPRV, int]] = field(default_factory=list)

    def at(self, step: int) -> list[tuple[GroundPRV, int]]:
        return self.every + self.terms.get(step, [])


def queries_at(schedule: Schedule, step: int) -> list[tuple[TemporalQuery, bool]]:
    out = []
    for term, lag in schedule.at(step):
        target, clamped = clamp(step, lag)
        out.append((TemporalQuery(term, target, step), clamped))
    return out


def run_session(
    d: DynamicModel,
    schedule: Schedule,
    evidence: Evidence,
    T: int,
    strategy: Strategy | None = None,
    stats: lve.Stats | None = None,
    engine: Engine | None = None,
    per_step: list | None = None,
) -> list[Answer]:
    """Steps 0..T: enter evidence, calibrate, answer that step's queries, move on."""
    eng = engine or Engine(d, strategy, stats)
    answers = []
    for t in range(T + 1):
        before = (eng.stats.messages, eng.stats.eliminations)
        eng.advance(evidence.at(t))
        qs = queries_at(schedule, t)
        dists = eng.answer_all([q for q, _ in qs])
        answers.extend(Answer(q, dist, c) for (q, c), dist in zip(qs, dists))
        if per_step is not None:
            per_step.append((eng.stats.messages - before[0], eng.stats.eliminations - before[1]))
    return answers


class UnrolledLJT:
    """Static jtree inference on the unrolled model, one model per issued step.

    A query issued at t for step pi is answered on unroll(d, max(t, pi))
    with the evidence of steps 0..t.
    """

    def __init__(self, d: DynamicModel, stats: lve.Stats | None = None):
        self.d = d
        self.stats = stats or lve.Stats()
        self._jtrees: dict[int, jt.FOJtree] = {}

    def template(self, horizon: int) -> jt.FOJtree:
        if horizon not in self._jtrees:
            self._jtrees[horizon] = jt.construct_fojt(unroll(self.d, horizon))
        return self._jtrees[horizon]

    def answer_step(self, t: int, queries: Sequence[TemporalQuery], evidence: Evidence) -> list[Distribution]:
        by_h: dict[int, list[int]] = {}
        for i, q in enumerate(queries):
            by_h.setdefault(max(t, q.target), []).append(i)
        out: list[Distribution | None] = [None] * len(queries)
        ev = {g.atom(s): v for (s, g), v in evidence.upto(t).entries.items()}
        for h, idx in sorted(by_h.items()):
            j = self.template(h).instantiate(t)
            jt.enter_evidence(j, ev, self.stats)
            jt.pass_messages(j, root=0, stats=self.stats)
            for i in idx:
                q = queries[i]
                out[i] = jt.answer_query(j, q.term.atom(q.target), self.stats)
        return out


def run_unrolled(d: DynamicModel, schedule: Schedule, evidence: Evidence, T: int, stats=None) -> list[Answer]:
    eng = UnrolledLJT(d, stats)
    answers = []
    for t in range(T + 1):
        qs = queries_at(schedule, t)
        dists = eng.answer_step(t, [q for q, _ in qs], evidence)
        answers.extend(Answer(q, dist, c) for (q, c), dist in zip(qs, dists))
    return answers
