"""Ground-truth inference on the grounded (optionally unrolled) model.

Two independent paths: exhaustive enumeration of joint assignments, and
plain ground variable elimination with a min-fill order. Enumeration is
bounded; VE handles the larger unrolled models.
"""
from __future__ import annotations

from typing import Mapping

import numpy as np

from . import kernels
from .model import (
    Distribution,
    Evidence,
    GroundFactor,
    GroundPRV,
    InconsistentEvidence,
    Model,
    ground,
    ground_cardinalities,
)

DEFAULT_BOUND = 2**24


class OracleBoundError(RuntimeError):
    """The ground assignment space is larger than the configured bound."""


def _is_temporal(cards: Mapping[tuple, int]) -> bool:
    return any(v[2] is not None for v in cards)


def _gvar(term: GroundPRV, time):
    return (term.prv.name, tuple(term.constants), time)


def evidence_vars(e, cards: Mapping[tuple, int]) -> dict[tuple, int]:
    """Map evidence to ``{ground var: value index}``.

    ``e`` is an :class:`Evidence` (steps become absolute times in a
    temporal model) or a plain ``{GroundPRV: value}`` mapping.
    """
    if e is None:
        return {}
    temporal = _is_temporal(cards)
    items = e.entries.items() if isinstance(e, Evidence) else (((0, g), v) for g, v in e.items())
    out = {}
    for (step, g), val in items:
        var = _gvar(g, step if temporal else None)
        if var not in cards:
            raise KeyError(f"{g} at step {step} is not a variable of the model")
        idx = g.prv.range.index(val)
        if out.get(var, idx) != idx:
            raise InconsistentEvidence(f"conflicting evidence on {g}")
        out[var] = idx
    return out


def _query_var(q: GroundPRV, time, cards):
    var = _gvar(q, time)
    if var not in cards:
        raise KeyError(f"{q} at time {time} is not a variable of the model")
    return var


def oracle_marginals(m: Model, e=None, *, bound: int = DEFAULT_BOUND, backend: str | None = None):
    """Unnormalised marginals of every ground variable by full enumeration.

    Returns ``(vars, table)`` where ``table[i]`` holds the weights of
    ``vars[i]``.
    """
    cards = ground_cardinalities(m)
    ev = evidence_vars(e, cards)
    vars_ = list(cards)
    index = {v: i for i, v in enumerate(vars_)}
    space = 1
    for v in vars_:
        if v not in ev:
            space *= cards[v]
    if space > bound:
        raise OracleBoundError(f"{space} joint assignments exceed the bound {bound}")
    factors = ground(m)
    carr = np.array([cards[v] for v in vars_], dtype=np.int64)
    packed = kernels.pack_factors([[index[v] for v in f.vars] for f in factors], [f.table for f in factors], carr)
    evid = np.full(len(vars_), -1, dtype=np.int64)
    for v, i in ev.items():
        evid[index[v]] = i
    out = kernels.enumerate_marginals(carr, *packed, evid, backend=backend)
    return vars_, out


def oracle_marginal(m: Model, q: GroundPRV, e=None, *, time=None, bound: int = DEFAULT_BOUND, backend=None) -> Distribution:
    """Exact marginal of ``q`` (at ``time`` in an unrolled model) by enumeration."""
    vars_, out = oracle_marginals(m, e, bound=bound, backend=backend)
    cards = dict(zip(vars_, (len(r) for r in out)))
    var = _query_var(q, time, cards)
    row = out[vars_.index(var), : len(q.prv.range)]
    z = row.sum()
    if not z > 0:
        raise InconsistentEvidence("evidence has zero probability under the model")
    return Distribution(q.prv.range, row / z)


def oracle_eliminate(fs: list[GroundFactor], v: tuple, cards: Mapping[tuple, int], backend=None) -> list[GroundFactor]:
    """Standard sum-product elimination of one ground variable."""
    hit = [f for f in fs if v in f.vars]
    rest = [f for f in fs if v not in f.vars]
    if not hit:
        raise KeyError(f"{v} does not occur in the factors")
    out_vars, table = kernels.product_sum([list(f.vars) for f in hit], [f.table for f in hit], cards, v, backend=backend)
    return rest + [GroundFactor(tuple(out_vars), np.asarray(table))]


def condition(fs: list[GroundFactor], ev: Mapping[tuple, int]) -> list[GroundFactor]:
    out = []
    for f in fs:
        t = f.table

        for ax in range(len(f.vars) - 1, -1, -1):
            if f.vars[ax] in ev:
                t = np.take(t, ev[f.vars[ax]], axis=ax)
        keep = [x for x in f.vars if x not in ev]
        out.append(GroundFactor(tuple(keep), t))
    return out


def min_fill_order(fs: list[GroundFactor], exclude=()) -> list[tuple]:
    adj: dict[tuple, set] = {}
    for f in fs:
        for x in f.vars:
            adj.setdefault(x, set()).update(y for y in f.vars if y != x)
    remaining = [x for x in adj if x not in set(exclude)]
    order = []
    while remaining:
        best, best_key = None, None
        for i, x in enumerate(remaining):
            nb = list(adj[x])
            fill = sum(1 for a in range(len(nb)) for b in range(a + 1, len(nb)) if nb[b] not in adj[nb[a]])
            key = (fill, len(nb), i)
            if best_key is None or key < best_key:
                best, best_key = x, key
        order.append(best)
        nb = adj.pop(best)
        for a in nb:
            adj[a].discard(best)
            adj[a].update(y for y in nb if y != a)
        remaining.remove(best)
    return order


def oracle_ve_marginal(m: Model, q: GroundPRV, e=None, *, time=None, backend=None) -> Distribution:
    """Exact marginal of ``q`` by ground variable elimination (min-fill order)."""
    cards = ground_cardinalities(m)
    ev = evidence_vars(e, cards)
    var = _query_var(q, time, cards)
    if var in ev:
        p = np.zeros(len(q.prv.range))
        p[ev[var]] = 1.0
        return Distribution(q.prv.range, p)
    fs = condition(ground(m), ev)
    for v in min_fill_order(fs, exclude=(var,)):
        if not any(v in f.vars for f in fs):
            continue
        fs = oracle_eliminate(fs, v, cards, backend=backend)
        # keep magnitudes bounded on long chains
        last = fs[-1]
        mx = float(np.max(last.table)) if last.table.size else 0.0
        if mx > 0:
            fs[-1] = GroundFactor(last.vars, last.table / mx)
    res = np.ones(cards[var])
    for f in fs:
        if f.vars == (var,):
            res = res * f.table
        elif f.vars:
            raise AssertionError("unexpected residual factor")
        elif not f.table > 0:
            raise InconsistentEvidence("evidence has zero probability under the model")
    z = res.sum()
    if not z > 0:
        raise InconsistentEvidence("evidence has zero probability under the model")
    return Distribution(q.prv.range, res / z)
