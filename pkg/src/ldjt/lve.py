"""Lifted variable elimination on parfactors with Cartesian constraints.

The operator set is deliberately small: shattering on constants, evidence
absorption, lifted multiplication (with count exponents when the operands
generalise over different logvars), lifted summing-out with count
exponentiation, and a grounding fallback for eliminations the lifted rule
cannot express (for example summing out a parameterless PRV shared by all
groundings of a parfactor).

Structural work (which parfactors to split, how to align logvars, which
axis to sum) depends only on parfactor scopes, never on the numbers.  Every
numeric step goes through ``_op`` so that an elimination can be traced
once and replayed on new tables with the same scopes; temporal inference
repeats the same scopes at every time step.
"""
from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from functools import reduce
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .model import Constraint, InconsistentEvidence, Logvar, Parfactor, PRV, Scope


class LiftingError(Exception):
    """A lifted operator's precondition does not hold for these parfactors."""


# ---------------------------------------------------------------------------
# numeric tape


class _Tape:
    def __init__(self, inputs: Sequence[np.ndarray]):
        self.keep: list[np.ndarray] = list(inputs)
        self.regs: dict[int, int] = {}
        for i, t in enumerate(inputs):
            self.regs.setdefault(id(t), i)
        self.n_inputs = len(self.keep)
        self.ops: list[tuple] = []

    def reg(self, arr: np.ndarray) -> int:
        r = self.regs.get(id(arr))
        if r is None:
            r = self._push(arr)
            self.ops.append((_const(arr), (), {}))
        return r

    def _push(self, arr: np.ndarray) -> int:
        r = len(self.keep)
        self.keep.append(arr)
        self.regs[id(arr)] = r
        return r


def _const(arr):
    def f():
        return arr

    return f


_TAPE: _Tape | None = None


def _op(fn: Callable, *arrays: np.ndarray, **params) -> np.ndarray:
    tape = _TAPE
    if tape is None:
        return fn(*arrays, **params)
    ins = tuple(tape.reg(a) for a in arrays)
    out = fn(*arrays, **params)
    tape._push(out)
    tape.ops.append((fn, ins, params))
    return out


def _n_einsum(*arrays, subs, exps, out):
    operands = []
    for a, s, e in zip(arrays, subs, exps):
        operands.append(a if e == 1.0 else np.power(a, e))
        operands.append(list(s))
    return np.einsum(*operands, list(out))


def _n_sumpow(t, axis, k, perm):
    s = t.sum(axis=axis)
    if k != 1:
        s = np.power(s, k)
    return s.transpose(perm) if perm is not None else s


def _n_take(t, axis, index):
    return np.take(t, index, axis=axis)


def _n_power(t, e):
    return np.power(t, e)


def _n_check_positive(t):
    if not np.any(t > 0):
        raise InconsistentEvidence("evidence has zero probability under the model")
    return t


@dataclass
class Plan:
    ops: list[tuple]
    n_inputs: int
    outputs: list[tuple]  # (scope, reg, name, neutral)
    eliminations: int


@dataclass
class Stats:
    """Operation counters shared by jtree and temporal inference."""

    messages: int = 0
    eliminations: int = 0
    lifted: int = 0
    grounded: int = 0
    plan_hits: int = 0
    plan_misses: int = 0

    def snapshot(self) -> dict[str, int]:
        return {k: getattr(self, k) for k in ("messages", "eliminations")}


PLAN_CACHE = True
_PLANS: dict[tuple, Plan] = {}


def clear_plans() -> None:
    _PLANS.clear()
    _MUL.clear()


def _replay(plan: Plan, tables: Sequence[np.ndarray]) -> list[np.ndarray]:
    regs = list(tables)
    for fn, ins, params in plan.ops:
        regs.append(fn(*[regs[i] for i in ins], **params))
    return regs


def traced(kind: str):
    """Memoise a scope-only procedure as a replayable numeric plan.

    The wrapped function receives parfactors plus hashable arguments and
    returns ``(parfactors, eliminations)``.
    """

    def deco(fn):
        def wrapper(pfs: Sequence[Parfactor], *args, stats: Stats | None = None):
            global _TAPE
            key = (kind, tuple((id(p.scope), p.neutral) for p in pfs), args)
            plan = _PLANS.get(key) if PLAN_CACHE else None
            if plan is None:
                if stats is not None:
                    stats.plan_misses += 1
                outer = _TAPE
                tape = _Tape([p.table for p in pfs])
                _TAPE = tape
                try:
                    out, n = fn(list(pfs), *args, stats=stats)
                finally:
                    _TAPE = outer
                outputs = [(p.scope, tape.reg(p.table), p.name, p.neutral) for p in out]
                plan = Plan(tape.ops, tape.n_inputs, outputs, n)
                if PLAN_CACHE:
                    _PLANS[key] = plan
                result = out
            else:
                if stats is not None:
                    stats.plan_hits += 1
                regs = _replay(plan, [p.table for p in pfs])
                result = [Parfactor(s, regs[r], name, neutral) for s, r, name, neutral in plan.outputs]
            if stats is not None:
                stats.eliminations += plan.eliminations
            return result

        wrapper.__wrapped__ = fn
        wrapper.__name__ = fn.__name__
        wrapper.__doc__ = fn.__doc__
        return wrapper

    return deco


# ---------------------------------------------------------------------------
# structural helpers


def _akey(a: PRV, c: Constraint) -> tuple:
    """Atoms with equal keys have identical groundings."""
    return (a.name, a.time, tuple(p if isinstance(p, str) else c[p] for p in a.params))


def _pos_sets(a: PRV, c: Constraint) -> list[frozenset]:
    return [frozenset((p,)) if isinstance(p, str) else c[p] for p in a.params]


def _overlap(a: PRV, ca: Constraint, b: PRV, cb: Constraint) -> bool:
    if a.key != b.key:
        return False
    return all(x & y for x, y in zip(_pos_sets(a, ca), _pos_sets(b, cb)))


def _sort_key(a: PRV, allowed: Mapping[Logvar, frozenset]):
    ps = []
    for i, p in enumerate(a.params):
        if isinstance(p, str):
            ps.append((0, (a.domain(i).index(p),)))
        else:
            dom = p.domain
            ps.append((1, tuple(sorted(dom.index(c) for c in allowed[p]))))
    return (-(10**9) if a.time is None else a.time, a.name, tuple(ps))


def _canon_struct(args: Sequence[PRV], allowed: Mapping[Logvar, frozenset]) -> tuple[Scope, list[int]]:
    """Canonical argument order and logvar names; returns (scope, perm).

    ``perm[i]`` is the position in ``args`` of the i-th canonical argument.
    Arguments must be pairwise distinct.
    """
    perm = sorted(range(len(args)), key=lambda i: _sort_key(args[i], allowed))
    rename: dict[Logvar, Logvar] = {}
    used: set[str] = set()
    for i in perm:
        for p in args[i].params:
            if isinstance(p, Logvar) and p not in rename:
                root = p.name.split("~")[0]
                name, k = root, 0
                while name in used:
                    k += 1
                    name = f"{root}~{k}"
                used.add(name)
                rename[p] = p if name == p.name else Logvar(name, p.domain)
    new_args = tuple(
        args[i].with_params(tuple(rename[p] if isinstance(p, Logvar) else p for p in args[i].params)) for i in perm
    )
    items = sorted(((rename[lv], frozenset(v)) for lv, v in allowed.items() if lv in rename), key=lambda kv: kv[0].name)
    return Scope(new_args, Constraint(tuple(items))), perm


def _canonical(args: Sequence[PRV], allowed: Mapping[Logvar, frozenset], table: np.ndarray, name="", neutral=False):
    """Build a canonical parfactor, merging repeated atoms and folding dangling logvars."""
    args = list(args)
    if len(set(args)) != len(args):
        uniq: list[PRV] = []
        letters = []
        for a in args:
            if a not in uniq:
                uniq.append(a)
            letters.append(uniq.index(a))
        table = _op(_n_einsum, table, subs=(tuple(letters),), exps=(1.0,), out=tuple(range(len(uniq))))
        args = uniq
    present = {lv for a in args for lv in a.logvars}
    dangling = [lv for lv in allowed if lv not in present]
    if dangling:
        k = 1
        for lv in dangling:
            k *= len(allowed[lv])
        if k != 1:
            table = _op(_n_power, table, e=float(k))
        allowed = {lv: v for lv, v in allowed.items() if lv in present}
    scope, perm = _canon_struct(args, allowed)
    if perm != list(range(len(perm))):
        table = _op(_n_einsum, table, subs=(tuple(range(len(perm))),), exps=(1.0,), out=tuple(perm))
    return Parfactor(scope, table, name, neutral)


# ---------------------------------------------------------------------------
# shattering


def _blocks(pfs: Iterable[Parfactor], atoms: Iterable[PRV]) -> dict[tuple, dict[str, frozenset]]:
    sets: dict[tuple, set[frozenset]] = defaultdict(set)
    for pf in pfs:
        for lv, allowed in pf.constraint.items:
            sets[lv.domain].add(allowed)
        for a in pf.args:
            for i, p in enumerate(a.params):
                if isinstance(p, str):
                    sets[a.domain(i)].add(frozenset((p,)))
    for a in atoms:
        for i, p in enumerate(a.params):
            if isinstance(p, str):
                sets[a.domain(i)].add(frozenset((p,)))
    out = {}
    for dom, ss in sets.items():
        ss = list(ss)
        groups: dict[tuple, list[str]] = defaultdict(list)
        for c in dom:
            groups[tuple(c in s for s in ss)].append(c)
        out[dom] = {c: frozenset(g) for g in groups.values() for c in g}
    return out


def _split(pf: Parfactor, blocks: Mapping[tuple, Mapping[str, frozenset]]) -> list[Parfactor]:
    lvs = pf.logvars
    parts = []
    trivial = True
    for lv in lvs:
        allowed = pf.constraint[lv]
        bmap = blocks.get(lv.domain)
        cells: list[frozenset] = []
        for c in lv.domain:
            if c in allowed:
                b = (bmap[c] & allowed) if bmap is not None else allowed
                if b not in cells:
                    cells.append(b)
        if len(cells) > 1 or len(cells[0]) == 1:
            trivial = False
        parts.append(cells)
    if trivial:
        return [pf]
    out = []
    for combo in itertools.product(*parts):
        subst = {lv: next(iter(b)) for lv, b in zip(lvs, combo) if len(b) == 1}
        args = [a.with_params(tuple(subst.get(p, p) if isinstance(p, Logvar) else p for p in a.params)) for a in pf.args]
        allowed = {lv: b for lv, b in zip(lvs, combo) if lv not in subst}
        out.append(_canonical(args, allowed, pf.table, pf.name, pf.neutral))
    return out


def shatter(f: Parfactor, terms: Iterable[PRV]) -> list[Parfactor]:
    """Split ``f`` so that every ground term in ``terms`` gets its own cell.

    ``terms`` are ground PRV occurrences (constants in all positions).
    Terms of other PRVs are ignored.
    """
    terms = [t for t in terms if any(a.name == t.name and a.time == t.time for a in f.args)]
    for t in terms:
        for i, c in enumerate(t.params):
            if not isinstance(c, str) or c not in t.domain(i):
                raise ValueError(f"term {t} uses a constant outside its domain")
    if not terms:
        return [f]
    # only the constants of the terms refine f, not f's own sets
    blocks = {}
    for t in terms:
        for i, c in enumerate(t.params):
            dom = t.domain(i)
            blocks.setdefault(dom, set()).add(c)
    bmaps = {}
    for dom, consts in blocks.items():
        m = {c: frozenset((c,)) for c in consts}
        rest = frozenset(c for c in dom if c not in consts)
        m.update({c: rest for c in rest})
        bmaps[dom] = m
    return _split(f, bmaps)


def shatter_all(pfs: Sequence[Parfactor], atoms: Iterable[PRV] = ()) -> list[Parfactor]:
    """Refine all parfactors jointly until same-PRV atoms are identical or disjoint."""
    atoms = list(atoms)
    cur = list(pfs)
    while True:
        blocks = _blocks(cur, atoms)
        nxt = []
        changed = False
        for pf in cur:
            parts = _split(pf, blocks)
            if len(parts) != 1 or parts[0] is not pf:
                changed = True
            nxt.extend(parts)
        cur = nxt
        if not changed:
            return cur


def ground_all(pf: Parfactor) -> list[Parfactor]:
    """Split ``pf`` into one parfactor per grounding (no logvars left)."""
    if not pf.logvars:
        return [pf]
    bmaps = {lv.domain: {c: frozenset((c,)) for c in lv.domain} for lv in pf.logvars}
    return _split(pf, bmaps)


# ---------------------------------------------------------------------------
# evidence


def absorb_evidence(f: Parfactor, evidence: Mapping[PRV, str]) -> Parfactor | None:
    """Condition ``f`` on observed ground atoms.

    ``f`` must already be shattered with respect to the evidence atoms.
    Evidenced arguments are projected out. Returns None when nothing is
    left but a positive constant.
    """
    hits = [(i, a) for i, a in enumerate(f.args) if a in evidence]
    if not hits:
        return f
    index = []
    for i, a in hits:
        v = evidence[a]
        if v not in a.range:
            raise ValueError(f"value {v} is outside the range of {a}")
        index.append((i, a.range.index(v)))
    table = f.table
    for i, v in sorted(index, reverse=True):
        table = _op(_n_take, table, axis=i, index=v)
    rest = [a for i, a in enumerate(f.args) if a not in evidence]
    if not rest:
        _op(_n_check_positive, table)
        return None
    allowed = {lv: f.constraint[lv] for lv in f.logvars}
    return _canonical(rest, allowed, table, f.name, f.neutral)


@traced("absorb")
def absorb_all(pfs: list[Parfactor], evidence: tuple[tuple[PRV, str], ...], stats=None):
    """Shatter each parfactor on the evidence atoms and absorb them."""
    ev = dict(evidence)
    out = []
    for pf in pfs:
        for part in shatter(pf, ev):
            r = absorb_evidence(part, ev)
            if r is not None:
                out.append(r)
    return out, 0


# ---------------------------------------------------------------------------
# multiplication


@dataclass(frozen=True)
class _MulPlan:
    scope: Scope
    subs: tuple[tuple[int, ...], tuple[int, ...]]
    exps: tuple[float, float]
    out: tuple[int, ...]


_MUL: dict[tuple[Scope, Scope], _MulPlan | LiftingError] = {}


def _mul_plan(fs: Scope, gs: Scope) -> _MulPlan:
    key = (fs, gs)
    plan = _MUL.get(key)
    if plan is None:
        try:
            plan = _build_mul_plan(fs, gs)
        except LiftingError as e:
            plan = e
        _MUL[key] = plan
    if isinstance(plan, LiftingError):
        raise plan
    return plan


def _build_mul_plan(fs: Scope, gs: Scope) -> _MulPlan:
    fc, gc = fs.constraint, gs.constraint
    fkeys: dict[tuple, int] = {}
    ambiguous = set()
    for i, a in enumerate(fs.args):
        k = _akey(a, fc)
        if k in fkeys:
            ambiguous.add(k)
        fkeys[k] = i
    mapping: dict[Logvar, Logvar] = {}
    matched: dict[int, int] = {}
    for j, b in enumerate(gs.args):
        k = _akey(b, gc)
        i = fkeys.get(k)
        if i is None:
            for a in fs.args:
                if _overlap(a, fc, b, gc):
                    raise LiftingError(f"{a} and {b} overlap without being shattered")
            continue
        if k in ambiguous:
            raise LiftingError(f"{b} matches several arguments")
        a = fs.args[i]
        for pb, pa in zip(b.params, a.params):
            if isinstance(pb, Logvar):
                if mapping.get(pb, pa) != pa:
                    raise LiftingError(f"logvar {pb.name} cannot be aligned consistently")
                mapping[pb] = pa
        matched[j] = i
    if len(set(mapping.values())) != len(mapping):
        raise LiftingError("two logvars would be merged")
    allowed: dict[Logvar, frozenset] = dict(fc.items)
    used = {lv.name for lv in allowed}
    for lv, vals in gc.items:
        if lv in mapping:
            continue
        root = lv.name.split("~")[0]
        name, n = root, 0
        while name in used:
            n += 1
            name = f"{root}~{n}"
        used.add(name)
        mapping[lv] = lv if name == lv.name else Logvar(name, lv.domain)
        allowed[mapping[lv]] = vals
    g_lvs = {mapping[lv] for lv in gc.logvars}
    c_f = 1
    c_g = 1
    for lv, vals in allowed.items():
        if lv not in fc:
            c_f *= len(vals)
        if lv not in g_lvs:
            c_g *= len(vals)
    args = list(fs.args)
    g_labels = []
    for j, b in enumerate(gs.args):
        if j in matched:
            g_labels.append(matched[j])
        else:
            g_labels.append(len(args))
            args.append(b.with_params(tuple(mapping[p] if isinstance(p, Logvar) else p for p in b.params)))
    scope, perm = _canon_struct(args, allowed)
    return _MulPlan(scope, (tuple(range(len(fs.args))), tuple(g_labels)), (1.0 / c_f, 1.0 / c_g), tuple(perm))


def multiply(f: Parfactor, g: Parfactor) -> Parfactor:
    """Lifted product; shared atoms must be aligned (shattered) beforehand.

    When the operands generalise over different logvars, each table is
    raised to one over the number of groundings of the logvars it lacks,
    so the product over all groundings is unchanged.
    """
    plan = _mul_plan(f.scope, g.scope)
    table = _op(_n_einsum, f.table, g.table, subs=plan.subs, exps=plan.exps, out=plan.out)
    return Parfactor(plan.scope, table)


# ---------------------------------------------------------------------------
# summing out


def _sum_plan(fs: Scope, atom: PRV) -> tuple[Scope, int, int, list[int] | None]:
    try:
        i = fs.args.index(atom)
    except ValueError:
        raise LiftingError(f"{atom} does not occur in the parfactor") from None
    c = fs.constraint
    for j, b in enumerate(fs.args):
        if j != i and _overlap(atom, c, b, c):
            raise LiftingError(f"{atom} overlaps with {b} in the same parfactor")
    if not set(c.logvars) <= set(atom.logvars):
        missing = [lv.name for lv in c.logvars if lv not in atom.logvars]
        raise LiftingError(f"{atom} does not cover logvars {missing}")
    rest = [a for j, a in enumerate(fs.args) if j != i]
    rest_lvs = {lv for a in rest for lv in a.logvars}
    k = 1
    for lv in atom.logvars:
        if lv not in rest_lvs:
            k *= len(c[lv])
    allowed = {lv: c[lv] for lv in c.logvars if lv in rest_lvs}
    scope, perm = _canon_struct(rest, allowed)
    return scope, i, k, (None if perm == list(range(len(perm))) else perm)


def sum_out(f: Parfactor, atom: PRV) -> Parfactor:
    """Eliminate every grounding of ``atom`` from ``f``.

    Lifted rule: if ``atom`` carries all logvars of ``f`` each of its
    groundings sits in exactly one ground factor, so the table is summed
    over the atom's axis and raised to the number of groundings of the
    logvars that disappear with it. Raises ``LiftingError`` otherwise.
    """
    scope, i, k, perm = _sum_plan(f.scope, atom)
    table = _op(_n_sumpow, f.table, axis=i, k=k, perm=perm)
    return Parfactor(scope, table)


def normalize_msg(f: Parfactor) -> Parfactor:
    """Scale the table so that its largest entry is one."""
    m = float(np.max(f.table)) if f.table.size else 0.0
    if not m > 0:
        raise InconsistentEvidence("message is all zero; evidence is inconsistent")
    return Parfactor(f.scope, f.table / m, f.name, False)


# ---------------------------------------------------------------------------
# grounding fallback


def _class_members(pfs: Sequence[Parfactor], atom: PRV, c: Constraint) -> list[int]:
    return [i for i, pf in enumerate(pfs) if any(_overlap(atom, c, b, pf.constraint) for b in pf.args)]


def _owner_constraint(pfs: Sequence[Parfactor], atom: PRV) -> Constraint:
    for pf in pfs:
        if atom in pf.args:
            return pf.constraint
    raise ValueError(f"{atom} does not occur in any parfactor")


def _drop_scalar(pf: Parfactor) -> Parfactor | None:
    if pf.args:
        return pf
    _op(_n_check_positive, pf.table)
    return None


def ground_eliminate(fs: Sequence[Parfactor], atom: PRV) -> list[Parfactor]:
    """Eliminate ``atom`` by grounding the parfactors that mention it.

    Parfactors not mentioning any grounding of ``atom`` are returned as
    they are; the others come back as ground parfactors with every
    instance of ``atom`` summed out.
    """
    c = _owner_constraint(fs, atom)
    idx = set(_class_members(fs, atom, c))
    others = [pf for i, pf in enumerate(fs) if i not in idx]
    grounded = [g for i in sorted(idx) for g in ground_all(fs[i])]
    pools = [sorted(c[p], key=p.domain.index) if isinstance(p, Logvar) else [p] for p in atom.params]
    for combo in itertools.product(*pools):
        v = atom.with_params(tuple(combo))
        hit = [g for g in grounded if v in g.args]
        if not hit:
            continue
        prod = reduce(multiply, hit)
        res = _drop_scalar(sum_out(prod, v))
        grounded = [g for g in grounded if not any(g is h for h in hit)]
        if res is not None:
            grounded.append(res)
    return others + grounded


# ---------------------------------------------------------------------------
# cluster-level elimination


def _multiply_all(pfs: Sequence[Parfactor]) -> Parfactor | None:
    if not pfs:
        return None
    try:
        acc_scope = pfs[0].scope
        for p in pfs[1:]:
            acc_scope = _mul_plan(acc_scope, p.scope).scope
        return reduce(multiply, pfs)
    except LiftingError:
        ground = [g for p in pfs for g in ground_all(p)]
        ground = shatter_all(ground)
        return reduce(multiply, ground)


def _choose(pfs: Sequence[Parfactor], keep: Callable[[PRV], bool]):
    """Pick the next atom class to eliminate: lifted first, then smallest result."""
    seen: dict[tuple, tuple[PRV, Constraint]] = {}
    for pf in pfs:
        for a in pf.args:
            if not keep(a):
                seen.setdefault(_akey(a, pf.constraint), (a, pf.constraint))
    best = None
    for order, (k, (atom, c)) in enumerate(seen.items()):
        members = [pf for pf in pfs if any(_akey(b, pf.constraint) == k for b in pf.args)]
        lifted = True
        try:
            acc = members[0].scope
            for p in members[1:]:
                acc = _mul_plan(acc, p.scope).scope
            rep = next(b for b in acc.args if _akey(b, acc.constraint) == k)
            res_scope = _sum_plan(acc, rep)[0]
            cost = int(np.prod([len(a.range) for a in res_scope.args])) if res_scope.args else 1
        except LiftingError:
            lifted = False
            gvars = set()
            for pf in members:
                for asg in pf.constraint.assignments():
                    for b in pf.args:
                        gvars.add((b.key, tuple(asg[p] if isinstance(p, Logvar) else p for p in b.params), len(b.range)))
            cost = int(np.prod([r for *_, r in gvars])) if gvars else 1
        rank = (not lifted, cost, order)
        if best is None or rank < best[0]:
            best = (rank, k, members, lifted, atom)
    return best


def _eliminate_impl(pfs: list[Parfactor], keep: Callable[[PRV], bool], atoms: Sequence[PRV], stats: Stats | None):
    pfs = [p for p in pfs if not p.neutral]
    scalars = [p for p in pfs if not p.args]
    for s in scalars:
        _op(_n_check_positive, s.table)
    pfs = shatter_all([p for p in pfs if p.args], atoms)
    n = 0
    while True:
        pick = _choose(pfs, keep)
        if pick is None:
            break
        _, k, members, lifted, atom = pick
        rest = [p for p in pfs if not any(p is m for m in members)]
        if lifted:
            prod = reduce(multiply, members)
            rep = next(b for b in prod.args if _akey(b, prod.constraint) == k)
            res = _drop_scalar(sum_out(prod, rep))
            new = [res] if res is not None else []
            if stats is not None:
                stats.lifted += 1
        else:
            new = ground_eliminate(members, atom)
            if stats is not None:
                stats.grounded += 1
        pfs = shatter_all(rest + new, atoms)
        n += 1
    result = _multiply_all(pfs)
    return ([] if result is None else [result]), n


@traced("eliminate")
def _eliminate_families(pfs, keep_keys: frozenset, stats=None):
    return _eliminate_impl(pfs, lambda a: a.key in keep_keys, (), stats)


@traced("query")
def _eliminate_to_atom(pfs, atom: PRV, stats=None):
    return _eliminate_impl(pfs, lambda a: a == atom, (atom,), stats)


def eliminate(pfs: Sequence[Parfactor], keep: frozenset | PRV, stats: Stats | None = None) -> Parfactor | None:
    """Multiply ``pfs`` and sum out everything not kept.

    ``keep`` is either a set of PRV family keys ``(name, time)`` (message
    computation: keep every grounding of those PRVs) or one ground atom
    (query answering). Returns None when nothing but a constant remains.
    """
    if isinstance(keep, PRV):
        out = _eliminate_to_atom(pfs, keep, stats=stats)
    else:
        out = _eliminate_families(pfs, frozenset(keep), stats=stats)
    return out[0] if out else None


def marginal(pfs: Sequence[Parfactor], atom: PRV, stats: Stats | None = None) -> np.ndarray:
    """Normalised distribution of a ground atom given the product of ``pfs``."""
    res = eliminate(pfs, atom, stats=stats)
    if res is None:
        return np.full(len(atom.range), 1.0 / len(atom.range))
    t = res.table
    z = t.sum()
    if not z > 0:
        raise InconsistentEvidence("query has zero probability mass; evidence is inconsistent")
    return t / z
