"""First-order junction trees: construction, evidence, message passing, queries.

Clusters are sets of PRV families, where a family is a PRV name at a
(relative) time step.  Construction works on the lifted moral graph over
families: min-fill elimination cliques, a maximum-weight spanning tree over
the maximal cliques, then merging of near-duplicate neighbours (clusters
that differ in one PRV each).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import lve
from .model import (
    PRV,
    Constraint,
    Distribution,
    DynamicModel,
    Logvar,
    Model,
    ModelError,
    Parfactor,
)

Family = tuple  # (name, time)

IN = "in"
OUT = "out"
BOTH = "both"
NONE = "none"


def families(pf: Parfactor) -> frozenset:
    return frozenset(a.key for a in pf.args)


@dataclass
class Parcluster:
    id: int
    prvs: tuple[PRV, ...]
    local: list[Parfactor] = field(default_factory=list)
    label: str = NONE

    @property
    def keys(self) -> frozenset:
        return frozenset(p.key for p in self.prvs)

    @property
    def constraint(self) -> Constraint:
        lvs: list[Logvar] = []
        for p in self.prvs:
            lvs.extend(lv for lv in p.logvars if lv not in lvs)
        return Constraint.top(lvs)

    @property
    def local_names(self) -> list[str]:
        return [pf.name for pf in self.local]


@dataclass
class FOJtree:
    nodes: list[Parcluster]
    edges: list[tuple[int, int]]
    time_step: int | None = None
    messages: dict[tuple[int, int], Parfactor | None] = field(default_factory=dict)
    inserted: dict[int, dict[str, Parfactor]] = field(default_factory=dict)
    evidence: dict[PRV, str] = field(default_factory=dict)

    def __post_init__(self):
        self.adj: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for i, j in self.edges:
            self.adj[i].append(j)
            self.adj[j].append(i)

    def node(self, i: int) -> Parcluster:
        return self.nodes[i]

    def separator(self, i: int, j: int) -> frozenset:
        return self.nodes[i].keys & self.nodes[j].keys

    def with_label(self, label: str) -> Parcluster | None:
        for n in self.nodes:
            if n.label == label or n.label == BOTH:
                return n
        return None

    @property
    def in_cluster(self) -> Parcluster | None:
        return self.with_label(IN)

    @property
    def out_cluster(self) -> Parcluster | None:
        return self.with_label(OUT)

    def instantiate(self, step: int | None = None) -> FOJtree:
        """A fresh copy with empty message store (templates stay untouched)."""
        nodes = [Parcluster(n.id, n.prvs, list(n.local), n.label) for n in self.nodes]
        return FOJtree(nodes, list(self.edges), step)

    def copy(self) -> FOJtree:
        j = self.instantiate(self.time_step)
        for n, m in zip(j.nodes, self.nodes):
            n.local = list(m.local)
        j.messages = dict(self.messages)
        j.inserted = {k: dict(v) for k, v in self.inserted.items()}
        j.evidence = dict(self.evidence)
        return j

    # -- local models --------------------------------------------------------

    def factors(self, i: int) -> list[Parfactor]:
        return self.nodes[i].local + list(self.inserted.get(i, {}).values())

    def insert(self, i: int, tag: str, pf: Parfactor | None) -> None:
        """Add (or replace) an interface message in cluster ``i``.

        Only messages directed away from ``i`` become stale.
        """
        slot = self.inserted.setdefault(i, {})
        if pf is None:
            if slot.pop(tag, None) is None:
                return
        else:
            slot[tag] = pf
        self.invalidate_from(i)

    def remove(self, i: int, tag: str) -> None:
        self.insert(i, tag, None)

    def invalidate_from(self, i: int) -> None:
        stack = [(i, None)]
        while stack:
            u, parent = stack.pop()
            for v in self.adj[u]:
                if v != parent:
                    self.messages.pop((u, v), None)
                    stack.append((v, u))


# ---------------------------------------------------------------------------
# construction


def _min_fill_cliques(order_keys: list, edges: set) -> list[frozenset]:
    adj = {k: set() for k in order_keys}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    pos = {k: i for i, k in enumerate(order_keys)}
    remaining = list(order_keys)
    cliques = []
    while remaining:
        best = None
        for k in remaining:
            nb = sorted(adj[k], key=pos.get)
            fill = sum(1 for x in range(len(nb)) for y in range(x + 1, len(nb)) if nb[y] not in adj[nb[x]])
            rank = (fill, len(nb), k[1] if k[1] is not None else 0, pos[k])
            if best is None or rank < best[0]:
                best = (rank, k)
        k = best[1]
        nb = adj.pop(k)
        cliques.append(frozenset(nb | {k}))
        for a in nb:
            adj[a].discard(k)
            adj[a].update(x for x in nb if x != a)
        remaining.remove(k)
    maximal = []
    for c in cliques:
        if not any(c <= d for d in maximal) and not any(c < d for d in cliques):
            maximal.append(c)
    return maximal


def _spanning_tree(clusters: list[frozenset]) -> list[tuple[int, int]]:
    cand = sorted(
        ((len(clusters[i] & clusters[j]), i, j) for i in range(len(clusters)) for j in range(i + 1, len(clusters))),
        key=lambda e: (-e[0], e[1], e[2]),
    )
    parent = list(range(len(clusters)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    out = []
    for _, i, j in cand:
        a, b = find(i), find(j)
        if a != b:
            parent[a] = b
            out.append((i, j))
    return out


def _rip_holds(clusters: list[frozenset], edges: list[tuple[int, int]]) -> bool:
    adj = {i: [] for i in range(len(clusters))}
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    for f in set().union(*clusters) if clusters else ():
        holders = [i for i, c in enumerate(clusters) if f in c]
        seen = {holders[0]}
        stack = [holders[0]]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen and f in clusters[v]:
                    seen.add(v)
                    stack.append(v)
        if len(seen) != len(holders):
            return False
    return True


def _merge(clusters: list[frozenset], protect: frozenset | None, pf_fams: list[frozenset]):
    omega = max(len(c) for c in clusters)
    while True:
        cands = []
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                a, b = clusters[i], clusters[j]
                sep = len(a & b)
                union = a | b
                if len(union) > omega + 1 or sep < omega - 1 or sep == 0:
                    continue
                if protect is not None and (protect <= a or protect <= b):
                    continue
                slices = len({f[1] for f in union})
                covered = sum(1 for p in pf_fams if p <= union)
                cands.append(((-sep, -slices, -covered, i, j), i, j))
        cands.sort()
        for _, i, j in cands:
            union = clusters[i] | clusters[j]
            new = [c for k, c in enumerate(clusters) if k not in (i, j) and not c <= union]
            new.insert(i, union)
            if _rip_holds(new, _spanning_tree(new)):
                clusters = new
                break
        else:
            return clusters


def _build(pfs: Sequence[Parfactor], vocab: Mapping[Family, PRV], protect: frozenset | None = None, step=None) -> FOJtree:
    order: list[Family] = []
    edges = set()
    for pf in pfs:
        fams = [a.key for a in pf.args]
        for f in fams:
            if f not in order:
                order.append(f)
        for x in range(len(fams)):
            for y in range(x + 1, len(fams)):
                if fams[x] != fams[y]:
                    edges.add((fams[x], fams[y]))
    if not order:
        raise ModelError("model has no parfactors")
    clusters = _min_fill_cliques(order, edges)
    pf_fams = [families(p) for p in pfs]
    clusters = _merge(clusters, protect, pf_fams)
    tree = _spanning_tree(clusters)
    pos = {f: i for i, f in enumerate(order)}
    nodes = [Parcluster(i, tuple(vocab[f] for f in sorted(c, key=pos.get))) for i, c in enumerate(clusters)]
    # fewest covering clusters first; prefer busy clusters, then small ones
    covering = [[n.id for n in nodes if pf_fams[k] <= n.keys] for k in range(len(pfs))]
    for k in sorted(range(len(pfs)), key=lambda k: (len(covering[k]), k)):
        if not covering[k]:
            raise ModelError(f"parfactor {pfs[k].name} is not covered by any cluster")
        best = min(covering[k], key=lambda i: (-len(nodes[i].local), len(nodes[i].prvs), i))
        nodes[best].local.append(pfs[k])
    for n in nodes:
        order_in = {id(p): k for k, p in enumerate(pfs)}
        n.local.sort(key=lambda p: order_in[id(p)])
    return FOJtree(nodes, tree, step)


def _vocab(pfs: Iterable[Parfactor], decls: Mapping[str, PRV]) -> dict[Family, PRV]:
    out = {}
    for pf in pfs:
        for a in pf.args:
            if a.key not in out:
                d = decls.get(a.name)
                out[a.key] = d.at(a.time) if d is not None else a
    return out


def construct_fojt(m: Model) -> FOJtree:
    """FO jtree for a static model."""
    return _build(m.parfactors, _vocab(m.parfactors, m.prvs))


def identify_interface(d: DynamicModel) -> tuple[PRV, ...]:
    """Slice t-1 PRVs sharing a transition parfactor with a slice-t PRV."""
    return d.interface


def interface_parfactor(iface: Sequence[PRV], time: int, name: str) -> Parfactor:
    args = tuple(p.at(time) for p in iface)
    shape = tuple(len(p.range) for p in args)
    return Parfactor.make(args, np.ones(shape), name=name, neutral=True)


@dataclass
class DynamicTemplates:
    j0: FOJtree
    jt: FOJtree
    interface: tuple[PRV, ...]


def construct_dynamic(d: DynamicModel) -> DynamicTemplates:
    """Templates J0 and Jt (relative times -1 and 0) plus the interface.

    Jt holds the slice-t and inter-slice transition parfactors and two
    uniform interface parfactors; the cluster holding the previous-slice
    one is the in-cluster, the one holding the current-slice one is the
    out-cluster. J0 carries one interface parfactor whose cluster gets
    both labels.
    """
    iface = identify_interface(d)
    if not iface:
        raise ModelError("unsupported model: the interface is empty")
    gi0 = interface_parfactor(iface, 0, "gI_0")
    pfs0 = list(d.g0.parfactors) + [gi0]
    j0 = _build(pfs0, _vocab(pfs0, d.prvs))
    for n in j0.nodes:
        if any(p is gi0 for p in n.local):
            n.label = BOTH
    gi_prev = interface_parfactor(iface, -1, "gI_prev")
    gi_cur = interface_parfactor(iface, 0, "gI")
    pfst = list(d.step_parfactors()) + [gi_prev, gi_cur]
    jt = _build(pfst, _vocab(pfst, d.prvs), protect=families(gi_prev))
    for n in jt.nodes:
        has_in = any(p is gi_prev for p in n.local)
        has_out = any(p is gi_cur for p in n.local)
        n.label = BOTH if has_in and has_out else IN if has_in else OUT if has_out else NONE
    return DynamicTemplates(j0, jt, iface)


# ---------------------------------------------------------------------------
# evidence, messages, queries


def _ev_key(item):
    a, v = item
    return (a.name, a.time if a.time is not None else 0, a.params, v)


def enter_evidence(j: FOJtree, ev: Mapping[PRV, str], stats: lve.Stats | None = None) -> FOJtree:
    """Absorb ground-atom evidence into every local model; clears all messages."""
    for a, v in ev.items():
        prev = j.evidence.get(a)
        if prev is not None and prev != v:
            from .model import InconsistentEvidence

            raise InconsistentEvidence(f"{a} observed as both {prev} and {v}")
        if v not in a.range:
            raise ValueError(f"value {v} is outside the range of {a}")
    j.messages.clear()
    if not ev:
        return j
    items = sorted(ev.items(), key=_ev_key)
    for n in j.nodes:
        mine = tuple(kv for kv in items if kv[0].key in n.keys)
        if mine:
            n.local = lve.absorb_all(n.local, mine, stats=stats)
    j.evidence.update(ev)
    return j


def message(j: FOJtree, i: int, k: int, stats: lve.Stats | None = None) -> Parfactor | None:
    """Compute m_{i->k} from i's factors and messages from i's other neighbours."""
    pfs = list(j.factors(i))
    for u in j.adj[i]:
        if u != k:
            m = j.messages[(u, i)]
            if m is not None:
                pfs.append(m)
    res = lve.eliminate(pfs, j.separator(i, k), stats=stats)
    if stats is not None:
        stats.messages += 1
    return None if res is None else lve.normalize_msg(res)


def _inbound_order(j: FOJtree, root: int) -> list[tuple[int, int]]:
    order = []
    stack = [(root, None, False)]
    while stack:
        u, parent, done = stack.pop()
        if done:
            if parent is not None:
                order.append((u, parent))
            continue
        stack.append((u, parent, True))
        for v in reversed(j.adj[u]):
            if v != parent:
                stack.append((v, u, False))
    return order


def collect(j: FOJtree, root: int, stats: lve.Stats | None = None) -> int:
    """Inbound pass: make every message directed toward ``root`` available."""
    n = 0
    for u, v in _inbound_order(j, root):
        if (u, v) not in j.messages:
            j.messages[(u, v)] = message(j, u, v, stats)
            n += 1
    return n


def pass_messages(j: FOJtree, root: int | None = None, inbound_only: bool = False, stats=None) -> int:
    """Calibrate ``j`` (or only collect toward ``root``); returns messages computed.

    Messages still valid in the store are not recomputed.
    """
    if root is None:
        out = j.out_cluster
        root = out.id if out is not None else 0
    n = collect(j, root, stats)
    if inbound_only:
        return n
    for u, v in reversed(_inbound_order(j, root)):
        if (v, u) not in j.messages:
            j.messages[(v, u)] = message(j, v, u, stats)
            n += 1
    return n


def is_calibrated(j: FOJtree) -> bool:
    return all((u, v) in j.messages and (v, u) in j.messages for u, v in j.edges)


def cluster_for(j: FOJtree, atom: PRV) -> Parcluster:
    hits = [n for n in j.nodes if atom.key in n.keys]
    if not hits:
        raise KeyError(f"{atom} does not occur in the jtree")
    return min(hits, key=lambda n: (len(n.prvs), n.id))


def answer_query(j: FOJtree, atom: PRV, stats=None, cluster: int | None = None) -> Distribution:
    """Marginal of a ground atom from its smallest containing cluster."""
    node = cluster_for(j, atom) if cluster is None else j.nodes[cluster]
    if atom in j.evidence:
        p = np.zeros(len(atom.range))
        p[atom.range.index(j.evidence[atom])] = 1.0
        return Distribution(atom.range, p)
    collect(j, node.id, stats)
    pfs = list(j.factors(node.id))
    for u in j.adj[node.id]:
        m = j.messages[(u, node.id)]
        if m is not None:
            pfs.append(m)
    return Distribution(atom.range, lve.marginal(pfs, atom, stats=stats))


# ---------------------------------------------------------------------------
# inspection


def export(j: FOJtree, title: str = "jtree") -> str:
    """Node/edge listing with separators and local-model names."""
    fmt = lambda p: str(p)  # noqa: E731
    lines = [f"jtree {title}"]
    for n in j.nodes:
        tag = "" if n.label == NONE else f" [{n.label}]"
        lines.append(f"node {n.id}{tag} {{{', '.join(fmt(p) for p in n.prvs)}}} : {', '.join(n.local_names)}")
    for i, k in j.edges:
        sep = [p for p in j.nodes[i].prvs if p.key in j.separator(i, k)]
        lines.append(f"edge {i} -- {k} sep {{{', '.join(fmt(p) for p in sep)}}}")
    return "\n".join(lines) + "\n"


def check_properties(j: FOJtree, pfs: Sequence[Parfactor]) -> list[str]:
    """Violations of the jtree properties (empty list when all hold)."""
    problems = []
    n = len(j.nodes)
    if len(j.edges) != n - 1:
        problems.append(f"{len(j.edges)} edges for {n} nodes")
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in j.adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    if len(seen) != n:
        problems.append("graph is not connected")
    for pf in pfs:
        owners = [c for c in j.nodes if any(p is pf for p in c.local)]
        if len(owners) != 1:
            problems.append(f"{pf.name} assigned to {len(owners)} clusters")
            continue
        c = owners[0]
        if not families(pf) <= c.keys:
            problems.append(f"{pf.name} not covered by cluster {c.id}")
        decl = {p.key: p for p in c.prvs}
        for a in pf.args:
            d = decl.get(a.key)
            if d is not None:
                for i, x in enumerate(a.params):
                    if isinstance(x, str) and x not in d.domain(i):
                        problems.append(f"{pf.name} uses a constant outside cluster {c.id}")
    extra = sum(len(c.local) for c in j.nodes) - len(pfs)
    if extra:
        problems.append(f"{extra} unexpected parfactors in local models")
    keys = [c.keys for c in j.nodes]
    if not _rip_holds(keys, j.edges):
        problems.append("running intersection violated")
    return problems
