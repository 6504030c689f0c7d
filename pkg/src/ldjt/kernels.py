"""Ground inference kernels with a numba path and a pure-numpy path.

Set ``LDJT_NUMBA=0`` to force the numpy implementations (also used when
numba is not importable). Both paths compute identical quantities; the
benchmark in ``benchmarks/bench_kernels.py`` compares them.
"""
from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised implicitly by the env flag
    if os.environ.get("LDJT_NUMBA", "1") == "0":
        raise ImportError("disabled by LDJT_NUMBA=0")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def _strides(cards: np.ndarray) -> np.ndarray:
    s = np.ones(len(cards), dtype=np.int64)
    for i in range(len(cards) - 2, -1, -1):
        s[i] = s[i + 1] * cards[i + 1]
    return s


def pack_factors(scopes: list[list[int]], tables: list[np.ndarray], cards: np.ndarray):
    """Flatten factors into padded index arrays for the kernels."""
    width = max((len(s) for s in scopes), default=1) or 1
    fvars = np.full((len(scopes), width), -1, dtype=np.int64)
    fstr = np.zeros((len(scopes), width), dtype=np.int64)
    offs = np.zeros(len(scopes) + 1, dtype=np.int64)
    for f, s in enumerate(scopes):
        fvars[f, : len(s)] = s
        fstr[f, : len(s)] = _strides(cards[np.asarray(s, dtype=np.int64)]) if s else []
        offs[f + 1] = offs[f] + tables[f].size
    flat = np.concatenate([np.ascontiguousarray(t, dtype=np.float64).ravel() for t in tables]) if tables else np.zeros(0)
    return fvars, fstr, offs, flat


# ---------------------------------------------------------------------------
# enumeration: all single-variable marginals at once


def _enum_numpy(cards, fvars, fstr, offs, flat, evidence, chunk=1 << 15):
    n = len(cards)
    free = np.flatnonzero(evidence < 0)
    fcards = cards[free]
    total = int(np.prod(fcards)) if len(free) else 1
    out = np.zeros((n, int(cards.max()) if n else 1))
    fst = _strides(fcards) if len(free) else np.zeros(0, dtype=np.int64)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk), dtype=np.int64)
        asg = np.empty((len(idx), n), dtype=np.int64)
        asg[:] = evidence
        for j, v in enumerate(free):
            asg[:, v] = (idx // fst[j]) % fcards[j]
        w = np.ones(len(idx))
        for f in range(len(offs) - 1):
            pos = np.full(len(idx), offs[f], dtype=np.int64)
            for k in range(fvars.shape[1]):
                v = fvars[f, k]
                if v < 0:
                    break
                pos += asg[:, v] * fstr[f, k]
            w *= flat[pos]
        for v in range(n):
            out[v, : cards[v]] += np.bincount(asg[:, v], weights=w, minlength=cards[v])
    return out


if HAVE_NUMBA:

    @njit(cache=True)
    def _enum_numba(cards, fvars, fstr, offs, flat, evidence):  # pragma: no cover - compiled
        n = cards.shape[0]
        maxc = 1
        for v in range(n):
            if cards[v] > maxc:
                maxc = cards[v]
        out = np.zeros((n, maxc))
        asg = evidence.copy()
        free = np.flatnonzero(evidence < 0)
        for v in free:
            asg[v] = 0
        nf = offs.shape[0] - 1
        while True:
            w = 1.0
            for f in range(nf):
                pos = offs[f]
                for k in range(fvars.shape[1]):
                    v = fvars[f, k]
                    if v < 0:
                        break
                    pos += asg[v] * fstr[f, k]
                w *= flat[pos]
                if w == 0.0:
                    break
            if w != 0.0:
                for v in range(n):
                    out[v, asg[v]] += w
            j = free.shape[0] - 1
            while j >= 0:
                v = free[j]
                asg[v] += 1
                if asg[v] < cards[v]:
                    break
                asg[v] = 0
                j -= 1
            if j < 0:
                break
        return out


def enumerate_marginals(cards, fvars, fstr, offs, flat, evidence, backend: str | None = None) -> np.ndarray:
    """Unnormalised marginals ``out[v, value]`` of every ground variable."""
    backend = backend or BACKEND
    cards = np.asarray(cards, dtype=np.int64)
    evidence = np.asarray(evidence, dtype=np.int64)
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend unavailable")
        return _enum_numba(cards, fvars, fstr, offs, flat, evidence)
    return _enum_numpy(cards, fvars, fstr, offs, flat, evidence)


# ---------------------------------------------------------------------------
# ground variable elimination step


def _product_sum_numpy(scopes, tables, out_vars, v):
    letters = {}
    ops = []
    for s, t in zip(scopes, tables):
        ops.append(t)
        ops.append([letters.setdefault(x, len(letters)) for x in s])
    letters.setdefault(v, len(letters))
    return np.einsum(*ops, [letters[x] for x in out_vars])


if HAVE_NUMBA:

    @njit(cache=True)
    def _product_sum_numba(ucards, fmap, fstr, offs, flat, nout, vpos):  # pragma: no cover - compiled
        # joint assignment over union vars; the eliminated var sits at vpos
        nu = ucards.shape[0]
        total = 1
        for i in range(nu):
            total *= ucards[i]
        out_size = total // ucards[vpos]
        out = np.zeros(out_size)
        asg = np.zeros(nu, dtype=np.int64)
        nf = offs.shape[0] - 1
        for _ in range(total):
            w = 1.0
            for f in range(nf):
                pos = offs[f]
                for k in range(fmap.shape[1]):
                    u = fmap[f, k]
                    if u < 0:
                        break
                    pos += asg[u] * fstr[f, k]
                w *= flat[pos]
            o = 0
            for i in range(nu):
                if i != vpos:
                    o = o * ucards[i] + asg[i]
            out[o] += w
            j = nu - 1
            while j >= 0:
                asg[j] += 1
                if asg[j] < ucards[j]:
                    break
                asg[j] = 0
                j -= 1
        return out


def product_sum(scopes, tables, cards: dict, v, backend: str | None = None):
    """Multiply factors and sum out ``v``; returns ``(out_vars, table)``."""
    backend = backend or BACKEND
    union = []
    for s in scopes:
        for x in s:
            if x not in union:
                union.append(x)
    out_vars = [x for x in union if x != v]
    if v not in union:
        union.append(v)
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend unavailable")
        pos = {x: i for i, x in enumerate(union)}
        ucards = np.array([cards[x] for x in union], dtype=np.int64)
        fvars, fstr, offs, flat = pack_factors([[pos[x] for x in s] for s in scopes], list(tables), ucards)
        out = _product_sum_numba(ucards, fvars, fstr, offs, flat, len(out_vars), pos[v])
        return out_vars, out.reshape([cards[x] for x in out_vars])
    return out_vars, _product_sum_numpy(scopes, tables, out_vars, v)
