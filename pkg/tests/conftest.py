import itertools

import numpy as np
import pytest

from ldjt.cli import builtin_path
from ldjt.model import Model, ground, ground_cardinalities, load_model

ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def gex():
    return load_model(builtin_path("gex.model"))


@pytest.fixture(scope="session")
def gex_dyn():
    return load_model(builtin_path("gex_dynamic.model"))


@pytest.fixture(scope="session")
def hmm():
    return load_model(builtin_path("hmm_dynamic.model"))


def joint(pfs, vars_=None):
    """Unnormalised joint over the ground variables of ``pfs``."""
    m = Model(list(pfs))
    cards = ground_cardinalities(m)
    vars_ = list(vars_) if vars_ is not None else sorted(cards, key=repr)
    letters = {v: i for i, v in enumerate(vars_)}
    ops = []
    for f in ground(m):
        ops += [f.table, [letters[v] for v in f.vars]]
    if not ops:
        return vars_, np.ones([cards[v] for v in vars_])
    return vars_, np.einsum(*ops, list(range(len(vars_))))


def record(n: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    ACCEPTANCE.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


def random_model_text(rng, max_pfs=5, dynamic=False):
    """Small random model in the text format (optionally dynamic)."""
    x = [f"x{i}" for i in range(1, rng.randint(1, 3) + 1)]
    y = [f"y{i}" for i in range(1, rng.randint(1, 2) + 1)]
    lines = [f"domain X = {{{', '.join(x)}}}", f"domain X2 = {{{', '.join(x)}}}", f"domain Y = {{{', '.join(y)}}}"]
    prvs = []
    for i in range(rng.randint(2, 5)):
        params = rng.choice([(), ("X",), ("Y",), ("X", "Y")])
        rng_vals = ["a", "b", "c"][: rng.choice([2, 2, 3])]
        name = f"P{i}"
        prvs.append((name, params, rng_vals))
        ps = f"({', '.join(params)})" if params else ""
        lines.append(f"prv {name}{ps} : {{{', '.join(rng_vals)}}}")
    consts = {"X": x, "X2": x, "Y": y}

    def pf_text(name, picks, times):
        atoms = []
        used = set()
        for (pname, params, _), tm in zip(picks, times):
            terms = []
            for p in params:
                r = rng.random()
                if r < 0.15:
                    terms.append(rng.choice(consts[p]))
                elif p == "X" and r < 0.3:
                    terms.append("X2")
                    used.add("X2")
                else:
                    terms.append(p)
                    used.add(p)
            atoms.append(pname + (f"({', '.join(terms)})" if terms else "") + tm)
        cons = []
        for lv in sorted(used):
            if rng.random() < 0.25 and len(consts[lv]) > 1:
                k = rng.randint(1, len(consts[lv]) - 1)
                cons.append(f"{lv} in {{{', '.join(rng.sample(consts[lv], k))}}}")
        rows = []
        for vals in itertools.product(*[p[2] for p in picks]):
            rows.append(f"({', '.join(vals)})={rng.choice([0.5, 1.0, 1.5, 2.0, 3.0, 0.25])}")
        c = f" | {', '.join(cons)}" if cons else ""
        return f"parfactor {name} ({', '.join(atoms)}){c} {{ {'; '.join(rows)} }}"

    def section(n, allow_prev):
        out = []
        for k in range(n):
            picks = rng.sample(prvs, rng.randint(1, min(3, len(prvs))))
            times = [""] * len(picks)
            if allow_prev:
                times = ["@t"] * len(picks)
                if k == 0:
                    picks = [picks[0], picks[0]] if len(picks) == 1 else picks
                    times = ["@t-1"] + ["@t"] * (len(picks) - 1)
            out.append(pf_text(f"f{k}", picks, times))
        return out

    if not dynamic:
        lines += section(rng.randint(1, max_pfs), False)
    else:
        lines.append("[g0]")
        g0 = section(len(prvs), False)
        # every PRV must appear in g0
        for name, params, vals in prvs:
            g0.append(pf_text(f"u{name}", [(name, params, vals)], [""]))
        lines += g0
        lines.append("[g->]")
        lines += section(rng.randint(1, max_pfs), True)
    return "\n".join(lines) + "\n"
