"""Command-line driver: ``ldjt run|verify|bench``.

Query/evidence files are CSV with rows ``step,kind,term,value_or_lag``:
``kind`` is ``query`` (last column a lag, negative to predict ahead) or
``evidence`` (last column the observed value).  ``step`` may be ``*`` for
every step.  Lines starting with ``#`` and a ``step,kind,...`` header are
skipped.

Exit codes: 0 ok, 1 usage, 2 parse or input error, 3 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import random
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import lve, oracle
from . import temporal as tp
from .model import (
    DynamicModel,
    Evidence,
    InconsistentEvidence,
    ModelError,
    ModelSyntaxError,
    Model,
    parse_model,
    parse_term,
    unroll,
)

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_VERIFY = 0, 1, 2, 3

BENCH_TERMS = ("Server", "User(x1)", "Admin(y1)")
BENCH_LAGS = (0, 2, 5, 10)


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def builtin_path(name: str) -> Path:
    return Path(str(resources.files("ldjt") / "data" / name))


def read_model(name: str) -> Model | DynamicModel:
    p = Path(name)
    if not p.exists():
        cand = builtin_path(name if name.endswith(".model") else name + ".model")
        if not cand.exists():
            raise InputError(f"model file {name} not found")
        p = cand
    return parse_model(p.read_text())


def read_schedule(path: str | None, d: DynamicModel, sched: tp.Schedule, ev: Evidence) -> int:
    """Fill ``sched`` and ``ev`` from a CSV file; returns the largest step seen."""
    if path is None:
        return 0
    last = 0
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            row = [c.strip() for c in row]
            if lineno == 1 and row[0] == "step":
                continue
            if len(row) != 4:
                raise InputError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            step_s, kind, term_s, last_col = row
            try:
                step = None if step_s == "*" else int(step_s)
                if step is not None and step < 0:
                    raise ValueError
            except ValueError:
                raise InputError(f"{path}:{lineno}: bad step {step_s!r}") from None
            try:
                term = parse_term(term_s, d)
            except ModelError as e:
                raise InputError(f"{path}:{lineno}: {e}") from None
            if kind == "query":
                try:
                    lag = int(last_col)
                except ValueError:
                    raise InputError(f"{path}:{lineno}: bad lag {last_col!r}") from None
                if step is None:
                    sched.every.append((term, lag))
                else:
                    sched.terms.setdefault(step, []).append((term, lag))
            elif kind == "evidence":
                if step is None:
                    raise InputError(f"{path}:{lineno}: evidence needs a concrete step")
                try:
                    ev.add(step, term, last_col)
                except (ModelError, InconsistentEvidence) as e:
                    raise InputError(f"{path}:{lineno}: {e}") from None
            else:
                raise InputError(f"{path}:{lineno}: unknown kind {kind!r}")
            if step is not None:
                last = max(last, step)
    return last


def strategy_from(args) -> tp.Strategy:
    if args.strategy == "keep":
        return tp.keep_window(args.window)
    if args.strategy == "reinst":
        return tp.reinstantiate_all()
    return tp.combined(args.window)


def _fmt_dist(dist) -> str:
    return " ".join(f"{v}={p:.10f}" for v, p in zip(dist.values, dist.probs))


def answers_table(answers: list[tp.Answer]) -> list[list]:
    rows = []
    for a in answers:
        q = a.query
        rows.append(
            [q.issued, q.target, q.issued - q.target, q.kind, str(q.term), int(a.clamped)]
            + [f"{v}={p:.12g}" for v, p in zip(a.dist.values, a.dist.probs)]
        )
    return rows


def cmd_run(args) -> int:
    d = read_model(args.model)
    if not isinstance(d, DynamicModel):
        raise InputError("run needs a dynamic model")
    sched, ev = tp.Schedule(), Evidence()
    last = 0
    for path in (args.queries, args.evidence):
        last = max(last, read_schedule(path, d, sched, ev))
    T = args.max_t if args.max_t is not None else last
    eng = tp.Engine(d, strategy_from(args))
    answers = tp.run_session(d, sched, ev, T, engine=eng)
    for a in answers:
        q = a.query
        flag = " [clamped]" if a.clamped else ""
        print(f"t={q.issued} pi={q.target} lag={q.issued - q.target} {q.kind} {q.term}: {_fmt_dist(a.dist)}{flag}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["issued", "target", "lag", "kind", "term", "clamped", "distribution"])
            for r in answers_table(answers):
                w.writerow(r[:6] + [" ".join(r[6:])])
    if args.checkpoint:
        eng.checkpoint(args.checkpoint)
    return EXIT_OK


def random_schedule(d: DynamicModel, T: int, n_queries: int, rng: random.Random, max_ahead: int = 3):
    """Random evidence (mostly on parameterless PRVs) and ``n_queries`` random queries."""
    terms = []
    for name in sorted(d.prvs):
        prv = d.prvs[name]
        pools = [prv.domain(i) for i in range(len(prv.params))]
        for combo in _product(pools):
            terms.append(parse_term(name + (f"({','.join(combo)})" if combo else ""), d))
    plain = [g for g in terms if not g.constants] or terms
    ev = Evidence()
    for s in range(T + 1):
        for g in plain:
            if rng.random() < 0.5:
                ev.add(s, g, rng.choice(g.prv.range))
        if rng.random() < 0.3:
            g = rng.choice(terms)
            if (s, g) not in ev.entries:
                ev.add(s, g, rng.choice(g.prv.range))
    sched = tp.Schedule()
    for _ in range(n_queries):
        s = rng.randint(0, T)
        lag = rng.randint(-max_ahead, s) if s else rng.randint(-max_ahead, 0)
        sched.terms.setdefault(s, []).append((rng.choice(terms), lag))
    return sched, ev


def _product(pools):
    out = [()]
    for p in pools:
        out = [o + (c,) for o in out for c in p]
    return out


def reference(d: DynamicModel, a: tp.Answer, ev: Evidence, bound: int) -> np.ndarray:
    q = a.query
    m = unroll(d, max(q.issued, q.target))
    e = ev.upto(q.issued)
    try:
        return oracle.oracle_marginal(m, q.term, e, time=q.target, bound=bound).probs
    except oracle.OracleBoundError:
        return oracle.oracle_ve_marginal(m, q.term, e, time=q.target).probs


def cmd_verify(args) -> int:
    d = read_model(args.model)
    if not isinstance(d, DynamicModel):
        raise InputError("verify needs a dynamic model")
    rng = random.Random(args.seed)
    sched, ev = random_schedule(d, args.max_t, args.n_queries, rng)
    answers = tp.run_session(d, sched, ev, args.max_t, strategy_from(args))
    worst = 0.0
    for a in answers:
        worst = max(worst, float(np.max(np.abs(reference(d, a, ev, args.bound) - a.dist.probs))))
    print(f"oracle: {len(answers)} queries, max deviation {worst:.3e}")
    ok = worst <= args.tol
    if args.unrolled:
        un = tp.run_unrolled(d, sched, ev, args.max_t)
        dev = max((float(np.max(np.abs(x.dist.probs - y.dist.probs))) for x, y in zip(answers, un)), default=0.0)
        print(f"unrolled: {len(un)} queries, max deviation {dev:.3e}")
        ok = ok and dev <= args.tol
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_VERIFY


def bench_schedule(d: DynamicModel) -> tp.Schedule:
    terms = [parse_term(t, d) for t in BENCH_TERMS]
    return tp.Schedule(every=[(g, lag) for g in terms for lag in BENCH_LAGS])


def bench_rows(d: DynamicModel, max_ts, strategy: tp.Strategy, unrolled_cutoff: int, sched=None):
    """Time LDJT (and unrolled LJT up to the cutoff) for each maxT."""
    sched = sched or bench_schedule(d)
    ev = Evidence()
    rows = []
    for T in max_ts:
        st = lve.Stats()
        t0 = time.perf_counter()
        tp.run_session(d, sched, ev, T - 1, strategy, stats=st)
        rows.append(("ldjt", T, time.perf_counter() - t0, st.messages, st.eliminations))
        if T <= unrolled_cutoff:
            st = lve.Stats()
            t0 = time.perf_counter()
            tp.run_unrolled(d, sched, ev, T - 1, stats=st)
            rows.append(("unrolled", T, time.perf_counter() - t0, st.messages, st.eliminations))
    return rows


def cmd_bench(args) -> int:
    d = read_model(args.model)
    if not isinstance(d, DynamicModel):
        raise InputError("bench needs a dynamic model")
    try:
        max_ts = [int(x) for x in args.max_t.split(",") if x.strip()]
    except ValueError:
        raise InputError(f"bad --max-t list {args.max_t!r}") from None
    if any(t < 1 for t in max_ts):
        raise InputError("maxT values must be positive")
    rows = bench_rows(d, max_ts, strategy_from(args), args.unrolled_cutoff)
    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["engine", "maxT", "seconds", "messages", "eliminations"])
        for eng, T, sec, msg, eli in rows:
            w.writerow([eng, T, f"{sec:.6f}", msg, eli])
    finally:
        if out is not sys.stdout:
            out.close()
    if args.plot_data:
        by = {(e, T): s for e, T, s, *_ in rows}
        with open(args.plot_data, "w") as fh:
            fh.write("# maxT ldjt_seconds unrolled_seconds\n")
            for T in max_ts:
                u = by.get(("unrolled", T))
                fh.write(f"{T} {by[('ldjt', T)]:.6f} {'NaN' if u is None else f'{u:.6f}'}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ldjt", description="Lifted dynamic junction tree inference.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def common(sp, max_t_default=None, max_t_type=int):
        sp.add_argument("--model", default="gex_dynamic", help="model file or builtin name (default gex_dynamic)")
        sp.add_argument("--strategy", choices=("keep", "reinst", "combined"), default="combined")
        sp.add_argument("--window", type=int, default=10, help="jtrees kept in memory (default 10)")
        sp.add_argument("--max-t", type=max_t_type, default=max_t_default)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--csv", default=None, help="write CSV output here")

    r = sub.add_parser("run", help="answer a query schedule")
    common(r)
    r.add_argument("--queries", default=None)
    r.add_argument("--evidence", default=None)
    r.add_argument("--checkpoint", default=None, help="write per-step evidence/alpha records")
    r.set_defaults(fn=cmd_run)

    v = sub.add_parser("verify", help="compare against the ground oracle")
    common(v, max_t_default=4)
    v.add_argument("--n-queries", type=int, default=50)
    v.add_argument("--tol", type=float, default=1e-9)
    v.add_argument("--bound", type=int, default=oracle.DEFAULT_BOUND)
    v.add_argument("--unrolled", action="store_true", help="also compare with unrolled static inference")
    v.set_defaults(fn=cmd_verify)

    b = sub.add_parser("bench", help="runtime over maximum time steps")
    common(b, max_t_default="10,100,1000,10000", max_t_type=str)
    b.add_argument("--unrolled-cutoff", type=int, default=8)
    b.add_argument("--plot-data", default=None, help="gnuplot data file")
    b.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "window", 1) is not None and args.window < 0:
        parser.error("--window must be non-negative")
    try:
        return args.fn(args)
    except (InputError, ModelSyntaxError, ModelError, OSError) as e:
        print(f"ldjt: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (InconsistentEvidence, KeyError, tp.WindowError) as e:
        print(f"ldjt: {e}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
