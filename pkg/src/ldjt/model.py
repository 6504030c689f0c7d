"""Lifted model types, the text model format, grounding and unrolling.

A parfactor ``phi(A1, ..., An) | C`` stands for one ground factor per
logvar assignment allowed by ``C``; all of them share the table ``phi``.
Constraints are Cartesian: every logvar gets its own allowed set.

Time is carried on PRVs. Static models use ``time=None``. Inside a
dynamic model the initial model lives at time 0 and the transition model
uses relative slices ``-1`` (previous) and ``0`` (current). ``unroll``
rewrites relative slices into absolute step indices.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Mapping, Sequence, Union

import numpy as np


class ModelError(ValueError):
    """Invalid model structure or content."""


class ModelSyntaxError(ModelError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class InconsistentEvidence(ValueError):
    """Evidence that contradicts itself or has zero probability."""


# ---------------------------------------------------------------------------
# core types


@dataclass(frozen=True)
class Logvar:
    name: str
    domain: tuple[str, ...]

    def __post_init__(self):
        if not self.domain:
            raise ModelError(f"logvar {self.name} has an empty domain")
        if len(set(self.domain)) != len(self.domain):
            raise ModelError(f"logvar {self.name} has duplicate constants")

    def __repr__(self):
        return self.name


Term = Union[Logvar, str]


@dataclass(frozen=True)
class PRV:
    """A parameterised random variable.

    ``params`` holds logvars; a parameter position may also hold a
    constant, which is how partially or fully grounded PRVs appear after
    shattering. ``sig`` keeps the declared parameter logvars so that the
    domain of a constant position stays known.
    """

    name: str
    params: tuple[Term, ...]
    range: tuple[str, ...]
    time: int | None = None
    sig: tuple[Logvar, ...] = ()

    def __post_init__(self):
        if not self.sig:
            if not all(isinstance(p, Logvar) for p in self.params):
                raise ModelError(f"PRV {self.name} with constants needs a declared signature")
            object.__setattr__(self, "sig", self.params)
        if len(self.sig) != len(self.params):
            raise ModelError(f"PRV {self.name} has {len(self.params)} parameters, declared {len(self.sig)}")
        if len(self.range) < 2:
            raise ModelError(f"PRV {self.name} needs at least two range values")
        lvs = [p for p in self.params if isinstance(p, Logvar)]
        if len(set(lvs)) != len(lvs):
            raise ModelError(f"PRV {self.name} repeats a logvar")

    @property
    def key(self) -> tuple[str, int | None]:
        """Family identity: PRVs with equal keys describe the same randvars."""
        return (self.name, self.time)

    @property
    def logvars(self) -> tuple[Logvar, ...]:
        return tuple(p for p in self.params if isinstance(p, Logvar))

    @property
    def is_ground(self) -> bool:
        return not any(isinstance(p, Logvar) for p in self.params)

    def at(self, time: int | None) -> PRV:
        return PRV(self.name, self.params, self.range, time, self.sig)

    def with_params(self, params: tuple[Term, ...]) -> PRV:
        return PRV(self.name, params, self.range, self.time, self.sig)

    def domain(self, i: int) -> tuple[str, ...]:
        return self.sig[i].domain

    def __str__(self):
        s = self.name
        if self.params:
            s += "(" + ",".join(p.name if isinstance(p, Logvar) else p for p in self.params) + ")"
        if self.time is not None:
            s += f"@{self.time}"
        return s

    __repr__ = __str__


def term_str(t: Term) -> str:
    return t.name if isinstance(t, Logvar) else t


@dataclass(frozen=True)
class Constraint:
    """Cartesian constraint: logvar -> allowed constants."""

    items: tuple[tuple[Logvar, frozenset[str]], ...]

    @staticmethod
    def top(logvars: Iterable[Logvar]) -> Constraint:
        return Constraint.of({lv: frozenset(lv.domain) for lv in logvars})

    @staticmethod
    def of(allowed: Mapping[Logvar, Iterable[str]]) -> Constraint:
        items = []
        for lv, vals in allowed.items():
            vals = frozenset(vals)
            if not vals:
                raise ModelError(f"empty allowed set for logvar {lv.name}")
            if not vals <= set(lv.domain):
                bad = sorted(vals - set(lv.domain))
                raise ModelError(f"constants {bad} are outside the domain of {lv.name}")
            items.append((lv, vals))
        items.sort(key=lambda kv: kv[0].name)
        return Constraint(tuple(items))

    @cached_property
    def _map(self) -> dict[Logvar, frozenset[str]]:
        return dict(self.items)

    def __getitem__(self, lv: Logvar) -> frozenset[str]:
        return self._map[lv]

    def __contains__(self, lv: Logvar) -> bool:
        return lv in self._map

    @property
    def logvars(self) -> tuple[Logvar, ...]:
        return tuple(lv for lv, _ in self.items)

    def count(self, logvars: Iterable[Logvar] | None = None) -> int:
        """Number of allowed assignments of ``logvars`` (default: all)."""
        lvs = self.logvars if logvars is None else logvars
        n = 1
        for lv in lvs:
            n *= len(self._map[lv])
        return n

    def restrict(self, logvars: Iterable[Logvar]) -> Constraint:
        keep = set(logvars)
        return Constraint(tuple(kv for kv in self.items if kv[0] in keep))

    def assignments(self) -> Iterator[dict[Logvar, str]]:
        lvs = self.logvars
        pools = [sorted(self._map[lv], key=lv.domain.index) for lv in lvs]
        for combo in itertools.product(*pools):
            yield dict(zip(lvs, combo))

    def is_top(self) -> bool:
        return all(len(v) == len(lv.domain) for lv, v in self.items)

    def __str__(self):
        return ", ".join(f"{lv.name} in {{{','.join(sorted(v, key=lv.domain.index))}}}" for lv, v in self.items)


_SCOPES: dict[tuple, "Scope"] = {}


class Scope:
    """Interned (args, constraint) pair; the structural part of a parfactor.

    Interning makes structurally equal parfactors share one Scope object so
    that plan caches can key on identity.
    """

    __slots__ = ("args", "constraint", "_hash", "__weakref__")

    def __new__(cls, args: tuple[PRV, ...], constraint: Constraint):
        key = (args, constraint)
        s = _SCOPES.get(key)
        if s is None:
            s = object.__new__(cls)
            s.args = args
            s.constraint = constraint
            s._hash = hash(key)
            _SCOPES[key] = s
        return s

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return self is other

    def __reduce__(self):
        return (Scope, (self.args, self.constraint))

    def __repr__(self):
        return f"Scope({', '.join(map(str, self.args))} | {self.constraint})"


@dataclass(frozen=True, eq=False)
class Parfactor:
    """``table`` has one axis per argument, in argument order.

    ``neutral`` marks parfactors that are all-ones by construction (the
    interface parfactors); inference may skip them without looking at the
    numbers.
    """

    scope: Scope
    table: np.ndarray
    name: str = ""
    neutral: bool = False

    @staticmethod
    def make(
        args: Sequence[PRV],
        table,
        constraint: Constraint | None = None,
        name: str = "",
        neutral: bool = False,
    ) -> Parfactor:
        args = tuple(args)
        lvs = []
        for a in args:
            for lv in a.logvars:
                if lv not in lvs:
                    lvs.append(lv)
        if constraint is None:
            constraint = Constraint.top(lvs)
        elif set(constraint.logvars) != set(lvs):
            raise ModelError(f"constraint of {name or 'parfactor'} must cover exactly its logvars")
        table = np.asarray(table, dtype=float)
        shape = tuple(len(a.range) for a in args)
        if table.shape != shape:
            raise ModelError(f"table of {name or 'parfactor'} has shape {table.shape}, expected {shape}")
        return Parfactor(Scope(args, constraint), table, name, neutral)

    @property
    def args(self) -> tuple[PRV, ...]:
        return self.scope.args

    @property
    def constraint(self) -> Constraint:
        return self.scope.constraint

    @property
    def logvars(self) -> tuple[Logvar, ...]:
        return self.scope.constraint.logvars

    def with_table(self, table: np.ndarray) -> Parfactor:
        return Parfactor(self.scope, table, self.name)

    def n_groundings(self) -> int:
        return self.constraint.count()

    def __repr__(self):
        c = f" | {self.constraint}" if self.logvars else ""
        return f"{self.name or 'pf'}({', '.join(map(str, self.args))}){c}"


@dataclass(frozen=True)
class GroundPRV:
    """A fully instantiated PRV such as ``User(x1)``."""

    prv: PRV
    constants: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.constants) != len(self.prv.params):
            raise ModelError(f"{self.prv.name} expects {len(self.prv.params)} constants")
        for i, c in enumerate(self.constants):
            if c not in self.prv.domain(i):
                raise ModelError(f"constant {c} is outside the domain of {self.prv.name}")

    @property
    def assignment(self) -> dict[Logvar, str]:
        return {p: c for p, c in zip(self.prv.params, self.constants) if isinstance(p, Logvar)}

    def atom(self, time: int | None = None) -> PRV:
        """The ground PRV occurrence (constants in place of logvars)."""
        return PRV(self.prv.name, self.constants, self.prv.range, time, self.prv.sig)

    def __str__(self):
        return self.prv.name + (f"({','.join(self.constants)})" if self.constants else "")


@dataclass(frozen=True)
class Distribution:
    values: tuple[str, ...]
    probs: np.ndarray

    def __getitem__(self, value: str) -> float:
        return float(self.probs[self.values.index(value)])

    def as_dict(self) -> dict[str, float]:
        return {v: float(p) for v, p in zip(self.values, self.probs)}


@dataclass
class Model:
    parfactors: list[Parfactor]
    logvars: dict[str, Logvar] = field(default_factory=dict)
    prvs: dict[str, PRV] = field(default_factory=dict)

    def __post_init__(self):
        ranges: dict[tuple, tuple[str, ...]] = {}
        for pf in self.parfactors:
            for a in pf.args:
                for lv in a.logvars:
                    if self.logvars and self.logvars.get(lv.name) != lv:
                        raise ModelError(f"undeclared logvar {lv.name} in {pf.name}")
                prev = ranges.setdefault((a.name, len(a.params)), a.range)
                if prev != a.range:
                    raise ModelError(f"PRV {a.name} is used with two different ranges")
            if not np.all(np.isfinite(pf.table)) or np.any(pf.table < 0):
                raise ModelError(f"parfactor {pf.name} has negative or non-finite entries")
            if not np.any(pf.table > 0):
                raise ModelError(f"parfactor {pf.name} has no positive entry")

    def vocabulary(self) -> dict[tuple[str, int | None], PRV]:
        out = {}
        for pf in self.parfactors:
            for a in pf.args:
                out.setdefault(a.key, a)
        return out

    def find_prv(self, name: str) -> PRV:
        if name in self.prvs:
            return self.prvs[name]
        for pf in self.parfactors:
            for a in pf.args:
                if a.name == name:
                    return a
        raise ModelError(f"unknown PRV {name}")


@dataclass
class DynamicModel:
    g0: Model
    transition: Model
    logvars: dict[str, Logvar] = field(default_factory=dict)
    prvs: dict[str, PRV] = field(default_factory=dict)

    def __post_init__(self):
        if not self.inter_slice():
            raise ModelError("transition model has no inter-slice parfactor")
        names0 = {a.name for pf in self.g0.parfactors for a in pf.args}
        for pf in self.transition.parfactors:
            for a in pf.args:
                if a.time == 0 and a.name not in names0:
                    raise ModelError(f"PRV {a.name} of slice t does not occur in the initial model")

    def inter_slice(self) -> list[Parfactor]:
        return [pf for pf in self.transition.parfactors if {a.time for a in pf.args} == {-1, 0}]

    def step_parfactors(self) -> list[Parfactor]:
        """Transition parfactors that are new at each step: slice-t and inter-slice ones."""
        return [pf for pf in self.transition.parfactors if any(a.time == 0 for a in pf.args)]

    @cached_property
    def interface(self) -> tuple[PRV, ...]:
        """Slice t-1 PRVs that share a transition parfactor with a slice-t PRV."""
        out: dict[tuple, PRV] = {}
        for pf in self.transition.parfactors:
            if any(a.time == 0 for a in pf.args):
                for a in pf.args:
                    if a.time == -1:
                        out.setdefault(a.key, a)
        return tuple(sorted(out.values(), key=_prv_order))

    def find_prv(self, name: str) -> PRV:
        if name in self.prvs:
            return self.prvs[name]
        return self.g0.find_prv(name)


def _prv_order(p: PRV):
    return (p.time if p.time is not None else 0, p.name, tuple(map(term_str, p.params)))


# ---------------------------------------------------------------------------
# evidence and queries


@dataclass
class Evidence:
    """Observed values keyed by (step, ground PRV)."""

    entries: dict[tuple[int, GroundPRV], str] = field(default_factory=dict)

    def add(self, step: int, term: GroundPRV, value: str) -> None:
        if value not in term.prv.range:
            raise ModelError(f"value {value} is outside the range of {term}")
        prev = self.entries.get((step, term))
        if prev is not None and prev != value:
            raise InconsistentEvidence(f"{term} at step {step} observed as both {prev} and {value}")
        self.entries[(step, term)] = value

    def at(self, step: int) -> dict[GroundPRV, str]:
        return {g: v for (s, g), v in self.entries.items() if s == step}

    def steps(self) -> list[int]:
        return sorted({s for s, _ in self.entries})

    def upto(self, step: int) -> Evidence:
        return Evidence({k: v for k, v in self.entries.items() if k[0] <= step})

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class TemporalQuery:
    term: GroundPRV
    target: int
    issued: int

    def __post_init__(self):
        if self.target < 0 or self.issued < 0:
            raise ModelError("query steps must be non-negative")

    @property
    def kind(self) -> str:
        if self.target == self.issued:
            return "filtering"
        return "prediction" if self.target > self.issued else "smoothing"


def parse_term(text: str, model: Model | DynamicModel) -> GroundPRV:
    """Parse ``User(x1)`` or ``Server`` against a model vocabulary."""
    m = re.fullmatch(r"\s*([A-Za-z_][\w]*)\s*(?:\(([^)]*)\))?\s*", text)
    if not m:
        raise ModelError(f"cannot parse term {text!r}")
    prv = model.find_prv(m.group(1))
    consts = tuple(c.strip() for c in m.group(2).split(",")) if m.group(2) else ()
    if prv.time is not None:
        prv = prv.at(None)
    return GroundPRV(prv, consts)


# ---------------------------------------------------------------------------
# grounding and unrolling


@dataclass(frozen=True)
class GroundFactor:
    """A factor over ground variables ``(name, constants, time)``."""

    vars: tuple[tuple, ...]
    table: np.ndarray


def ground_var(atom: PRV, assignment: Mapping[Logvar, str]) -> tuple:
    consts = tuple(assignment[p] if isinstance(p, Logvar) else p for p in atom.params)
    return (atom.name, consts, atom.time)


def ground_parfactor(pf: Parfactor) -> list[GroundFactor]:
    out = []
    for asg in pf.constraint.assignments():
        vs = [ground_var(a, asg) for a in pf.args]
        out.append(_dedupe(vs, pf.table))
    return out


def _dedupe(vs: list[tuple], table: np.ndarray) -> GroundFactor:
    """Collapse repeated ground variables onto a diagonal."""
    if len(set(vs)) == len(vs):
        return GroundFactor(tuple(vs), table)
    letters = []
    uniq: list[tuple] = []
    for v in vs:
        if v not in uniq:
            uniq.append(v)
        letters.append(uniq.index(v))
    return GroundFactor(tuple(uniq), np.einsum(table, letters, list(range(len(uniq)))))


def ground(m: Model) -> list[GroundFactor]:
    out = []
    for pf in m.parfactors:
        out.extend(ground_parfactor(pf))
    return out


def ground_cardinalities(m: Model) -> dict[tuple, int]:
    card = {}
    for pf in m.parfactors:
        for asg in pf.constraint.assignments():
            for a in pf.args:
                card[ground_var(a, asg)] = len(a.range)
    return card


def shift_prv(p: PRV, offset: int) -> PRV:
    return p if p.time is None else p.at(p.time + offset)


def shift_parfactor(pf: Parfactor, offset: int, name: str | None = None) -> Parfactor:
    args = tuple(shift_prv(a, offset) for a in pf.args)
    return Parfactor(Scope(args, pf.constraint), pf.table, pf.name if name is None else name, pf.neutral)


def unroll(d: DynamicModel, T: int) -> Model:
    """Static model over steps 0..T with absolute time indices."""
    if T < 0:
        raise ModelError("T must be non-negative")
    pfs = [Parfactor(pf.scope, pf.table, f"{pf.name}_0", pf.neutral) for pf in d.g0.parfactors]
    step = d.step_parfactors()
    for t in range(1, T + 1):
        pfs.extend(shift_parfactor(pf, t, f"{pf.name}_{t}") for pf in step)
    return Model(pfs, dict(d.logvars), dict(d.prvs))


# ---------------------------------------------------------------------------
# text format

_TOKEN = re.compile(
    r"(?P<ws>[ \t\r]+)|(?P<nl>\n)|(?P<comment>#[^\n]*)"
    r"|(?P<num>[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?(?![\w]))"
    r"|(?P<ident>[A-Za-z_][\w]*|\d[\w]*)"
    r"|(?P<punct>->|[{}()\[\],;=|:@-])"
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    line, col, pos = 1, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ModelSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        s = m.group()
        if kind == "nl":
            line, col = line + 1, 1
        else:
            if kind not in ("ws", "comment"):
                toks.append(_Tok(kind, s, line, col))
            col += len(s)
        pos = m.end()
    toks.append(_Tok("eof", "", line, col))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.logvars: dict[str, Logvar] = {}
        self.prvs: dict[str, PRV] = {}
        self.section: str | None = None
        self.sections: dict[str | None, list[Parfactor]] = {None: [], "g0": [], "g->": []}

    # token helpers
    def peek(self, k: int = 0) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.peek()
        raise ModelSyntaxError(msg, tok.line, tok.col)

    def expect(self, text: str) -> _Tok:
        t = self.next()
        if t.text != text:
            self.error(f"expected {text!r}, found {t.text or 'end of input'!r}", t)
        return t

    def symbol(self) -> str:
        t = self.next()
        if t.kind not in ("ident", "num"):
            self.error(f"expected a symbol, found {t.text or 'end of input'!r}", t)
        return t.text

    def ident(self) -> _Tok:
        t = self.next()
        if t.kind != "ident":
            self.error(f"expected an identifier, found {t.text or 'end of input'!r}", t)
        return t

    def symbol_set(self) -> list[str]:
        self.expect("{")
        out = [self.symbol()]
        while self.peek().text == ",":
            self.next()
            out.append(self.symbol())
        self.expect("}")
        return out

    # grammar
    def parse(self):
        if self.peek().kind == "eof":
            self.error("empty model document")
        while self.peek().kind != "eof":
            t = self.peek()
            if t.text == "[":
                self.section_header()
            elif t.text == "domain":
                self.domain()
            elif t.text == "prv":
                self.prv_decl()
            elif t.text == "parfactor":
                self.parfactor()
            else:
                self.error(f"unexpected {t.text!r}")
        return self.build()

    def section_header(self):
        self.expect("[")
        t = self.ident()
        if t.text == "g0":
            name = "g0"
        elif t.text == "g" and self.peek().text == "->":
            self.next()
            name = "g->"
        else:
            self.error("section must be [g0] or [g->]", t)
        self.expect("]")
        if self.section is None and self.sections[None]:
            self.error("parfactors outside a section cannot be mixed with sections", t)
        self.section = name

    def domain(self):
        self.expect("domain")
        t = self.ident()
        self.expect("=")
        vals = self.symbol_set()
        if t.text in self.logvars:
            self.error(f"logvar {t.text} declared twice", t)
        if len(set(vals)) != len(vals):
            self.error(f"duplicate constants in domain {t.text}", t)
        self.logvars[t.text] = Logvar(t.text, tuple(vals))

    def prv_decl(self):
        self.expect("prv")
        t = self.ident()
        params = []
        if self.peek().text == "(":
            self.next()
            while True:
                lt = self.ident()
                if lt.text not in self.logvars:
                    self.error(f"undeclared logvar {lt.text}", lt)
                params.append(self.logvars[lt.text])
                if self.peek().text == ",":
                    self.next()
                    continue
                self.expect(")")
                break
        if self.peek().text == "@":
            self.time_suffix()
        self.expect(":")
        rng = self.symbol_set()
        if len(rng) < 2:
            self.error(f"PRV {t.text} needs at least two range values", t)
        if t.text in self.prvs:
            self.error(f"PRV {t.text} declared twice", t)
        if len(set(params)) != len(params):
            self.error(f"PRV {t.text} repeats a logvar", t)
        self.prvs[t.text] = PRV(t.text, tuple(params), tuple(rng))

    def time_suffix(self) -> int:
        at = self.expect("@")
        t = self.next()
        if t.kind == "num" and t.text.lstrip("+") == "0":
            return 0
        if t.text == "t":
            if self.peek().text == "-1":
                self.next()
                return -1
            if self.peek().text == "-":
                self.next()
                n = self.next()
                if n.text != "1":
                    self.error("only t-1 and t are valid slice markers", n)
                return -1
            return 0
        if t.kind == "num" and t.text == "-1":
            return -1
        self.error("time suffix must be @0, @t-1 or @t", at)

    def atom(self) -> tuple[PRV, list[Logvar]]:
        t = self.ident()
        decl = self.prvs.get(t.text)
        if decl is None:
            self.error(f"undeclared PRV {t.text}", t)
        terms: list[Term] = []
        if self.peek().text == "(":
            self.next()
            while True:
                tt = self.next()
                if tt.kind not in ("ident", "num"):
                    self.error("expected a logvar or constant", tt)
                terms.append(tt)
                if self.peek().text == ",":
                    self.next()
                    continue
                self.expect(")")
                break
        if len(terms) != len(decl.params):
            self.error(f"{t.text} takes {len(decl.params)} parameters", t)
        resolved: list[Term] = []
        for tt, p in zip(terms, decl.params):
            if tt.text in self.logvars:
                lv = self.logvars[tt.text]
                if lv.domain != p.domain:
                    self.error(f"logvar {lv.name} has a different domain than {t.text}'s parameter", tt)
                resolved.append(lv)
            else:
                if tt.text not in p.domain:
                    self.error(f"{tt.text} is neither a declared logvar nor a constant of {p.name}", tt)
                resolved.append(tt.text)
        time = None
        if self.peek().text == "@":
            time = self.time_suffix()
            if self.section is None:
                self.error("time suffixes are only allowed inside [g0] and [g->] sections", t)
            if self.section == "g0" and time != 0:
                self.error("[g0] only allows @0", t)
        elif self.section is not None:
            time = 0
        atom = PRV(decl.name, tuple(resolved), decl.range, time, decl.params)
        return atom, [r for r in resolved if isinstance(r, Logvar)]

    def parfactor(self):
        start = self.expect("parfactor")
        name = self.ident().text
        self.expect("(")
        args = []
        lvs: list[Logvar] = []
        while True:
            a, alv = self.atom()
            args.append(a)
            for lv in alv:
                if lv not in lvs:
                    lvs.append(lv)
            if self.peek().text == ",":
                self.next()
                continue
            self.expect(")")
            break
        allowed = {lv: set(lv.domain) for lv in lvs}
        if self.peek().text == "|":
            self.next()
            if self.peek().text == "(":
                self.error("non-Cartesian constraints are not supported; use one 'X in {...}' clause per logvar")
            while True:
                lt = self.ident()
                if lt.text not in self.logvars:
                    self.error(f"undeclared logvar {lt.text}", lt)
                lv = self.logvars[lt.text]
                if lv not in allowed:
                    self.error(f"logvar {lv.name} does not occur in parfactor {name}", lt)
                self.expect("in")
                st = self.peek()
                vals = self.symbol_set()
                bad = [v for v in vals if v not in lv.domain]
                if bad:
                    self.error(f"constants {bad} are outside the domain of {lv.name}", st)
                allowed[lv] = set(vals)
                if self.peek().text == ",":
                    self.next()
                    continue
                break
        self.expect("{")
        shape = tuple(len(a.range) for a in args)
        table = np.full(shape, np.nan)
        seen = set()
        while self.peek().text != "}":
            rt = self.peek()
            if self.peek().text == "(":
                self.next()
                vals = [self.symbol()]
                while self.peek().text == ",":
                    self.next()
                    vals.append(self.symbol())
                self.expect(")")
            else:
                vals = [self.symbol()]
            self.expect("=")
            nt = self.next()
            if nt.kind != "num":
                self.error("expected a number", nt)
            if len(vals) != len(args):
                self.error(f"row has {len(vals)} values, parfactor {name} has {len(args)} arguments", rt)
            try:
                idx = tuple(a.range.index(v) for a, v in zip(args, vals))
            except ValueError:
                self.error(f"row {tuple(vals)} uses a value outside an argument range", rt)
            if idx in seen:
                self.error(f"row {tuple(vals)} given twice", rt)
            seen.add(idx)
            val = float(nt.text)
            if not np.isfinite(val) or val < 0:
                self.error("potential values must be finite and non-negative", nt)
            table[idx] = val
            if self.peek().text == ";":
                self.next()
            elif self.peek().text != "}":
                self.error("expected ';' or '}'")
        self.expect("}")
        expected = int(np.prod(shape))
        if len(seen) != expected:
            self.error(f"incomplete potential table for {name}: {len(seen)} of {expected} rows", start)
        if not np.any(table > 0):
            self.error(f"parfactor {name} has no positive entry", start)
        pf = Parfactor.make(args, table, Constraint.of(allowed), name)
        self.sections[self.section].append(pf)

    def build(self) -> Model | DynamicModel:
        try:
            if self.section is None:
                if not self.sections[None]:
                    raise ModelError("model has no parfactors")
                return Model(self.sections[None], dict(self.logvars), dict(self.prvs))
            if not self.sections["g0"] or not self.sections["g->"]:
                raise ModelError("dynamic models need non-empty [g0] and [g->] sections")
            g0 = Model(self.sections["g0"], dict(self.logvars), dict(self.prvs))
            gt = Model(self.sections["g->"], dict(self.logvars), dict(self.prvs))
            return DynamicModel(g0, gt, dict(self.logvars), dict(self.prvs))
        except ModelError as e:
            if isinstance(e, ModelSyntaxError):
                raise
            tok = self.peek()
            raise ModelSyntaxError(str(e), tok.line, tok.col) from None


# keywords are plain identifiers for the tokenizer
def parse_model(text: str) -> Model | DynamicModel:
    return _Parser(text).parse()


def load_model(path) -> Model | DynamicModel:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())


def _fmt_num(x: float) -> str:
    return repr(float(x))


def _fmt_time(t: int | None, dynamic: bool, section: str) -> str:
    if not dynamic or t is None:
        return ""
    if section == "g0":
        return "@0"
    return "@t-1" if t == -1 else "@t"


def format_model(m: Model | DynamicModel) -> str:
    """Serialise a model in the text format; ``parse_model`` inverts it."""
    dynamic = isinstance(m, DynamicModel)
    lines = []
    for lv in m.logvars.values():
        lines.append(f"domain {lv.name} = {{{', '.join(lv.domain)}}}")
    for p in m.prvs.values():
        ps = f"({', '.join(term_str(t) for t in p.params)})" if p.params else ""
        lines.append(f"prv {p.name}{ps} : {{{', '.join(p.range)}}}")
    sections = [("g0", m.g0), ("g->", m.transition)] if dynamic else [("", m)]
    for sec, model in sections:
        if sec:
            lines.append(f"[{sec}]")
        for pf in model.parfactors:
            args = []
            for a in pf.args:
                s = a.name
                if a.params:
                    s += "(" + ", ".join(term_str(t) for t in a.params) + ")"
                args.append(s + _fmt_time(a.time, dynamic, sec))
            head = f"parfactor {pf.name} ({', '.join(args)})"
            restricted = [(lv, v) for lv, v in pf.constraint.items if len(v) != len(lv.domain)]
            if restricted:
                head += " | " + ", ".join(
                    f"{lv.name} in {{{','.join(sorted(v, key=lv.domain.index))}}}" for lv, v in restricted
                )
            rows = []
            for idx in itertools.product(*(range(len(a.range)) for a in pf.args)):
                vals = ",".join(a.range[i] for a, i in zip(pf.args, idx))
                rows.append(f"({vals})={_fmt_num(pf.table[idx])}")
            lines.append(head + " { " + "; ".join(rows) + " }")
    return "\n".join(lines) + "\n"
