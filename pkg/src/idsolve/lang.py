"""Abstract syntax for the definition-logic input language with aggregates.

Terms and formulas are immutable trees. Variables are plain names; anything
capitalized in the surface syntax parses as a variable, everything else as an
interned constant symbol or integer. `StoreRef` is a solver-internal term kind
wrapping a finite-domain variable; it never comes out of the parser.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from .errors import LanguageError, SymbolComparisonError

# ---------------------------------------------------------------------------
# Terms


@dataclass(frozen=True)
class Var:
    name: str

    def __repr__(self):
        return f"Var({self.name})"


@dataclass(frozen=True)
class Const:
    name: str

    def __repr__(self):
        return f"Const({self.name})"


@dataclass(frozen=True)
class Int:
    value: int

    def __repr__(self):
        return f"Int({self.value})"


@dataclass(frozen=True)
class Arith:
    """Arithmetic term; op is one of + - * abs, with abs unary."""

    op: str
    args: tuple

    def __post_init__(self):
        want = 1 if self.op == "abs" else 2
        if len(self.args) != want:
            raise LanguageError(f"operator {self.op} takes {want} arguments")


@dataclass(frozen=True)
class StoreRef:
    """Reference to a finite-domain store variable (engine-internal)."""

    var: object

    def __repr__(self):
        return f"StoreRef({getattr(self.var, 'name', self.var)})"


Term = Union[Var, Const, Int, Arith, StoreRef]

# ---------------------------------------------------------------------------
# Formulas

COMPARISON_OPS = ("=", "\\=", "<", "=<", ">", ">=")
NEGATED_OP = {"=": "\\=", "\\=": "=", "<": ">=", ">=": "<", ">": "=<", "=<": ">"}
AGGREGATE_KINDS = ("card", "sum", "product", "minimum", "maximum")


@dataclass(frozen=True)
class TrueF:
    def __repr__(self):
        return "TrueF"


@dataclass(frozen=True)
class FalseF:
    def __repr__(self):
        return "FalseF"


TRUE = TrueF()
FALSE = FalseF()


@dataclass(frozen=True)
class Atom:
    pred: str
    args: tuple = ()

    @property
    def key(self):
        return (self.pred, len(self.args))


@dataclass(frozen=True)
class Comparison:
    op: str
    lhs: Term
    rhs: Term

    def __post_init__(self):
        if self.op not in COMPARISON_OPS:
            raise LanguageError(f"unknown comparison operator {self.op}")


@dataclass(frozen=True)
class InRange:
    """term in lo..hi; bounds are terms so `P in 1..L` is expressible."""

    term: Term
    lo: Term
    hi: Term


@dataclass(frozen=True)
class Not:
    body: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Exists:
    vars: tuple
    body: "Formula"


@dataclass(frozen=True)
class Forall:
    vars: tuple
    body: "Formula"


@dataclass(frozen=True)
class Implies:
    premise: "Formula"
    conclusion: "Formula"


@dataclass(frozen=True)
class SetExpr:
    """{params | body}: params are the tuple variables, other body vars are
    either quantified locals or free."""

    params: tuple
    body: "Formula"


@dataclass(frozen=True)
class FuncExpr:
    """lambda(params, result where body); body must mention the result var."""

    params: tuple
    result: str
    body: "Formula"


@dataclass(frozen=True)
class Aggregate:
    kind: str
    set: SetExpr
    func: Optional[FuncExpr]
    result: Term

    def __post_init__(self):
        if self.kind not in AGGREGATE_KINDS:
            raise LanguageError(f"unknown aggregate {self.kind}")
        needs_func = self.kind in ("sum", "product")
        if needs_func and self.func is None:
            raise LanguageError(f"{self.kind} needs a function expression")
        if not needs_func and self.func is not None:
            raise LanguageError(f"{self.kind} takes no function expression")
        if self.func is not None and len(self.func.params) != len(self.set.params):
            raise LanguageError("function expression arity differs from set arity")


Formula = Union[
    TrueF, FalseF, Atom, Comparison, InRange, Not, And, Or, Exists, Forall,
    Implies, Aggregate,
]

# ---------------------------------------------------------------------------
# Theories and queries


@dataclass(frozen=True)
class Rule:
    head_pred: str
    head_args: tuple
    body: "Formula"

    @property
    def key(self):
        return (self.head_pred, len(self.head_args))


@dataclass
class Definition:
    defined: set = field(default_factory=set)  # {(pred, arity)}
    rules: list = field(default_factory=list)


@dataclass
class Theory:
    definitions: list = field(default_factory=list)
    fol_axioms: list = field(default_factory=list)
    domain_decls: dict = field(default_factory=dict)  # {(pred, arity): ((lo,hi), ...)}

    def defined_keys(self):
        out = set()
        for d in self.definitions:
            out |= d.defined
        return out

    def all_rules(self):
        for d in self.definitions:
            yield from d.rules


@dataclass
class Query:
    goal: "Formula"
    objective: Optional[tuple] = None  # ("minimize"|"maximize", var name)


# ---------------------------------------------------------------------------
# Structural helpers

_fresh_counter = itertools.count(1)


def fresh_var(stem: str = "G") -> str:
    return f"_{stem}{next(_fresh_counter)}"


def mk_and(parts) -> Formula:
    parts = [p for p in parts if not isinstance(p, TrueF)]
    if not parts:
        return TRUE
    out = parts[0]
    for p in parts[1:]:
        out = And(out, p)
    return out


def mk_or(parts) -> Formula:
    parts = [p for p in parts if not isinstance(p, FalseF)]
    if not parts:
        return FALSE
    out = parts[0]
    for p in parts[1:]:
        out = Or(out, p)
    return out


def conjuncts(f: Formula) -> list:
    if isinstance(f, And):
        return conjuncts(f.left) + conjuncts(f.right)
    if isinstance(f, TrueF):
        return []
    return [f]


def disjuncts(f: Formula) -> list:
    if isinstance(f, Or):
        return disjuncts(f.left) + disjuncts(f.right)
    if isinstance(f, FalseF):
        return []
    return [f]


def term_vars(t: Term) -> set:
    if isinstance(t, Var):
        return {t.name}
    if isinstance(t, Arith):
        out = set()
        for a in t.args:
            out |= term_vars(a)
        return out
    return set()


def free_vars(f) -> set:
    """Free variables of a formula (or term): occurrences not bound by any
    enclosing quantifier or set/lambda parameter list."""
    if isinstance(f, (Var, Const, Int, Arith, StoreRef)):
        return term_vars(f)
    if isinstance(f, (TrueF, FalseF)):
        return set()
    if isinstance(f, Atom):
        out = set()
        for a in f.args:
            out |= term_vars(a)
        return out
    if isinstance(f, Comparison):
        return term_vars(f.lhs) | term_vars(f.rhs)
    if isinstance(f, InRange):
        return term_vars(f.term) | term_vars(f.lo) | term_vars(f.hi)
    if isinstance(f, Not):
        return free_vars(f.body)
    if isinstance(f, (And, Or)):
        return free_vars(f.left) | free_vars(f.right)
    if isinstance(f, Implies):
        return free_vars(f.premise) | free_vars(f.conclusion)
    if isinstance(f, (Exists, Forall)):
        return free_vars(f.body) - set(f.vars)
    if isinstance(f, SetExpr):
        return free_vars(f.body) - set(f.params)
    if isinstance(f, FuncExpr):
        return free_vars(f.body) - set(f.params) - {f.result}
    if isinstance(f, Aggregate):
        out = free_vars(f.set) | term_vars(f.result)
        if f.func is not None:
            out |= free_vars(f.func)
        return out
    raise TypeError(f"free_vars: not a formula or term: {f!r}")


def substitute_term(t: Term, binding: dict) -> Term:
    if isinstance(t, Var):
        return binding.get(t.name, t)
    if isinstance(t, Arith):
        return Arith(t.op, tuple(substitute_term(a, binding) for a in t.args))
    return t


def _binding_range_vars(binding: dict) -> set:
    out = set()
    for t in binding.values():
        out |= term_vars(t)
    return out


def _rename_bound(names, binding):
    """Freshen the bound `names` that would capture variables of `binding`.

    Returns (new names, renaming to apply to the body first)."""
    clash = _binding_range_vars(binding)
    renaming = {}
    fresh_names = []
    for n in names:
        if n in clash:
            nn = fresh_var(n.lstrip("_") or "V")
            renaming[n] = Var(nn)
            fresh_names.append(nn)
        else:
            fresh_names.append(n)
    return tuple(fresh_names), renaming


def substitute(f, binding: dict):
    """Simultaneous capture-avoiding substitution of terms for free variables."""
    if not binding:
        return f
    if isinstance(f, (Var, Const, Int, Arith, StoreRef)):
        return substitute_term(f, binding)
    if isinstance(f, (TrueF, FalseF)):
        return f
    if isinstance(f, Atom):
        return Atom(f.pred, tuple(substitute_term(a, binding) for a in f.args))
    if isinstance(f, Comparison):
        return Comparison(f.op, substitute_term(f.lhs, binding), substitute_term(f.rhs, binding))
    if isinstance(f, InRange):
        return InRange(
            substitute_term(f.term, binding),
            substitute_term(f.lo, binding),
            substitute_term(f.hi, binding),
        )
    if isinstance(f, Not):
        return Not(substitute(f.body, binding))
    if isinstance(f, And):
        return And(substitute(f.left, binding), substitute(f.right, binding))
    if isinstance(f, Or):
        return Or(substitute(f.left, binding), substitute(f.right, binding))
    if isinstance(f, Implies):
        return Implies(substitute(f.premise, binding), substitute(f.conclusion, binding))
    if isinstance(f, (Exists, Forall)):
        inner = {k: v for k, v in binding.items() if k not in f.vars}
        if not inner:
            return f
        names, renaming = _rename_bound(f.vars, inner)
        body = substitute(f.body, renaming) if renaming else f.body
        body = substitute(body, inner)
        return type(f)(names, body)
    if isinstance(f, SetExpr):
        inner = {k: v for k, v in binding.items() if k not in f.params}
        if not inner:
            return f
        names, renaming = _rename_bound(f.params, inner)
        body = substitute(f.body, renaming) if renaming else f.body
        return SetExpr(names, substitute(body, inner))
    if isinstance(f, FuncExpr):
        bound = set(f.params) | {f.result}
        inner = {k: v for k, v in binding.items() if k not in bound}
        if not inner:
            return f
        names, renaming = _rename_bound(tuple(f.params) + (f.result,), inner)
        body = substitute(f.body, renaming) if renaming else f.body
        return FuncExpr(names[:-1], names[-1], substitute(body, inner))
    if isinstance(f, Aggregate):
        return Aggregate(
            f.kind,
            substitute(f.set, binding),
            substitute(f.func, binding) if f.func is not None else None,
            substitute_term(f.result, binding),
        )
    raise TypeError(f"substitute: not a formula or term: {f!r}")


def atoms_of(f) -> Iterator[Atom]:
    """Every predicate atom occurring anywhere in f, including inside
    set/lambda bodies and aggregate operands."""
    if isinstance(f, Atom):
        yield f
    elif isinstance(f, Not):
        yield from atoms_of(f.body)
    elif isinstance(f, (And, Or)):
        yield from atoms_of(f.left)
        yield from atoms_of(f.right)
    elif isinstance(f, Implies):
        yield from atoms_of(f.premise)
        yield from atoms_of(f.conclusion)
    elif isinstance(f, (Exists, Forall)):
        yield from atoms_of(f.body)
    elif isinstance(f, SetExpr):
        yield from atoms_of(f.body)
    elif isinstance(f, FuncExpr):
        yield from atoms_of(f.body)
    elif isinstance(f, Aggregate):
        yield from atoms_of(f.set)
        if f.func is not None:
            yield from atoms_of(f.func)


# ---------------------------------------------------------------------------
# Ground evaluation of terms and comparisons

def eval_ground_term(t: Term):
    """Value of a variable-free term: an int, or a symbol name. None when the
    term still contains variables or store references."""
    if isinstance(t, Int):
        return t.value
    if isinstance(t, Const):
        return t.name
    if isinstance(t, Arith):
        vals = [eval_ground_term(a) for a in t.args]
        if any(v is None or isinstance(v, str) for v in vals):
            if any(isinstance(v, str) for v in vals):
                raise SymbolComparisonError(f"arithmetic on symbol in {format_term(t)}")
            return None
        if t.op == "+":
            return vals[0] + vals[1]
        if t.op == "-":
            return vals[0] - vals[1]
        if t.op == "*":
            return vals[0] * vals[1]
        if t.op == "abs":
            return abs(vals[0])
    return None


def compare_values(op: str, a, b) -> bool:
    sym = isinstance(a, str) or isinstance(b, str)
    if sym and op not in ("=", "\\="):
        raise SymbolComparisonError(f"ordering comparison {op} on symbols {a!r}, {b!r}")
    if op == "=":
        return a == b
    if op == "\\=":
        return a != b
    if op == "<":
        return a < b
    if op == "=<":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise LanguageError(f"unknown comparison {op}")


def simplify(f: Formula) -> Formula:
    """Local constant folding: ground comparisons decide, boolean identities
    collapse, quantifiers over decided bodies drop."""
    if isinstance(f, (TrueF, FalseF, Atom, Aggregate)):
        return f
    if isinstance(f, Comparison):
        a = eval_ground_term(f.lhs)
        b = eval_ground_term(f.rhs)
        if a is not None and b is not None:
            return TRUE if compare_values(f.op, a, b) else FALSE
        return f
    if isinstance(f, InRange):
        v = eval_ground_term(f.term)
        lo = eval_ground_term(f.lo)
        hi = eval_ground_term(f.hi)
        if v is not None and lo is not None and hi is not None:
            if isinstance(v, str) or isinstance(lo, str) or isinstance(hi, str):
                raise SymbolComparisonError("range membership on symbols")
            return TRUE if lo <= v <= hi else FALSE
        return f
    if isinstance(f, Not):
        b = simplify(f.body)
        if isinstance(b, TrueF):
            return FALSE
        if isinstance(b, FalseF):
            return TRUE
        if isinstance(b, Not):
            return b.body
        return Not(b)
    if isinstance(f, And):
        l = simplify(f.left)
        if isinstance(l, FalseF):
            return FALSE
        r = simplify(f.right)
        if isinstance(r, FalseF):
            return FALSE
        if isinstance(l, TrueF):
            return r
        if isinstance(r, TrueF):
            return l
        return And(l, r)
    if isinstance(f, Or):
        l = simplify(f.left)
        if isinstance(l, TrueF):
            return TRUE
        r = simplify(f.right)
        if isinstance(r, TrueF):
            return TRUE
        if isinstance(l, FalseF):
            return r
        if isinstance(r, FalseF):
            return l
        return Or(l, r)
    if isinstance(f, Implies):
        p = simplify(f.premise)
        if isinstance(p, FalseF):
            return TRUE
        c = simplify(f.conclusion)
        if isinstance(p, TrueF):
            return c
        if isinstance(c, TrueF):
            return TRUE
        return Implies(p, c)
    if isinstance(f, (Exists, Forall)):
        b = simplify(f.body)
        if isinstance(b, (TrueF, FalseF)):
            return b
        live = tuple(v for v in f.vars if v in free_vars(b))
        if not live:
            return b
        return type(f)(live, b)
    return f


# ---------------------------------------------------------------------------
# Alpha-equivalence

def _alpha_term(t1, t2, m1, m2):
    if isinstance(t1, Var) and isinstance(t2, Var):
        return m1.get(t1.name, t1.name) == m2.get(t2.name, t2.name)
    if type(t1) is not type(t2):
        return False
    if isinstance(t1, (Const, Int)):
        return t1 == t2
    if isinstance(t1, Arith):
        return t1.op == t2.op and len(t1.args) == len(t2.args) and all(
            _alpha_term(a, b, m1, m2) for a, b in zip(t1.args, t2.args)
        )
    return t1 == t2


def alpha_equal(f1, f2, _m1=None, _m2=None, _n=None) -> bool:
    """Structural equality modulo renaming of bound variables."""
    m1 = dict(_m1 or {})
    m2 = dict(_m2 or {})
    n = _n if _n is not None else itertools.count()

    def bind(names1, names2):
        if len(names1) != len(names2):
            return None
        b1, b2 = dict(m1), dict(m2)
        for a, b in zip(names1, names2):
            tag = f"#{next(n)}"
            b1[a] = tag
            b2[b] = tag
        return b1, b2

    if type(f1) is not type(f2):
        return False
    if isinstance(f1, (TrueF, FalseF)):
        return True
    if isinstance(f1, Atom):
        return f1.pred == f2.pred and len(f1.args) == len(f2.args) and all(
            _alpha_term(a, b, m1, m2) for a, b in zip(f1.args, f2.args)
        )
    if isinstance(f1, Comparison):
        return f1.op == f2.op and _alpha_term(f1.lhs, f2.lhs, m1, m2) and _alpha_term(
            f1.rhs, f2.rhs, m1, m2
        )
    if isinstance(f1, InRange):
        return all(
            _alpha_term(a, b, m1, m2)
            for a, b in ((f1.term, f2.term), (f1.lo, f2.lo), (f1.hi, f2.hi))
        )
    if isinstance(f1, Not):
        return alpha_equal(f1.body, f2.body, m1, m2, n)
    if isinstance(f1, (And, Or)):
        return alpha_equal(f1.left, f2.left, m1, m2, n) and alpha_equal(
            f1.right, f2.right, m1, m2, n
        )
    if isinstance(f1, Implies):
        return alpha_equal(f1.premise, f2.premise, m1, m2, n) and alpha_equal(
            f1.conclusion, f2.conclusion, m1, m2, n
        )
    if isinstance(f1, (Exists, Forall)):
        bound = bind(f1.vars, f2.vars)
        if bound is None:
            return False
        return alpha_equal(f1.body, f2.body, bound[0], bound[1], n)
    if isinstance(f1, SetExpr):
        bound = bind(f1.params, f2.params)
        if bound is None:
            return False
        return alpha_equal(f1.body, f2.body, bound[0], bound[1], n)
    if isinstance(f1, FuncExpr):
        bound = bind(tuple(f1.params) + (f1.result,), tuple(f2.params) + (f2.result,))
        if bound is None:
            return False
        return alpha_equal(f1.body, f2.body, bound[0], bound[1], n)
    if isinstance(f1, Aggregate):
        if f1.kind != f2.kind or not _alpha_term(f1.result, f2.result, m1, m2):
            return False
        if not alpha_equal(f1.set, f2.set, m1, m2, n):
            return False
        if (f1.func is None) != (f2.func is None):
            return False
        return f1.func is None or alpha_equal(f1.func, f2.func, m1, m2, n)
    return f1 == f2


# ---------------------------------------------------------------------------
# Printing back to surface syntax

def format_term(t: Term) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Const):
        return t.name
    if isinstance(t, Int):
        return str(t.value)
    if isinstance(t, StoreRef):
        return getattr(t.var, "name", f"_fd{id(t.var)}")
    if isinstance(t, Arith):
        if t.op == "abs":
            return f"abs({format_term(t.args[0])})"
        l, r = t.args
        lhs = f"({format_term(l)})" if isinstance(l, Arith) and l.op != "abs" else format_term(l)
        rhs = f"({format_term(r)})" if isinstance(r, Arith) and r.op != "abs" else format_term(r)
        return f"{lhs} {t.op} {rhs}"
    raise TypeError(f"format_term: {t!r}")


def _fmt_atomish(f) -> str:
    s = format_formula(f)
    if isinstance(f, (And, Or, Implies, Exists, Forall)):
        return f"({s})"
    return s


def format_formula(f: Formula) -> str:
    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, FalseF):
        return "false"
    if isinstance(f, Atom):
        if not f.args:
            return f.pred
        return f"{f.pred}({', '.join(format_term(a) for a in f.args)})"
    if isinstance(f, Comparison):
        return f"{format_term(f.lhs)} {f.op} {format_term(f.rhs)}"
    if isinstance(f, InRange):
        return f"{format_term(f.term)} in {format_term(f.lo)}..{format_term(f.hi)}"
    if isinstance(f, Not):
        return f"not ({format_formula(f.body)})"
    if isinstance(f, And):
        parts = [_fmt_or_lower(p) for p in conjuncts(f)]
        return ", ".join(parts)
    if isinstance(f, Or):
        return " ; ".join(_fmt_and_lower(p) for p in disjuncts(f))
    if isinstance(f, Implies):
        return f"{_fmt_and_lower(f.premise)} => {format_formula(f.conclusion)}"
    if isinstance(f, Exists):
        return f"exists({', '.join(f.vars)}) : {format_formula(f.body)}"
    if isinstance(f, Forall):
        return f"forall({', '.join(f.vars)}) : {format_formula(f.body)}"
    if isinstance(f, Aggregate):
        parts = [format_set(f.set)]
        if f.func is not None:
            parts.append(format_func(f.func))
        parts.append(format_term(f.result))
        return f"{f.kind}({', '.join(parts)})"
    raise TypeError(f"format_formula: {f!r}")


def _fmt_or_lower(f) -> str:
    # operand position inside a conjunction: wrap or/implies/quantifiers
    if isinstance(f, (Or, Implies, Exists, Forall)):
        return f"({format_formula(f)})"
    return format_formula(f)


def _fmt_and_lower(f) -> str:
    # operand position inside a disjunction or premise: wrap implies/quantifiers
    if isinstance(f, (Implies, Exists, Forall)):
        return f"({format_formula(f)})"
    return format_formula(f)


def format_set(s: SetExpr) -> str:
    return f"set([{', '.join(s.params)}], {format_formula(s.body)})"


def format_func(fn: FuncExpr) -> str:
    return f"lambda([{', '.join(fn.params)}], {fn.result} where {format_formula(fn.body)})"


def format_rule(r: Rule) -> str:
    head = Atom(r.head_pred, r.head_args)
    return f"{format_formula(head)} <- {format_formula(r.body)}."


def format_theory(t: Theory) -> str:
    lines = []
    for (pred, _ar), ranges in sorted(t.domain_decls.items()):
        rngs = ", ".join(f"{lo}..{hi}" for lo, hi in ranges)
        lines.append(f"dom {pred}({rngs}).")
    for d in t.definitions:
        for r in d.rules:
            lines.append(format_rule(r))
    for ax in t.fol_axioms:
        lines.append(f"fol {format_formula(ax)}.")
    return "\n".join(lines) + ("\n" if lines else "")
