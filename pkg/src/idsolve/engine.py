"""The abductive rewriting procedure.

A derivation rewrites states (Theta, Delta, CS): Theta is a worklist of
formulas and denials, Delta the table of abduced open atoms, CS the
finite-domain store. Defined atoms unfold through their completions, open
atoms are abduced (reusing existing table entries as alternatives before
creating fresh ones), comparison atoms are posted to the store, aggregates go
through the reducer, universally quantified axioms either expand over their
decidable guards or become denials checked against every abduced atom.

A derivation ends in one of three ways: floundering (a universal variable
that nothing can instantiate), failure, or a success state whose sealed,
consistent store is then handed to labeling or branch-and-bound.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

from . import aggregates as agg
from .completion import (
    assert_nonrecursive, build_dependency_graph, complete_all, merge_definitions,
    unfold,
)
from .errors import (
    EmptySetMinimum, FlounderingError, InternalSoundnessError, LanguageError,
    NonFunctional, SearchTimeout, SymbolComparisonError, UnsupportedSetExpression,
)
from .fd import INT_MAX, INT_MIN, Store, branch_and_bound, label
from .ground import GroundEval, NotEnumerable, OpenAtomReached, open_dependent_keys
from .lang import (
    Aggregate, And, Arith, Atom, Comparison, Const, Exists, FalseF, Forall, Formula,
    Implies, InRange, Int, Not, Or, StoreRef, TrueF, Var, conjuncts, disjuncts,
    eval_ground_term, format_formula, free_vars, fresh_var, mk_and, simplify,
    substitute,
)

FAIL = object()


def value_term(v):
    if isinstance(v, bool):
        raise TypeError("boolean is not a term value")
    if isinstance(v, int):
        return Int(v)
    if isinstance(v, str):
        return Const(v)
    return StoreRef(v)


@dataclass(frozen=True)
class DeltaAtom:
    key: tuple
    args: tuple  # ints, symbols, FDVars

    @property
    def ground_sig(self):
        if all(not hasattr(a, "domain") for a in self.args):
            return (self.key, self.args)
        return None

    def format(self, solution=None):
        parts = []
        for a in self.args:
            if hasattr(a, "domain"):
                if solution is not None:
                    parts.append(str(solution[a]))
                elif a.fixed:
                    parts.append(str(a.value))
                else:
                    parts.append(a.name)
            else:
                parts.append(str(a))
        if not parts:
            return self.key[0]
        return f"{self.key[0]}({','.join(parts)})"


@dataclass(frozen=True)
class Denial:
    """forall uvars. <- lits (conjunction)."""

    uvars: frozenset
    lits: tuple

    def format(self):
        body = ", ".join(format_formula(l) for l in self.lits) or "true"
        if self.uvars:
            return f"forall({', '.join(sorted(self.uvars))}) : <- {body}"
        return f"<- {body}"


@dataclass
class Answer:
    delta: list  # ground atom strings, sorted
    delta_tuples: dict  # {(pred, arity): set of value tuples}
    theta_subst: dict  # query variable -> value
    bindings: dict  # labeled FD values for query variables
    objective: object = None
    status: str = "satisfiable"


@dataclass
class SolveResult:
    status: str  # success | failure | floundering | unsupported
    answers: list = field(default_factory=list)
    diagnostic: str = None
    reduction_time: float = 0.0
    search_time: float = 0.0
    incumbents: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)


class State:
    """One derivation branch; doubles as the reducer context (ctx)."""

    def __init__(self, run):
        self.run = run
        self.theta = deque()
        self.delta = []
        self.delta_idx = {}
        self.parked = {}  # {key: [(Denial, Atom lit)]}
        self.deferred = []
        self.chain_memo = {}  # {(key, pattern): MatchChain}
        self.watch_idx = {}  # {key: [UnfoldedSet | CondChain]}
        self.usets = []
        self.links = []
        self.condchains = []
        self.bind = {}  # engine var name -> int | str | FDVar

    # -- shared run data

    @property
    def store(self):
        return self.run.store

    @property
    def defined(self):
        return self.run.defined

    @property
    def open_dependent(self):
        return self.run.open_dependent

    def clone(self):
        out = State(self.run)
        out.theta = deque(self.theta)
        out.delta = list(self.delta)
        out.delta_idx = {k: list(v) for k, v in self.delta_idx.items()}
        out.parked = {k: list(v) for k, v in self.parked.items()}
        out.deferred = list(self.deferred)
        out.bind = dict(self.bind)
        uset_map = {}
        out.usets = []
        for u in self.usets:
            u2 = u.clone()
            uset_map[id(u)] = u2
            out.usets.append(u2)
        out.links = [l.clone(uset_map[id(l.unfolded)]) for l in self.links]
        out.condchains = [c.clone() for c in self.condchains]
        cc_map = {id(a): b for a, b in zip(self.condchains, out.condchains)}
        out.chain_memo = {k: c.clone() for k, c in self.chain_memo.items()}
        out.watch_idx = {}
        for u in out.usets:
            for key in u.watchers:
                out.watch_idx.setdefault(key, []).append(u)
        for c in out.condchains:
            if not c.sealed:
                for key in c.watchers:
                    out.watch_idx.setdefault(key, []).append(c)
        return out

    # -- reducer context protocol

    def delta_atoms(self, key):
        return self.delta_idx.get(key, ())

    def chain_bool(self, key, pattern):
        memo_key = (key, pattern)
        chain = self.chain_memo.get(memo_key)
        if chain is None:
            chain = agg.MatchChain(self, key, pattern)
            self.chain_memo[memo_key] = chain
        return chain.bool

    def register_watch(self, key, watcher):
        self.watch_idx.setdefault(key, []).append(watcher)
        if isinstance(watcher, agg.CondChain):
            self.condchains.append(watcher)

    def register_uset(self, uset):
        self.usets.append(uset)

    def register_link(self, link):
        self.links.append(link)

    def tables_truth(self, key, vals):
        return self.run.tables._point_truth(key, vals)

    def tables_extension(self, key):
        return self.run.tables.extension(key)

    def unfold_defined(self, atom, env):
        args = []
        for a in atom.args:
            v = self.term_value(a, env)
            args.append(value_term(v) if v is not None else a)
        return simplify(unfold(self.run.completions[atom.key], tuple(args)))

    def term_value(self, term, env):
        """int | symbol | FDVar for a term under env; None when it still
        contains unbound variables. Arithmetic over FD values creates a fresh
        defined variable."""
        if isinstance(term, Int):
            return term.value
        if isinstance(term, Const):
            return term.name
        if isinstance(term, StoreRef):
            return term.var
        if isinstance(term, Var):
            return env.get(term.name)
        # Arith
        vals = [self.term_value(a, env) for a in term.args]
        if any(v is None for v in vals):
            return None
        if any(isinstance(v, str) for v in vals):
            raise SymbolComparisonError(f"arithmetic on symbols in {term}")
        if all(isinstance(v, int) for v in vals):
            return eval_ground_term(
                type(term)(term.op, tuple(Int(v) for v in vals))
            )
        return self.fd_arith(term.op, vals)

    def fd_arith(self, op, vals):
        store = self.store
        if op == "abs":
            v = vals[0]
            if isinstance(v, int):
                return abs(v)
            return store.abs_diff(v, store.const(0))
        a, b = vals
        if op == "*":
            if isinstance(a, int):
                a, b = b, a
            if isinstance(b, int):
                lo = min(a.domain.min * b, a.domain.max * b)
                hi = max(a.domain.min * b, a.domain.max * b)
                z = store.new_var(lo, hi, name="_mul")
                store.post_linear([(b, a), (-1, z)], "=", 0)
                return z
            return store.product_var(a, b)
        sign = 1 if op == "+" else -1
        terms, k = [], 0
        for coeff, item in ((1, a), (sign, b)):
            if isinstance(item, int):
                k += coeff * item
            else:
                terms.append((coeff, item))
        lo = k + sum(c * (v.domain.min if c > 0 else v.domain.max) for c, v in terms)
        hi = k + sum(c * (v.domain.max if c > 0 else v.domain.min) for c, v in terms)
        z = store.new_var(max(lo, INT_MIN), min(hi, INT_MAX), name="_lin")
        store.post_linear(terms + [(-1, z)], "=", -k)
        return z

    def compare_values_fd(self, op, a, b):
        """True/False or a reified boolean for `a op b` over values."""
        ga = not hasattr(a, "domain")
        gb = not hasattr(b, "domain")
        if ga and gb:
            from .lang import compare_values

            return compare_values(op, a, b)
        if isinstance(a, str) or isinstance(b, str):
            if op == "=":
                return False
            if op == "\\=":
                return True
            raise SymbolComparisonError(f"ordering comparison {op} on a symbol")
        terms, k = [], 0
        for sign, item in ((1, a), (-1, b)):
            if isinstance(item, int):
                k -= sign * item
            else:
                terms.append((sign, item))
        return self.store.reify_linear(terms, op, k)

    def func_member_value(self, fexpr, member, env):
        """Value of the function expression at one member; must be a single
        unconditional value (int or FD variable)."""
        inner = {
            k: v for k, v in env.items()
            if k not in fexpr.params and k != fexpr.result
        }
        inner.update(dict(zip(fexpr.params, member.value)))
        results = []
        for br in agg.comprehend(self, None, fexpr.body, inner):
            val = br.env.get(fexpr.result)
            if val is None:
                raise NonFunctional(member.value, 0)
            if br.conds:
                raise UnsupportedSetExpression(
                    fexpr.result,
                    f"conditional function value for member {member.value}",
                )
            results.append(val)
        distinct = []
        for v in results:
            if not any(v is w or v == w for w in distinct):
                distinct.append(v)
        if len(distinct) != 1:
            raise NonFunctional(member.value, len(distinct))
        return distinct[0]

    # -- engine-side term coercion

    def deref(self, f):
        live = free_vars(f) & set(self.bind)
        if not live:
            return f
        return substitute(f, {n: value_term(self.bind[n]) for n in live})

    def fd_term(self, term):
        """Coerce a term to int | FDVar, creating and binding universe
        variables for unbound engine variables."""
        v = self.term_value(term, {})
        if v is not None:
            if isinstance(v, str):
                raise SymbolComparisonError(f"symbol {v} in arithmetic context")
            return v
        if isinstance(term, Var):
            fd = self.new_engine_fdvar(term.name)
            return fd
        # Arith containing unbound vars: bind them, then retry
        for name in sorted(free_vars(term)):
            if name not in self.bind:
                self.new_engine_fdvar(name)
        return self.term_value(self.deref(term), {})

    def new_engine_fdvar(self, name, lo=INT_MIN, hi=INT_MAX):
        fd = self.store.new_var(lo, hi, name=name)
        self.bind[name] = fd
        return fd

    def linear_of(self, term):
        """(terms, const) with unbound vars coerced to FD variables."""
        v = self.fd_term(term)
        if isinstance(v, int):
            return [], v
        return [(1, v)], 0

    def linear_terms(self, term, env):
        """Decompose a term into (coeff-var terms, constant) without creating
        auxiliary variables; None when the term is not linear over bound
        values (symbols, unbound variables, variable products)."""
        if isinstance(term, Int):
            return [], term.value
        if isinstance(term, StoreRef):
            return [(1, term.var)], 0
        if isinstance(term, Const):
            return None
        if isinstance(term, Var):
            v = env.get(term.name)
            if v is None or isinstance(v, str):
                return None
            if isinstance(v, int):
                return [], v
            return [(1, v)], 0
        if term.op in ("+", "-"):
            left = self.linear_terms(term.args[0], env)
            right = self.linear_terms(term.args[1], env)
            if left is None or right is None:
                return None
            sign = 1 if term.op == "+" else -1
            return left[0] + [(sign * c, v) for c, v in right[0]], left[1] + sign * right[1]
        if term.op == "*":
            left = self.linear_terms(term.args[0], env)
            right = self.linear_terms(term.args[1], env)
            if left is None or right is None:
                return None
            if not left[0]:
                return [(left[1] * c, v) for c, v in right[0]], left[1] * right[1]
            if not right[0]:
                return [(right[1] * c, v) for c, v in left[0]], left[1] * right[1]
            return None
        return None  # abs is handled by the comparison splitter

    def reify_comparison(self, f, env):
        """True/False or a boolean for a comparison formula; splits
        abs-comparisons into linear disjunctions and avoids intermediate
        variables for linear sides."""
        for flip, this, other in ((False, f.lhs, f.rhs), (True, f.rhs, f.lhs)):
            if isinstance(this, Arith) and this.op == "abs":
                inner = self.linear_terms(this.args[0], env)
                bound = self.linear_terms(other, env)
                if inner is None or bound is None:
                    break
                op = f.op
                if flip:
                    op = {"<": ">", ">": "<", "=<": ">=", ">=": "=<"}.get(op, op)
                return self._reify_abs(inner, bound, op)
        lhs = self.linear_terms(f.lhs, env)
        rhs = self.linear_terms(f.rhs, env)
        if lhs is None or rhs is None:
            a = self.term_value(f.lhs, env)
            b = self.term_value(f.rhs, env)
            if a is None or b is None:
                return None
            return self.compare_values_fd(f.op, a, b)
        terms = lhs[0] + [(-c, v) for c, v in rhs[0]]
        k = rhs[1] - lhs[1]
        if not terms:
            from .lang import compare_values

            return compare_values(f.op, lhs[1], rhs[1])
        return self.store.reify_linear(terms, f.op, k)

    def _reify_abs(self, inner, bound, op):
        """|E| op T with E, T linear: reified without an abs variable."""
        store = self.store
        iterms, ik = inner
        bterms, bk = bound

        def rel(sign, cmp_op):
            # sign*E cmp_op T  ==  sign*E - T cmp_op 0
            terms = [(sign * c, v) for c, v in iterms] + [(-c, v) for c, v in bterms]
            k = bk - sign * ik
            return store.reify_linear(terms, cmp_op, k)

        if op in (">", ">="):
            return store.bool_or([rel(1, op), rel(-1, op)])
        if op in ("<", "=<"):
            return store.bool_and([rel(1, op), rel(-1, op)])
        eq = store.bool_and([
            store.bool_or([rel(1, "="), rel(-1, "=")]),
            self._abs_nonneg(bterms, bk),
        ])
        if op == "=":
            return eq
        return store.bool_not(eq)  # op is \=

    def _abs_nonneg(self, bterms, bk):
        # T >= 0 as a boolean
        return self.store.reify_linear([(-c, v) for c, v in bterms], "=<", bk)


class Run:
    """Data shared by every state of one solve() call."""

    def __init__(self, theory, trace_propagation=None, trace_derivation=None):
        merged = merge_definitions(theory)
        graph = build_dependency_graph(merged)
        assert_nonrecursive(graph)
        self.theory = merged
        self.completions = complete_all(merged)
        self.defined = merged.defined_keys()
        self.open_dependent = open_dependent_keys(merged)
        self.tables = GroundEval(merged, self.completions, open_interp=None)
        self.store = Store(trace=trace_propagation)
        self.trace_derivation = trace_derivation
        self.diagnostics = []
        self.steps = 0


# ---------------------------------------------------------------------------
# Rewriting rules


def _trace(state, rule, detail):
    cb = state.run.trace_derivation
    if cb is not None:
        cb(rule, detail, len(state.theta), len(state.delta))


def process_positive(state, f):
    """Apply one rewriting rule to a positive formula. Returns None when the
    state was rewritten in place, FAIL, or a list of alternative thunks."""
    f = simplify(state.deref(f))
    if isinstance(f, TrueF):
        _trace(state, "true", "")
        return None
    if isinstance(f, FalseF):
        _trace(state, "fail", "false")
        return FAIL
    if isinstance(f, And):
        _trace(state, "split", format_formula(f))
        state.theta.appendleft(f.right)
        state.theta.appendleft(f.left)
        return None
    if isinstance(f, Or):
        _trace(state, "branch", format_formula(f))
        out = []
        for d in disjuncts(f):
            out.append(lambda st, d=d: st.theta.appendleft(d))
        return out or FAIL
    if isinstance(f, Exists):
        renaming = {v: Var(fresh_var(v.strip("_") or "V")) for v in f.vars}
        _trace(state, "exists", ",".join(f.vars))
        state.theta.appendleft(substitute(f.body, renaming))
        return None
    if isinstance(f, Implies):
        state.theta.appendleft(Or(Not(f.premise), f.conclusion))
        return None
    if isinstance(f, Forall):
        return expand_forall(state, f)
    if isinstance(f, Not):
        return process_negation(state, f.body)
    if isinstance(f, (Comparison, InRange)):
        _trace(state, "post", format_formula(f))
        return None if post_constraint(state, f, positive=True) else FAIL
    if isinstance(f, Aggregate):
        return process_aggregate(state, f)
    if isinstance(f, Atom):
        if f.key in state.defined:
            _trace(state, "unfold", f.pred)
            state.theta.appendleft(state.unfold_defined(f, {}))
            return None
        return process_abduce(state, f)
    raise TypeError(f"process_positive: {f!r}")


def process_negation(state, g):
    g = simplify(state.deref(g))
    if isinstance(g, TrueF):
        return FAIL
    if isinstance(g, FalseF):
        return None
    if isinstance(g, Not):
        state.theta.appendleft(g.body)
        return None
    if isinstance(g, And):
        state.theta.appendleft(Or(Not(g.left), Not(g.right)))
        return None
    if isinstance(g, Or):
        state.theta.appendleft(Not(g.left))
        state.theta.appendleft(Not(g.right))
        return None
    if isinstance(g, Implies):
        state.theta.appendleft(Not(g.conclusion))
        state.theta.appendleft(g.premise)
        return None
    if isinstance(g, Forall):
        state.theta.appendleft(Exists(g.vars, Not(g.body)))
        return None
    if isinstance(g, (Comparison, InRange)):
        _trace(state, "post", f"not {format_formula(g)}")
        return None if post_constraint(state, g, positive=False) else FAIL
    if isinstance(g, Exists):
        renaming = {v: fresh_var(v.strip("_") or "V") for v in g.vars}
        body = substitute(g.body, {k: Var(n) for k, n in renaming.items()})
        push_denial(state, Denial(frozenset(renaming.values()), (body,)))
        return None
    if isinstance(g, Atom):
        if g.key in state.defined:
            state.theta.appendleft(Not(state.unfold_defined(g, {})))
            return None
        push_denial(state, Denial(frozenset(), (g,)))
        return None
    if isinstance(g, Aggregate):
        # functional reading: the aggregate's value differs from the result
        link = agg.reduce_aggregate(state, g, {})
        res = state.term_value(g.result, {})
        if res is None and isinstance(g.result, Var):
            raise LanguageError(
                f"negated aggregate with unbound result {format_formula(g)}"
            )
        c = state.compare_values_fd("\\=", res, link.result_var)
        if c is True:
            return None
        if c is False:
            return FAIL
        from .fd import LinearProp

        return None if state.store.post(LinearProp(((1, c),), "=", 1)) else FAIL
    raise TypeError(f"process_negation: {g!r}")


def post_constraint(state, f, positive=True):
    """Post a comparison or range atom to the store (hard)."""
    if isinstance(f, InRange):
        if positive:
            # binding occasion: V in l..u with V unbound creates the variable
            lo = state.term_value(f.lo, {})
            hi = state.term_value(f.hi, {})
            tv = state.term_value(f.term, {})
            if (
                tv is None and isinstance(f.term, Var)
                and isinstance(lo, int) and isinstance(hi, int)
            ):
                if lo > hi:
                    return False
                state.new_engine_fdvar(f.term.name, lo, hi)
                return True
            ok = post_constraint(state, Comparison(">=", f.term, f.lo), True)
            return ok and post_constraint(state, Comparison("=<", f.term, f.hi), True)
        # negation: t < lo or t > hi
        state.theta.appendleft(Or(
            Comparison("<", f.term, f.lo), Comparison(">", f.term, f.hi)
        ))
        return True
    op = f.op
    lhs = state.term_value(f.lhs, {})
    rhs = state.term_value(f.rhs, {})
    if lhs is not None and rhs is not None:
        c = state.compare_values_fd(op if positive else _neg_op(op), lhs, rhs)
        if isinstance(c, bool):
            return c
        from .fd import LinearProp

        return state.store.post(LinearProp(((1, c),), "=", 1))
    # symbolic binding: V = symbol / symbol = V
    if op == "=" and positive:
        if isinstance(f.lhs, Var) and lhs is None and isinstance(rhs, str):
            state.bind[f.lhs.name] = rhs
            return True
        if isinstance(f.rhs, Var) and rhs is None and isinstance(lhs, str):
            state.bind[f.rhs.name] = lhs
            return True
    if isinstance(rhs, str) or isinstance(lhs, str):
        raise SymbolComparisonError(
            f"cannot solve symbolic constraint {format_formula(f)}"
        )
    lterms, lk = state.linear_of(f.lhs)
    rterms, rk = state.linear_of(f.rhs)
    terms = lterms + [(-c, v) for c, v in rterms]
    k = rk - lk
    return state.store.post_linear(terms, op if positive else _neg_op(op), k)


def _neg_op(op):
    from .lang import NEGATED_OP

    return NEGATED_OP[op]


def process_aggregate(state, f):
    _trace(state, "aggregate", f.kind)
    try:
        link = agg.reduce_aggregate(state, f, {})
    except EmptySetMinimum as e:
        state.run.diagnostics.append(str(e))
        return FAIL
    res = state.term_value(f.result, {})
    if res is None:
        if isinstance(f.result, Var):
            state.bind[f.result.name] = link.result_var
            return None
        res = state.fd_term(f.result)
    c = state.compare_values_fd("=", res, link.result_var)
    if c is True:
        return None
    if c is False:
        return FAIL
    from .fd import LinearProp

    return None if state.store.post(LinearProp(((1, c),), "=", 1)) else FAIL


def process_abduce(state, atom):
    """Open atom in a positive context: reuse a matching abduced atom
    (alternatives) or add a fresh one (last alternative)."""
    args = []
    for a in atom.args:
        v = state.term_value(a, {})
        if v is None and not isinstance(a, Var):
            v = state.fd_term(a)
        args.append((a, v))
    sig_vals = tuple(v for _t, v in args)
    if all(v is not None and not hasattr(v, "domain") for _t, v in args):
        sig = (atom.key, sig_vals)
        for datom in state.delta_atoms(atom.key):
            if datom.ground_sig == sig:
                _trace(state, "abduce-dup", atom.pred)
                return None  # identical ground atom already abduced
    candidates = []
    for datom in state.delta_atoms(atom.key):
        feasible = True
        for (term, have), actual in zip(args, datom.args):
            if (
                have is not None and not hasattr(have, "domain")
                and not hasattr(actual, "domain") and have != actual
            ):
                feasible = False
                break
        if feasible:
            candidates.append(datom)

    def reuse(st, datom):
        for (term, have), actual in zip(args, datom.args):
            if have is None:
                st.bind[term.name] = actual
                continue
            c = st.compare_values_fd("=", have, actual)
            if c is False:
                return FAIL
            if c is not True:
                from .fd import LinearProp

                if not st.store.post(LinearProp(((1, c),), "=", 1)):
                    return FAIL
        _trace(st, "abduce-reuse", datom.format())
        return None

    def fresh(st):
        decl = st.run.theory.domain_decls.get(atom.key)
        new_args = []
        for i, (term, have) in enumerate(args):
            rng = decl[i] if decl is not None and i < len(decl) else None
            if have is None:
                lo, hi = rng if rng else (INT_MIN, INT_MAX)
                have = st.new_engine_fdvar(term.name, lo, hi)
            elif hasattr(have, "domain") and rng is not None:
                if not st.store.set_domain(
                    have, have.domain.intersect_range(*rng), "dom-decl"
                ):
                    return FAIL
            elif isinstance(have, int) and rng is not None:
                if not (rng[0] <= have <= rng[1]):
                    return FAIL
            new_args.append(have)
        datom = DeltaAtom(atom.key, tuple(new_args))
        _trace(st, "abduce", datom.format())
        return add_delta(st, datom)

    if not candidates:
        return FAIL if fresh(state) is FAIL else None
    alts = [lambda st, d=d: reuse(st, d) for d in candidates]
    alts.append(fresh)
    return alts


def add_delta(state, datom):
    """Insert an abduced atom and run every watcher: parked denials produce
    new obligations, match chains and unfolded sets grow."""
    state.delta.append(datom)
    state.delta_idx.setdefault(datom.key, []).append(datom)
    for (denial, lit) in state.parked.get(datom.key, ()):
        inst = match_denial(state, denial, lit, datom)
        if inst is not None:
            state.theta.append(inst)
    for (key, _pattern), chain in list(state.chain_memo.items()):
        if key == datom.key:
            chain.extend(state, datom)
    for watcher in list(state.watch_idx.get(datom.key, ())):
        watcher.on_abduction(state, datom)
    if state.store.failed:
        return FAIL
    return None


# ---------------------------------------------------------------------------
# Universally quantified axioms


def _is_guard(state, f, uvars):
    """Open-free, FD-free conjunct whose variables are all universally
    quantified: decidable by the ground tables."""
    from .lang import atoms_of

    if free_vars(f) - uvars:
        return False
    if _has_storeref(f):
        return False
    for a in atoms_of(f):
        if a.key not in state.defined or a.key in state.open_dependent:
            return False
    if isinstance(f, (Comparison, InRange, Atom, TrueF, FalseF, Not, And, Or, Exists)):
        return True
    return False


def _has_storeref(f):
    if isinstance(f, StoreRef):
        return True
    if hasattr(f, "__dataclass_fields__"):
        for name in f.__dataclass_fields__:
            v = getattr(f, name)
            if isinstance(v, tuple):
                if any(_has_storeref(x) for x in v if hasattr(x, "__dataclass_fields__") or isinstance(x, StoreRef)):
                    return True
            elif hasattr(v, "__dataclass_fields__") or isinstance(v, StoreRef):
                if _has_storeref(v):
                    return True
    return False


def expand_forall(state, f):
    """forall(vars): P => C. Decidable guard conjuncts of P are enumerated by
    the ground tables; each guard solution yields either a positive push (no
    residual premise and everything instantiated), a lifted aggregate premise,
    or a denial carrying the remaining universals."""
    body = f.body if isinstance(f.body, Implies) else Implies(TrueF(), f.body)
    uvars = set(f.vars)
    premise_parts = conjuncts(body.premise)
    guards = [p for p in premise_parts if _is_guard(state, p, uvars)]
    residual = [p for p in premise_parts if not _is_guard(state, p, uvars)]
    solutions = None
    if guards:
        try:
            solutions = list(state.run.tables.solutions(mk_and(guards), {}))
        except (NotEnumerable, OpenAtomReached):
            solutions = None
    if solutions is None:
        residual = premise_parts
        solutions = [{}]
        if guards:
            guards = []
    _trace(state, "expand", f"{len(solutions)} instances")
    for sol in solutions:
        sub = {n: value_term(v) for n, v in sol.items() if n in uvars}
        remaining = frozenset(v for v in uvars if v not in sub)
        res = [simplify(substitute(p, sub)) for p in residual]
        conc = simplify(substitute(body.conclusion, sub))
        res = [p for p in res if not isinstance(p, TrueF)]
        if any(isinstance(p, FalseF) for p in res):
            continue
        if not res and not remaining:
            state.theta.append(conc)
            continue
        lifted = _try_aggregate_lift(state, res, conc, remaining)
        if lifted is not None:
            state.theta.append(lifted)
            continue
        push_denial(state, Denial(remaining, tuple(res) + (Not(conc),)))
    return None


def _try_aggregate_lift(state, residual, conclusion, remaining):
    """forall C. (agg(...,C) and Rest => Conc)  ==  exists C. agg(...,C) and
    (Rest => Conc), because aggregates are functional in their result. Only
    applies when every residual conjunct is such an aggregate and the
    remaining universals are exactly their result variables."""
    if not residual:
        return None
    aggs = [p for p in residual if isinstance(p, Aggregate)]
    if len(aggs) != len(residual):
        return None
    result_vars = set()
    for a in aggs:
        if not isinstance(a.result, Var) or a.result.name not in remaining:
            return None
        if free_vars(a) & remaining - {a.result.name}:
            return None
        result_vars.add(a.result.name)
    if result_vars != set(remaining):
        return None
    renaming = {n: Var(fresh_var(n)) for n in sorted(result_vars)}
    parts = [substitute(a, renaming) for a in aggs]
    parts.append(substitute(conclusion, renaming))
    return mk_and(parts)


# ---------------------------------------------------------------------------
# Denials


def push_denial(state, denial):
    state.theta.append(denial)


def process_denial(state, denial):
    """Normalize and dispatch one denial. Either it is discharged, split,
    parked on an open literal, deferred (universals nothing can instantiate),
    or compiled into the store as a negated condition."""
    uvars = set(denial.uvars)
    lits = list(denial.lits)
    i = 0
    while i < len(lits):
        lit = simplify(state.deref(lits[i]))
        if isinstance(lit, TrueF):
            lits.pop(i)
            continue
        if isinstance(lit, FalseF):
            _trace(state, "denial-sat", "")
            return None
        if isinstance(lit, And):
            lits[i:i + 1] = conjuncts(lit)
            continue
        if isinstance(lit, Or):
            for d in disjuncts(lit):
                push_denial(state, Denial(frozenset(uvars), tuple(
                    lits[:i] + [d] + lits[i + 1:]
                )))
            _trace(state, "denial-split", "")
            return None
        if isinstance(lit, Exists):
            renaming = {v: fresh_var(v.strip("_") or "U") for v in lit.vars}
            uvars |= set(renaming.values())
            lits[i] = substitute(lit.body, {k: Var(n) for k, n in renaming.items()})
            continue
        if isinstance(lit, Not):
            inner = lit.body
            if isinstance(inner, Not):
                lits[i] = inner.body
                continue
            if isinstance(inner, And):
                lits[i] = Or(Not(inner.left), Not(inner.right))
                continue
            if isinstance(inner, Or):
                lits[i:i + 1] = [Not(d) for d in disjuncts(inner)]
                continue
            if isinstance(inner, Implies):
                lits[i:i + 1] = [inner.premise, Not(inner.conclusion)]
                continue
            if isinstance(inner, Forall):
                lits[i] = Exists(inner.vars, Not(inner.body))
                continue
            if isinstance(inner, Atom) and inner.key in state.defined:
                if not (free_vars(inner) & uvars) or True:
                    lits[i] = Not(state._unfold_with_uvars(inner, uvars))
                    continue
        if isinstance(lit, Atom) and lit.key in state.defined:
            lits[i] = state._unfold_with_uvars(lit, uvars)
            continue
        if _ground_decidable(state, lit, uvars):
            if state.run.tables.truth(lit, {}):
                lits.pop(i)
                continue
            _trace(state, "denial-sat", format_formula(lit))
            return None
        expanded = _expand_range_lit(state, lit, uvars, lits, i)
        if expanded is not None:
            return expanded
        bound = _instantiate_equation(state, lit, uvars, lits, i)
        if bound:
            uvars = bound[0]
            lits = bound[1]
            i = 0
            continue
        lifted = _lift_denial_aggregate(state, lit, uvars, lits, i)
        if lifted is not None:
            return lifted
        i += 1
    # fixpoint reached
    uvars = {u for u in uvars if any(u in free_vars(l) for l in lits)}
    if not lits:
        _trace(state, "denial-violated", denial.format())
        return FAIL
    for i, lit in enumerate(lits):
        if isinstance(lit, Atom) and lit.key not in state.defined:
            return _park_denial(state, Denial(frozenset(uvars), tuple(
                lits[:i] + lits[i + 1:]
            )), lit)
    if uvars:
        _trace(state, "denial-defer", denial.format())
        state.deferred.append(Denial(frozenset(uvars), tuple(lits)))
        return None
    if len(lits) == 1 and isinstance(lits[0], Not):
        # <- not G  flips to the positive obligation G (may abduce)
        state.theta.appendleft(lits[0].body)
        return None
    cond = agg.formula_condition(state, mk_and(lits), {})
    _trace(state, "denial-compile", denial.format())
    if cond is True:
        return FAIL
    if cond is False:
        return None
    from .fd import LinearProp

    return None if state.store.post(LinearProp(((1, cond),), "=", 0)) else FAIL


def _ground_decidable(state, lit, uvars):
    from .lang import atoms_of

    if free_vars(lit) or _has_storeref(lit):
        return False
    for a in atoms_of(lit):
        if a.key not in state.defined or a.key in state.open_dependent:
            return False
    if isinstance(lit, Aggregate):
        return False
    return True


def _expand_range_lit(state, lit, uvars, lits, i):
    if not isinstance(lit, InRange):
        return None
    if not (isinstance(lit.term, Var) and lit.term.name in uvars):
        return None
    lo = state.term_value(lit.lo, {})
    hi = state.term_value(lit.hi, {})
    if not isinstance(lo, int) or not isinstance(hi, int):
        return None
    if hi - lo + 1 > agg.RANGE_ENUM_LIMIT:
        return None
    name = lit.term.name
    rest = lits[:i] + lits[i + 1:]
    for v in range(lo, hi + 1):
        sub = {name: Int(v)}
        push_denial(state, Denial(
            frozenset(uvars - {name}),
            tuple(substitute(l, sub) for l in rest),
        ))
    _trace(state, "denial-expand", f"{name} in {lo}..{hi}")
    return None  # replaced by instances


def _instantiate_equation(state, lit, uvars, lits, i):
    if not isinstance(lit, Comparison) or lit.op != "=":
        return None
    var = None
    other = None
    if isinstance(lit.lhs, Var) and lit.lhs.name in uvars:
        var, other = lit.lhs.name, lit.rhs
    elif isinstance(lit.rhs, Var) and lit.rhs.name in uvars:
        var, other = lit.rhs.name, lit.lhs
    if var is None:
        return None
    if free_vars(other) & uvars:
        return None
    val = state.term_value(other, {})
    if val is None:
        return None
    sub = {var: value_term(val)}
    new_lits = [substitute(l, sub) for l in lits[:i] + lits[i + 1:]]
    return (uvars - {var}, new_lits)


def _lift_denial_aggregate(state, lit, uvars, lits, i):
    """An aggregate literal whose result variable is universal is functional:
    introduce the value positively and continue the denial on the residue."""
    if not isinstance(lit, Aggregate):
        return None
    if not (isinstance(lit.result, Var) and lit.result.name in uvars):
        return None
    if free_vars(lit) & uvars - {lit.result.name}:
        return None
    fresh = fresh_var(lit.result.name)
    sub = {lit.result.name: Var(fresh)}
    state.theta.appendleft(Aggregate(lit.kind, lit.set, lit.func, Var(fresh)))
    rest = [substitute(l, sub) for l in lits[:i] + lits[i + 1:]]
    state.theta.append(Denial(
        frozenset(uvars - {lit.result.name}), tuple(rest)
    ))
    _trace(state, "denial-lift", lit.kind)
    return None


def _park_denial(state, residual, lit):
    """Check the denial against every abduced atom and keep watching."""
    key = lit.key
    state.parked.setdefault(key, []).append((residual, lit))
    for datom in state.delta_atoms(key):
        inst = match_denial(state, residual, lit, datom)
        if inst is not None:
            state.theta.append(inst)
    _trace(state, "denial-park", lit.pred)
    return None


def match_denial(state, residual, lit, datom):
    """Instance of a parked denial for one abduced atom: universal variables
    bind to the atom's arguments; other positions contribute equations."""
    sub = {}
    extra = []
    for pattern, actual in zip(lit.args, datom.args):
        aval = value_term(actual)
        if isinstance(pattern, Var) and pattern.name in residual.uvars:
            prev = sub.get(pattern.name)
            if prev is None:
                sub[pattern.name] = aval
            else:
                extra.append(Comparison("=", prev, aval))
            continue
        pv = state.term_value(state.deref(pattern), {})
        if pv is not None and not hasattr(pv, "domain") and not hasattr(
            actual, "domain"
        ):
            if pv != actual:
                return None  # statically incompatible
            continue
        extra.append(Comparison("=", pattern, aval))
    lits = tuple(substitute(l, sub) for l in residual.lits) + tuple(extra)
    return Denial(frozenset(residual.uvars - set(sub)), lits)


# engine-side helper attached to State: unfold but freshen against universals
def _unfold_with_uvars(self, atom, uvars):
    body = self.unfold_defined(atom, {})
    clash = free_vars(body) & uvars
    if clash:
        body = substitute(body, {n: Var(fresh_var(n)) for n in clash})
    return body


State._unfold_with_uvars = _unfold_with_uvars


# ---------------------------------------------------------------------------
# The derivation loop


def step(state):
    """One rewriting step on a cloned state; returns the list of successor
    states in alternative order (empty on failure)."""
    st = state.clone()
    if not st.theta:
        return []
    item = st.theta.popleft()
    outcome = process_denial(st, item) if isinstance(item, Denial) else (
        process_positive(st, item)
    )
    if outcome is FAIL:
        return []
    if outcome is None:
        return [st]
    successors = []
    for alt in outcome:
        st2 = st.clone()
        if alt(st2) is not FAIL:
            successors.append(st2)
    return successors


def derive(state, deadline=None):
    """Depth-first rewriting to quiescence; yields success states with their
    stores sealed and consistent. Floundering raises."""
    run = state.run
    while state.theta:
        if deadline is not None and time.monotonic() > deadline:
            raise SearchTimeout("derivation deadline exceeded")
        run.steps += 1
        item = state.theta.popleft()
        if isinstance(item, Denial):
            outcome = process_denial(state, item)
        else:
            outcome = process_positive(state, item)
        if outcome is FAIL:
            return
        if state.store.failed:
            return
        if isinstance(outcome, list):
            for alt in outcome:
                mark = state.store.save()
                branch = state.clone()
                if alt(branch) is not FAIL and not state.store.failed:
                    yield from derive(branch, deadline)
                state.store.restore(mark)
            return
    # quiescence
    if state.deferred:
        denial = state.deferred[0]
        var = sorted(denial.uvars)[0] if denial.uvars else "?"
        raise FlounderingError(denial.format(), var)
    mark = state.store.save()
    if seal_state(state):
        yield state
    state.store.restore(mark)


def seal_state(state):
    """Quiescence: no formula can abduce any more, so every watched
    disjunction is complete. Zero the pending bits and finalize aggregates."""
    ok = True
    for chain in state.chain_memo.values():
        ok = chain.seal(state) and ok
    for cc in state.condchains:
        ok = cc.seal(state) and ok
    for uset in state.usets:
        ok = uset.seal(state) and ok
    for link in state.links:
        if not ok:
            break
        try:
            ok = link.finalize(state) and ok
        except EmptySetMinimum as e:
            state.run.diagnostics.append(
                f"UnsupportedAggregateAbduction: {e} (no rule could supply members)"
            )
            ok = False
    ok = ok and state.store.propagate()
    if not ok and any(l.unfolded.watchers for l in state.links):
        state.run.diagnostics.append(
            "UnsupportedAggregateAbduction: an aggregate over open predicates "
            "demanded members that no abduction supplied (aggregate evaluation "
            "never abduces)"
        )
    _trace(state, "seal", "ok" if ok else "inconsistent")
    return ok


# ---------------------------------------------------------------------------
# Solving end to end


def _label_vars(state, query):
    ordered = []
    seen = set()
    for datom in state.delta:
        for a in datom.args:
            if hasattr(a, "domain") and id(a) not in seen:
                seen.add(id(a))
                ordered.append(a)
    for name in sorted(free_vars(query.goal)):
        v = state.bind.get(name)
        if v is not None and hasattr(v, "domain") and id(v) not in seen:
            seen.add(id(v))
            ordered.append(v)
    return ordered


def extract_answer(state, query, solution, objective_value=None, status="satisfiable"):
    """Ground the abduced atoms with labeled values, dedupe, and validate the
    whole answer against the independent oracle before emitting it."""
    delta_tuples = {}
    for datom in state.delta:
        vals = tuple(
            solution[a] if hasattr(a, "domain") else a for a in datom.args
        )
        delta_tuples.setdefault(datom.key, set()).add(vals)
    subst = {}
    for name in sorted(free_vars(query.goal)):
        v = state.bind.get(name)
        if v is None:
            continue
        subst[name] = solution[v] if hasattr(v, "domain") else v
    atoms = []
    for key in sorted(delta_tuples):
        for vals in sorted(delta_tuples[key], key=_atom_sort_key):
            if vals:
                atoms.append(f"{key[0]}({','.join(str(v) for v in vals)})")
            else:
                atoms.append(key[0])
    from .oracle import check_answer

    if not check_answer(state.run.theory, query.goal, delta_tuples):
        raise InternalSoundnessError(
            f"answer failed oracle validation: {atoms}"
        )
    return Answer(
        delta=atoms,
        delta_tuples=delta_tuples,
        theta_subst=subst,
        bindings=subst,
        objective=objective_value,
        status=status,
    )


def _atom_sort_key(vals):
    return tuple((0, v) if isinstance(v, int) else (1, str(v)) for v in vals)


def solve(theory, query, *, max_answers=1, timeout=None,
          trace_propagation=None, trace_derivation=None,
          on_incumbent=None, validate=True) -> SolveResult:
    """Run the full pipeline on a parsed theory and query."""
    t0 = time.monotonic()
    deadline = t0 + timeout if timeout else None
    run = Run(theory, trace_propagation, trace_derivation)
    state = State(run)
    state.theta.append(query.goal)
    for ax in run.theory.fol_axioms:
        state.theta.append(ax)

    result = SolveResult(status="failure")
    reduction_done = None
    answers = []
    incumbents = []
    best_objective = None

    try:
        for success in derive(state, deadline):
            if reduction_done is None:
                reduction_done = time.monotonic()
            lvars = _label_vars(success, query)
            if query.objective is not None:
                sense, varname = query.objective
                obj = success.bind.get(varname)
                if obj is None:
                    raise LanguageError(
                        f"objective variable {varname} was never bound"
                    )
                if not hasattr(obj, "domain"):
                    sol = next(label(success.store, lvars, deadline=deadline), None)
                    if sol is not None:
                        answers.append(extract_answer(
                            success, query, sol, obj, status="optimal"
                        ))
                        incumbents.append(obj)
                    continue
                if best_objective is not None:
                    nd = (
                        obj.domain.clamp_min(best_objective + 1)
                        if sense == "maximize"
                        else obj.domain.clamp_max(best_objective - 1)
                    )
                    if not success.store.set_domain(obj, nd, "global-bound"):
                        continue

                local = {}

                def _note(val, sol, _s=success, _local=local):
                    incumbents.append(val)
                    _local["answer"] = extract_answer(
                        _s, query, sol, val, status="best-so-far"
                    )
                    if on_incumbent is not None:
                        on_incumbent(val, _local["answer"])

                best, status, _inc = branch_and_bound(
                    success.store, obj, sense, lvars,
                    deadline=deadline, on_incumbent=_note,
                )
                if best is not None:
                    ans = local["answer"]
                    ans.status = "optimal" if status == "optimal" else "best-so-far"
                    answers.append(ans)
                    best_objective = ans.objective
                    if status == "best-so-far":
                        break
            else:
                for sol in label(success.store, lvars, deadline=deadline):
                    answers.append(extract_answer(success, query, sol))
                    if len(answers) >= max_answers:
                        break
                if len(answers) >= max_answers:
                    break
    except FlounderingError as e:
        result.status = "floundering"
        result.diagnostic = str(e)
    except UnsupportedSetExpression as e:
        result.status = "unsupported"
        result.diagnostic = str(e)
    except SearchTimeout:
        pass

    if reduction_done is None:
        reduction_done = time.monotonic()
    result.reduction_time = reduction_done - t0
    result.search_time = time.monotonic() - reduction_done

    if query.objective is not None and answers:
        # keep only the best answer of the optimization run
        answers = [answers[-1]]
    result.answers = answers
    result.incumbents = incumbents
    result.stats = run.store.stats()
    if answers:
        result.status = "success"
    elif result.status == "failure" and run.diagnostics:
        result.diagnostic = run.diagnostics[0]
    return result
