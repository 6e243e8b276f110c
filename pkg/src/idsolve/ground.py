"""Ground evaluation of formulas over finite extensions.

Defined predicates are evaluated through their completions by generating
bindings from rule bodies (falling back to declared domains when a head
variable is not generated). Open predicates read from an explicit
interpretation; when none is supplied, touching an open atom aborts the
evaluation, which is how the engine discovers that a guard is not decidable.
"""

from __future__ import annotations

from .completion import build_dependency_graph, complete_all, merge_definitions
from .errors import DomainTooLarge, LanguageError, NonFunctional
from .lang import (
    Aggregate, And, Atom, Comparison, Const, Exists, FalseF, Forall, Implies,
    InRange, Int, Not, Or, TrueF, Var, compare_values, eval_ground_term,
    free_vars, substitute_term,
)


class OpenAtomReached(Exception):
    """Internal: evaluation touched an open predicate with no interpretation."""

    def __init__(self, key):
        self.key = key


class NotEnumerable(Exception):
    """Internal: a variable cannot be generated from the formula."""

    def __init__(self, detail):
        self.detail = detail


def open_dependent_keys(theory):
    """Defined predicate keys whose rule bodies reach an open predicate."""
    graph = build_dependency_graph(theory)
    defined = graph.defined
    memo = {}

    def reaches_open(key):
        if key in memo:
            return memo[key]
        memo[key] = False  # non-recursive, but guard anyway
        out = False
        for succ in graph.successors(key):
            if succ not in defined or reaches_open(succ):
                out = True
                break
        memo[key] = out
        return out

    return {k for k in defined if reaches_open(k)}


def value_to_term(v):
    return Int(v) if isinstance(v, int) else Const(v)


class GroundEval:
    """Formula evaluation over (completed definitions, open interpretation)."""

    def __init__(self, theory, completions=None, open_interp=None):
        self.theory = merge_definitions(theory)
        self.completions = completions if completions is not None else complete_all(theory)
        self.defined = self.theory.defined_keys()
        self.open_interp = open_interp
        self._ext = {}
        self._point = {}

    # -- terms

    def eval_term(self, term, env):
        t = substitute_term(term, {k: value_to_term(v) for k, v in env.items()})
        val = eval_ground_term(t)
        return val

    # -- extensions of defined predicates

    def extension(self, key):
        if key in self._ext:
            return self._ext[key]
        self._ext[key] = set()  # placeholder; definitions are non-recursive
        pred, arity = key
        out = set()
        definition = self.theory.definitions[0] if self.theory.definitions else None
        rules = [r for r in definition.rules if r.key == key] if definition else []
        for rule in rules:
            try:
                for env in self.solutions(rule.body, {}):
                    tup = tuple(self.eval_term(a, env) for a in rule.head_args)
                    if any(v is None for v in tup):
                        raise NotEnumerable(f"head variable of {pred}/{arity} not generated")
                    out.add(tup)
            except NotEnumerable:
                out = self._extension_from_domain(key, rules)
                break
        self._ext[key] = out
        return out

    def _extension_from_domain(self, key, rules):
        pred, arity = key
        ranges = self.theory.domain_decls.get(key)
        if ranges is None:
            raise DomainTooLarge(
                f"cannot enumerate {pred}/{arity}: rule bodies do not generate its "
                f"arguments and no dom declaration exists"
            )
        out = set()
        for tup in _iter_tuples(ranges):
            for rule in rules:
                env = {}
                ok = True
                eqs = []
                for formal, actual in zip(rule.head_args, tup):
                    if isinstance(formal, Var):
                        if formal.name in env and env[formal.name] != actual:
                            ok = False
                            break
                        env[formal.name] = actual
                    else:
                        val = eval_ground_term(formal)
                        if val != actual:
                            ok = False
                            break
                if ok and self.truth(rule.body, env):
                    out.add(tup)
                    break
        return out

    # -- generation

    def solutions(self, f, env):
        """All extensions of `env` making f true; generated bindings come from
        atoms, ranges, and equations."""
        if isinstance(f, TrueF):
            yield env
            return
        if isinstance(f, FalseF):
            return
        if isinstance(f, And):
            for env1 in self.solutions(f.left, env):
                yield from self.solutions(f.right, env1)
            return
        if isinstance(f, Or):
            yield from self.solutions(f.left, env)
            yield from self.solutions(f.right, env)
            return
        if isinstance(f, Exists):
            shadowed = {v: env[v] for v in f.vars if v in env}
            inner = {k: v for k, v in env.items() if k not in f.vars}
            for env1 in self.solutions(f.body, inner):
                out = {k: v for k, v in env1.items() if k not in f.vars}
                out.update(shadowed)
                yield out
            return
        if isinstance(f, Atom):
            yield from self._atom_solutions(f, env)
            return
        if isinstance(f, Comparison):
            lhs = self.eval_term(f.lhs, env)
            rhs = self.eval_term(f.rhs, env)
            if lhs is not None and rhs is not None:
                if compare_values(f.op, lhs, rhs):
                    yield env
                return
            if f.op == "=" and isinstance(f.lhs, Var) and f.lhs.name not in env and rhs is not None:
                yield {**env, f.lhs.name: rhs}
                return
            if f.op == "=" and isinstance(f.rhs, Var) and f.rhs.name not in env and lhs is not None:
                yield {**env, f.rhs.name: lhs}
                return
            raise NotEnumerable(f"comparison over unbound variables: {f}")
        if isinstance(f, InRange):
            lo = self.eval_term(f.lo, env)
            hi = self.eval_term(f.hi, env)
            val = self.eval_term(f.term, env)
            if lo is None or hi is None:
                raise NotEnumerable(f"range with unbound bounds: {f}")
            if val is not None:
                if isinstance(val, str):
                    raise LanguageError("range membership on a symbol")
                if lo <= val <= hi:
                    yield env
                return
            if isinstance(f.term, Var) and f.term.name not in env:
                for v in range(lo, hi + 1):
                    yield {**env, f.term.name: v}
                return
            raise NotEnumerable(f"range over a non-variable term: {f}")
        if isinstance(f, Not):
            if not self.truth(f.body, env):
                yield env
            return
        if isinstance(f, (Implies, Forall)):
            if self.truth(f, env):
                yield env
            return
        if isinstance(f, Aggregate):
            value = self.aggregate_value(f, env)
            if value is None:
                return  # minimum/maximum of an empty set holds for no value
            res = self.eval_term(f.result, env)
            if res is not None:
                if res == value:
                    yield env
                return
            if isinstance(f.result, Var) and f.result.name not in env:
                yield {**env, f.result.name: value}
                return
            raise NotEnumerable(f"aggregate result not bindable: {f}")
        raise TypeError(f"solutions: unexpected formula {f!r}")

    def _point_truth(self, key, vals):
        """Truth of a fully ground defined atom via its completion body; never
        needs the full extension, so it works for predicates like `better(X)`
        whose rules do not generate X."""
        memo_key = (key, vals)
        if memo_key in self._point:
            return self._point[memo_key]
        from .completion import unfold

        body = unfold(self.completions[key], tuple(value_to_term(v) for v in vals))
        result = self.truth(body, {})
        self._point[memo_key] = result
        return result

    def _atom_solutions(self, atom, env):
        key = atom.key
        bound = [self.eval_term(a, env) for a in atom.args]
        if key in self.defined and all(v is not None for v in bound):
            if self._point_truth(key, tuple(bound)):
                yield env
            return
        if key in self.defined:
            relation = self.extension(key)
        elif self.open_interp is not None:
            relation = self.open_interp.get(key, frozenset())
        else:
            raise OpenAtomReached(key)
        for tup in sorted(relation, key=_sort_key):
            new_env = dict(env)
            ok = True
            for formal, have, actual in zip(atom.args, bound, tup):
                if have is not None:
                    if have != actual:
                        ok = False
                        break
                elif isinstance(formal, Var):
                    if formal.name in new_env and new_env[formal.name] != actual:
                        ok = False
                        break
                    new_env[formal.name] = actual
                else:
                    raise NotEnumerable(
                        f"argument {formal} of {atom.pred} is not invertible"
                    )
            if ok:
                yield new_env

    # -- truth of closed formulas

    def truth(self, f, env) -> bool:
        if isinstance(f, TrueF):
            return True
        if isinstance(f, FalseF):
            return False
        if isinstance(f, And):
            return self.truth(f.left, env) and self.truth(f.right, env)
        if isinstance(f, Or):
            return self.truth(f.left, env) or self.truth(f.right, env)
        if isinstance(f, Not):
            return not self.truth(f.body, env)
        if isinstance(f, Implies):
            return not self.truth(f.premise, env) or self.truth(f.conclusion, env)
        if isinstance(f, Exists):
            inner = {k: v for k, v in env.items() if k not in f.vars}
            for _ in self.solutions(f.body, inner):
                return True
            return False
        if isinstance(f, Forall):
            inner = {k: v for k, v in env.items() if k not in f.vars}
            body = f.body if isinstance(f.body, Implies) else Implies(TrueF(), f.body)
            for env1 in self.solutions(body.premise, inner):
                if not self.truth(body.conclusion, env1):
                    return False
            return True
        if isinstance(f, Atom):
            vals = tuple(self.eval_term(a, env) for a in f.args)
            if any(v is None for v in vals):
                raise NotEnumerable(f"truth of non-ground atom {f}")
            key = f.key
            if key in self.defined:
                return self._point_truth(key, vals)
            if self.open_interp is not None:
                return vals in self.open_interp.get(key, frozenset())
            raise OpenAtomReached(key)
        if isinstance(f, (Comparison, InRange)):
            for _ in self.solutions(f, env):
                return True
            return False
        if isinstance(f, Aggregate):
            value = self.aggregate_value(f, env)
            if value is None:
                return False
            res = self.eval_term(f.result, env)
            if res is None:
                raise NotEnumerable(f"aggregate result unbound in truth check: {f}")
            return res == value
        raise TypeError(f"truth: unexpected formula {f!r}")

    # -- aggregates by direct materialization

    def set_elements(self, sexpr, env):
        inner = {k: v for k, v in env.items() if k not in sexpr.params}
        out = set()
        for env1 in self.solutions(sexpr.body, inner):
            tup = tuple(env1.get(p) for p in sexpr.params)
            if any(v is None for v in tup):
                raise NotEnumerable(
                    f"set parameter not generated by the body: {sexpr.params}"
                )
            out.add(tup)
        return out

    def func_value(self, fexpr, element, env):
        inner = {k: v for k, v in env.items()
                 if k not in fexpr.params and k != fexpr.result}
        inner.update(dict(zip(fexpr.params, element)))
        values = set()
        for env1 in self.solutions(fexpr.body, inner):
            v = env1.get(fexpr.result)
            if v is None:
                raise NotEnumerable(f"function result not generated for {element}")
            values.add(v)
        if len(values) != 1:
            raise NonFunctional(element, len(values))
        return values.pop()

    def aggregate_value(self, agg, env):
        """card/sum/product/minimum/maximum by materializing the set.
        Returns None for minimum/maximum of an empty set."""
        elements = self.set_elements(agg.set, env)
        if agg.kind == "card":
            return len(elements)
        if agg.kind in ("sum", "product"):
            total = 0 if agg.kind == "sum" else 1
            for elem in sorted(elements, key=_sort_key):
                fv = self.func_value(agg.func, elem, env)
                if isinstance(fv, str):
                    raise LanguageError("sum/product over symbol values")
                total = total + fv if agg.kind == "sum" else total * fv
            return total
        if not elements:
            return None
        if any(len(t) != 1 or isinstance(t[0], str) for t in elements):
            raise LanguageError(f"{agg.kind} needs a unary integer set")
        values = [t[0] for t in elements]
        return min(values) if agg.kind == "minimum" else max(values)


def _sort_key(tup):
    if not isinstance(tup, tuple):
        tup = (tup,)
    return tuple((0, v) if isinstance(v, int) else (1, v) for v in tup)


def _iter_tuples(ranges):
    if not ranges:
        yield ()
        return
    (lo, hi), *rest = ranges
    for v in range(lo, hi + 1):
        for tail in _iter_tuples(rest):
            yield (v,) + tail
