"""Reduction of set expressions and aggregates to reified store constraints.

A set expression is unfolded against the completed definitions and the
current table of abduced atoms into potential members, each guarded by a
boolean membership condition. Open predicates encountered during unfolding
register watchers; when the engine abduces a matching atom later, the
disjunction grows. Growth is monotone: every extensible disjunction carries a
pending boolean (and every counting aggregate a pending slack term) that is
forced to zero when the engine seals the set, so earlier propagation is never
retracted.

The `ctx` object threaded through this module is the engine run; it provides
the store, the abduced-atom table, completions, ground tables, and term-to-FD
coercion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import EmptySetMinimum, UnsupportedSetExpression
from .fd import BoolOrProp, INT_MAX, INT_MIN, LinearProp
from .lang import (
    Aggregate, And, Atom, Comparison, Exists, FalseF, Forall, Implies,
    InRange, Not, Or, SetExpr, TrueF, Var, format_formula, format_set,
    free_vars,
)

RANGE_ENUM_LIMIT = 10000


# ---------------------------------------------------------------------------
# Membership condition plumbing


def eq_bool(ctx, a, b):
    """Condition that two argument values (int | symbol | FDVar) coincide.
    Returns True/False when decidable now, else a boolean variable."""
    ground_a = not hasattr(a, "domain")
    ground_b = not hasattr(b, "domain")
    if ground_a and ground_b:
        return a == b
    if isinstance(a, str) or isinstance(b, str):
        return False  # a symbol never equals an integer-valued FD variable
    terms, k = [], 0
    for sign, item in ((1, a), (-1, b)):
        if hasattr(item, "domain"):
            terms.append((sign, item))
        else:
            k -= sign * item
    return ctx.store.reify_linear(terms, "=", k)


def match_condition(ctx, pattern, args):
    """Conjunction of positionwise equalities between a bound argument
    pattern and an abduced atom's arguments; None when statically impossible."""
    bits = []
    for p, a in zip(pattern, args):
        c = eq_bool(ctx, p, a)
        if c is False:
            return None
        if c is not True:
            bits.append(c)
    if not bits:
        return True
    if len(bits) == 1:
        return bits[0]
    return ctx.store.bool_and(bits)


class MatchChain:
    """Extensible truth value of `p(args) holds in the final table` for a
    fully bound argument tuple: b <-> (match_1 or ... or match_n or pending).
    Abducing a new p-atom appends a disjunct by chaining a fresh pending
    boolean; sealing forces the final pending boolean to zero."""

    def __init__(self, ctx, key, pattern):
        self.key = key
        self.pattern = tuple(pattern)
        store = ctx.store
        bits = []
        for atom in ctx.delta_atoms(key):
            c = match_condition(ctx, self.pattern, atom.args)
            if c is True:
                c = store.true_bool()
            if c is not None:
                bits.append(c)
        self.pending = store.new_bool(name=f"_pend_{key[0]}")
        self.bool = store.bool_or(bits + [self.pending], name=f"_has_{key[0]}")
        self.sealed = False

    def extend(self, ctx, atom):
        if self.sealed:
            return
        store = ctx.store
        c = match_condition(ctx, self.pattern, atom.args)
        if c is None:
            return
        if c is True:
            c = store.true_bool()
        old_pending = self.pending
        self.pending = store.new_bool(name=f"_pend_{self.key[0]}")
        store.post(BoolOrProp(old_pending, (c, self.pending)))

    def seal(self, ctx):
        if self.sealed:
            return True
        self.sealed = True
        return ctx.store.post(LinearProp(((1, self.pending),), "=", 0))

    def clone(self):
        out = MatchChain.__new__(MatchChain)
        out.key = self.key
        out.pattern = self.pattern
        out.pending = self.pending
        out.bool = self.bool
        out.sealed = self.sealed
        return out


class CondChain:
    """Extensible truth value of an arbitrary closed condition formula:
    b <-> (branch conditions ... or pending). Used wherever a formula over
    open predicates must be compiled to a boolean without losing atoms that
    are only abduced later."""

    def __init__(self, ctx, formula, env):
        self.formula = formula
        self.env = dict(env)
        self.watchers = set()
        store = ctx.store
        alts = _branch_alts(ctx, self.watchers, formula, env)
        self.pending = store.new_bool(name="_cpend")
        self.certain = any(a is True for a in alts)
        bits = [a for a in alts if a is not True]
        if self.certain:
            self.bool = store.true_bool()
            self.sealed = True
        else:
            self.bool = store.bool_or(bits + [self.pending], name="_cond")
            self.sealed = False
            for key in self.watchers:
                ctx.register_watch(key, self)

    def on_abduction(self, ctx, atom):
        if self.sealed:
            return
        store = ctx.store
        alts = _branch_alts(ctx, self.watchers, self.formula, self.env, focus=atom)
        bits = []
        for a in alts:
            if a is True:
                bits.append(store.true_bool())
            else:
                bits.append(a)
        if not bits:
            return
        old = self.pending
        self.pending = store.new_bool(name="_cpend")
        store.post(BoolOrProp(old, tuple(bits + [self.pending])))

    def seal(self, ctx):
        if self.sealed:
            return True
        self.sealed = True
        return ctx.store.post(LinearProp(((1, self.pending),), "=", 0))

    def clone(self):
        out = CondChain.__new__(CondChain)
        out.formula = self.formula
        out.env = dict(self.env)
        out.watchers = set(self.watchers)
        out.pending = self.pending
        out.certain = self.certain
        out.bool = self.bool
        out.sealed = self.sealed
        return out


def _branch_alts(ctx, watch, formula, env, focus=None):
    """One condition value (True or a boolean var) per comprehension branch."""
    alts = []
    for br in comprehend(ctx, watch, formula, env, focus=focus):
        if focus is not None and not br.used_focus:
            continue
        if not br.conds:
            alts.append(True)
        elif len(br.conds) == 1:
            alts.append(br.conds[0])
        else:
            alts.append(ctx.store.bool_and(br.conds))
    return alts


def formula_condition(ctx, f, env):
    """Compile a formula with no unbound generator variables into a boolean
    truth value: True, False, or a boolean variable. Conditions over open
    predicates stay extensible through a CondChain."""
    chain = CondChain(ctx, f, env)
    if chain.certain:
        return True
    if not chain.watchers:
        # fixed disjunction; collapse the pending bit away
        ctx.store.post(LinearProp(((1, chain.pending),), "=", 0))
        chain.sealed = True
    return chain.bool


# ---------------------------------------------------------------------------
# Comprehension: evaluating a set body into branches


@dataclass
class Branch:
    env: dict
    conds: list
    used_focus: bool = False


def _with_cond(branch, cond):
    if cond is True:
        return branch
    if cond is False:
        return None
    return Branch(branch.env, branch.conds + [cond], branch.used_focus)


def comprehend(ctx, watch, f, env, focus=None):
    """Yield Branch objects for every way f can hold, binding unbound
    variables from generators (defined extensions, ranges, abduced atoms,
    equations, nested aggregates) and collecting boolean conditions from
    everything touching FD variables or open predicates. `watch` collects
    open predicate keys whose later abduction can create new branches;
    `focus` marks branches that involve one specific new atom during
    incremental re-evaluation."""
    if isinstance(f, TrueF):
        yield Branch(env, [])
        return
    if isinstance(f, FalseF):
        return
    if isinstance(f, And):
        for left in comprehend(ctx, watch, f.left, env, focus):
            for right in comprehend(ctx, watch, f.right, left.env, focus):
                yield Branch(
                    right.env, left.conds + right.conds,
                    left.used_focus or right.used_focus,
                )
        return
    if isinstance(f, Or):
        yield from comprehend(ctx, watch, f.left, env, focus)
        yield from comprehend(ctx, watch, f.right, env, focus)
        return
    if isinstance(f, Exists):
        inner = {k: v for k, v in env.items() if k not in f.vars}
        for br in comprehend(ctx, watch, f.body, inner, focus):
            restored = {k: v for k, v in br.env.items() if k not in f.vars}
            restored.update({k: env[k] for k in env})
            yield Branch(restored, br.conds, br.used_focus)
        return
    if isinstance(f, Not):
        missing = free_vars(f.body) - set(env)
        if missing:
            raise UnsupportedSetExpression(sorted(missing)[0], format_formula(f))
        sub = formula_condition(ctx, f.body, env)
        if watch is not None:
            for a in _open_atom_keys(ctx, f.body):
                watch.add(a)
        if sub is True:
            return
        if sub is False:
            yield Branch(env, [])
            return
        yield Branch(env, [ctx.store.bool_not(sub)])
        return
    if isinstance(f, Atom):
        yield from _comprehend_atom(ctx, watch, f, env, focus)
        return
    if isinstance(f, Comparison):
        yield from _comprehend_comparison(ctx, f, env)
        return
    if isinstance(f, InRange):
        yield from _comprehend_range(ctx, f, env)
        return
    if isinstance(f, Aggregate):
        yield from _comprehend_aggregate(ctx, f, env)
        return
    if isinstance(f, (Implies, Forall)):
        raise UnsupportedSetExpression("_", format_formula(f))
    raise TypeError(f"comprehend: unexpected formula {f!r}")


def _open_atom_keys(ctx, f):
    from .lang import atoms_of

    return {a.key for a in atoms_of(f) if a.key not in ctx.defined}


def _comprehend_atom(ctx, watch, atom, env, focus):
    key = atom.key
    vals = [ctx.term_value(a, env) for a in atom.args]
    unbound = []
    for a, v in zip(atom.args, vals):
        if v is None:
            if isinstance(a, Var):
                unbound.append(a.name)
            else:
                raise UnsupportedSetExpression(
                    sorted(free_vars(a) - set(env))[0], format_formula(atom)
                )
    if key in ctx.defined:
        yield from _comprehend_defined(ctx, watch, atom, key, vals, env, focus)
        return
    # open predicate
    if watch is not None:
        watch.add(key)
    if not unbound:
        b = ctx.chain_bool(key, tuple(vals))
        br = _with_cond(Branch(env, []), b)
        if br is not None:
            yield br
        return
    for datom in ctx.delta_atoms(key):
        new_env = dict(env)
        conds = []
        ok = True
        for have, formal, actual in zip(vals, atom.args, datom.args):
            if have is None and formal.name in new_env:
                have = new_env[formal.name]
            if have is not None:
                c = eq_bool(ctx, have, actual)
                if c is False:
                    ok = False
                    break
                if c is not True:
                    conds.append(c)
            else:
                new_env[formal.name] = actual
        if ok:
            yield Branch(new_env, conds, used_focus=(datom is focus))


def _comprehend_defined(ctx, watch, atom, key, vals, env, focus):
    if key not in ctx.open_dependent:
        has_fd = any(v is not None and hasattr(v, "domain") for v in vals)
        invertible = all(
            v is not None or isinstance(a, Var) for a, v in zip(atom.args, vals)
        )
        if not has_fd and not invertible:
            pass  # fall through to completion unfolding
        elif not has_fd and all(v is not None for v in vals):
            if ctx.tables_truth(key, tuple(vals)):
                yield Branch(env, [])
            return
        elif invertible:
            for tup in sorted(ctx.tables_extension(key), key=_tuple_key):
                new_env = dict(env)
                conds = []
                ok = True
                for formal, have, actual in zip(atom.args, vals, tup):
                    if have is None and formal.name in new_env:
                        have = new_env[formal.name]
                    if have is None:
                        new_env[formal.name] = actual
                        continue
                    c = eq_bool(ctx, have, actual)
                    if c is False:
                        ok = False
                        break
                    if c is not True:
                        conds.append(c)
                if ok:
                    yield Branch(new_env, conds)
            return
    body = ctx.unfold_defined(atom, env)
    yield from comprehend(ctx, watch, body, env, focus)


def _comprehend_comparison(ctx, f, env):
    if f.op == "=":
        lhs = ctx.term_value(f.lhs, env)
        rhs = ctx.term_value(f.rhs, env)
        if lhs is None and isinstance(f.lhs, Var) and rhs is not None:
            yield Branch({**env, f.lhs.name: rhs}, [])
            return
        if rhs is None and isinstance(f.rhs, Var) and lhs is not None:
            yield Branch({**env, f.rhs.name: lhs}, [])
            return
    c = ctx.reify_comparison(f, env)
    if c is None:
        missing = sorted((free_vars(f.lhs) | free_vars(f.rhs)) - set(env))
        raise UnsupportedSetExpression(missing[0] if missing else "_", format_formula(f))
    br = _with_cond(Branch(env, []), c)
    if br is not None:
        yield br


def _comprehend_range(ctx, f, env):
    lo = ctx.term_value(f.lo, env)
    hi = ctx.term_value(f.hi, env)
    val = ctx.term_value(f.term, env)
    if val is None and isinstance(f.term, Var) and isinstance(lo, int) and isinstance(hi, int):
        if hi - lo + 1 > RANGE_ENUM_LIMIT:
            raise UnsupportedSetExpression(f.term.name, format_formula(f))
        for v in range(lo, hi + 1):
            yield Branch({**env, f.term.name: v}, [])
        return
    if val is None or lo is None or hi is None:
        missing = sorted(free_vars(f) - set(env))
        raise UnsupportedSetExpression(missing[0] if missing else "_", format_formula(f))
    br = _with_cond(Branch(env, []), ctx.compare_values_fd(">=", val, lo))
    if br is not None:
        br = _with_cond(br, ctx.compare_values_fd("=<", val, hi))
    if br is not None:
        yield br


def _comprehend_aggregate(ctx, agg, env):
    """A nested aggregate acts as a functional generator for its result."""
    link = reduce_aggregate(ctx, agg, env)
    res = ctx.term_value(agg.result, env)
    if res is None and isinstance(agg.result, Var):
        yield Branch({**env, agg.result.name: link.result_var}, [])
        return
    if res is None:
        raise UnsupportedSetExpression(
            sorted(free_vars(agg.result))[0], format_formula(agg)
        )
    br = _with_cond(Branch(env, []), eq_bool(ctx, res, link.result_var))
    if br is not None:
        yield br


def _tuple_key(tup):
    return tuple((0, v) if isinstance(v, int) else (1, str(v)) for v in tup)


# ---------------------------------------------------------------------------
# Unfolded sets


@dataclass
class PotentialMember:
    value: tuple  # ints, symbols, FDVars
    condition: object  # boolean FDVar
    pending: object = None  # or-chain tail while the set can still grow

    @property
    def ground(self):
        return all(not hasattr(v, "domain") for v in self.value)


@dataclass
class UnfoldedSet:
    source: SetExpr
    env: dict
    members: list = field(default_factory=list)
    by_value: dict = field(default_factory=dict)
    watchers: set = field(default_factory=set)
    sealed: bool = False
    links: list = field(default_factory=list)

    def clone(self):
        return UnfoldedSet(
            source=self.source,
            env=dict(self.env),
            members=list(self.members),
            by_value=dict(self.by_value),
            watchers=set(self.watchers),
            sealed=self.sealed,
            links=[],  # relinked by the engine's state clone
        )

    def on_abduction(self, ctx, atom):
        """Re-evaluate the body for one new abduced atom; append any new
        potential members and extend the aggregate constraints watching the
        set."""
        if self.sealed:
            return
        inner = {k: v for k, v in self.env.items() if k not in self.source.params}
        for br in comprehend(ctx, self.watchers, self.source.body, inner, focus=atom):
            if not br.used_focus:
                continue
            member, new = _admit_branch(ctx, self, br)
            if new:
                for link in self.links:
                    link.admit(ctx, member)

    def seal(self, ctx):
        ok = True
        if self.sealed:
            return ok
        self.sealed = True
        for member in self.members:
            if member.pending is not None:
                ok = ctx.store.post(LinearProp(((1, member.pending),), "=", 0)) and ok
                member.pending = None
        return ok


def unfold_set(ctx, sexpr, env):
    """Unfold a set expression against completions and the abduced table."""
    uset = UnfoldedSet(source=sexpr, env=dict(env))
    inner = {k: v for k, v in env.items() if k not in sexpr.params}
    for br in comprehend(ctx, uset.watchers, sexpr.body, inner):
        _admit_branch(ctx, uset, br)
    if not uset.watchers:
        uset.sealed = True
    else:
        for key in uset.watchers:
            ctx.register_watch(key, uset)
    ctx.register_uset(uset)
    return uset


def _admit_branch(ctx, uset, branch):
    """Install one comprehension branch as a potential member (or as a new
    alternative of an existing ground-valued member)."""
    store = ctx.store
    value = []
    for p in uset.source.params:
        v = branch.env.get(p)
        if v is None:
            raise UnsupportedSetExpression(p, format_set(uset.source))
        value.append(v)
    value = tuple(value)
    if not branch.conds:
        alt = store.true_bool()
    elif len(branch.conds) == 1:
        alt = branch.conds[0]
    else:
        alt = store.bool_and(branch.conds)
    ground = all(not hasattr(v, "domain") for v in value)
    if ground and value in uset.by_value:
        member = uset.by_value[value]
        if member.pending is None:  # condition already certain
            return member, False
        old = member.pending
        member.pending = store.new_bool(name="_alt")
        store.post(BoolOrProp(old, (alt, member.pending)))
        return member, False
    if ground and not uset.sealed:
        pending = store.new_bool(name="_alt")
        cond = store.bool_or([alt, pending], name="_mem")
        member = PotentialMember(value, cond, pending)
    else:
        member = PotentialMember(value, alt, None)
    uset.members.append(member)
    if ground:
        uset.by_value[value] = member
    return member, True


# ---------------------------------------------------------------------------
# Aggregate links


@dataclass
class AggregateLink:
    aggregate: Aggregate
    unfolded: UnfoldedSet
    result_var: object
    kind: str
    slack: object = None  # running pending sum term (card/sum)
    factors: list = field(default_factory=list)  # product
    compiled: int = 0  # posted member constraints, for --dump-aggregates
    sealed: bool = False
    func_env: dict = field(default_factory=dict)

    def clone(self, uset):
        out = AggregateLink(
            aggregate=self.aggregate,
            unfolded=uset,
            result_var=self.result_var,
            kind=self.kind,
            slack=self.slack,
            factors=list(self.factors),
            compiled=self.compiled,
            sealed=self.sealed,
            func_env=dict(self.func_env),
        )
        uset.links.append(out)
        return out

    def admit(self, ctx, member):
        """Extend the compiled constraints with one freshly added member."""
        store = ctx.store
        self.compiled += 1
        if self.kind in ("card", "sum"):
            weight = 1 if self.kind == "card" else ctx.func_member_value(
                self.aggregate.func, member, self.func_env
            )
            term = _weighted_term(store, member.condition, weight)
            old = self.slack
            self.slack = store.new_var(
                0 if self.kind == "card" else INT_MIN, INT_MAX, name="_agg_pending"
            )
            # old_pending = member term + new_pending
            store.post(LinearProp(
                ((1, old), (-1, self.slack), (-term[0], term[1])), "=", 0
            ))
            _post_distinctness(ctx, self, member)
        elif self.kind == "product":
            weight = ctx.func_member_value(self.aggregate.func, member, self.func_env)
            self.factors.append(_product_factor(store, member.condition, weight))
            _post_distinctness(ctx, self, member)
        else:
            _post_extremum_bound(ctx, self, member)

    def finalize(self, ctx):
        """Post the constraints that become valid once the set is complete."""
        if self.sealed:
            return True
        self.sealed = True
        store = ctx.store
        if self.kind in ("card", "sum"):
            if self.slack is not None:
                return store.post(LinearProp(((1, self.slack),), "=", 0))
            return True
        if self.kind == "product":
            acc = None
            for z in self.factors:
                acc = z if acc is None else store.product_var(acc, z)
            if acc is None:
                return store.post(LinearProp(((1, self.result_var),), "=", 1))
            return store.post(LinearProp(((1, self.result_var), (-1, acc)), "=", 0))
        # minimum / maximum on the now-complete member list
        members = self.unfolded.members
        if not members:
            raise EmptySetMinimum(
                f"{self.kind} over empty set {format_set(self.aggregate.set)}"
            )
        ok = store.post_linear([(1, m.condition) for m in members], ">=", 1)
        lo = min(_value_lb(m.value[0]) for m in members)
        hi = max(_value_ub(m.value[0]) for m in members)
        ok = store.set_domain(
            self.result_var, self.result_var.domain.intersect_range(lo, hi), "agg-hull"
        ) and ok
        eqs = []
        for m in members:
            v = m.value[0]
            if isinstance(v, int):
                eq = store.reify_linear(((1, self.result_var),), "=", v)
            else:
                eq = store.reify_linear(((1, self.result_var), (-1, v)), "=", 0)
            eqs.append(store.bool_and([eq, m.condition]))
        t = store.bool_or(eqs)
        ok = store.post(LinearProp(((1, t),), "=", 1)) and ok
        return ok and store.propagate()


def _value_lb(v):
    return v if isinstance(v, int) else v.domain.min


def _value_ub(v):
    return v if isinstance(v, int) else v.domain.max


def _weighted_term(store, cond, weight):
    """(coeff, var) denoting cond * weight."""
    if isinstance(weight, int):
        return (weight, cond)
    z = store.product_var(cond, weight, name="_wsum")
    return (1, z)


def _product_factor(store, cond, weight):
    """Variable equal to 1 + cond*(weight-1)."""
    if isinstance(weight, int):
        z = store.new_var(min(1, weight), max(1, weight), name="_pf")
        store.post(LinearProp(((1, z), (-(weight - 1), cond)), "=", 1))
        return z
    w = store.product_var(cond, weight)
    z = store.new_var(min(1, w.domain.min), max(1, w.domain.max), name="_pf")
    store.post(LinearProp(((1, z), (1, cond), (-1, w)), "=", 1))
    return z


def _post_extremum_bound(ctx, link, member):
    """b=1 implies result <= v (minimum) via a big-M linear form; the big M
    comes from the current domain bounds, which only shrink."""
    store = ctx.store
    r = link.result_var
    v = member.value[0]
    if isinstance(v, int):
        v = store.const(v)
    if link.kind == "minimum":
        m = max(r.domain.max - v.domain.min, 0)
        store.post(LinearProp(((1, r), (-1, v), (m, member.condition)), "=<", m))
    else:
        m = max(v.domain.max - r.domain.min, 0)
        store.post(LinearProp(((1, v), (-1, r), (m, member.condition)), "=<", m))


def _post_distinctness(ctx, link, member, others=None):
    """Counting aggregates treat members as a set: two selected members may
    not carry equal values. Ground duplicates are or-merged structurally, so
    only pairs involving FD-valued tuples need a posted guard."""
    others = link.unfolded.members if others is None else others
    store = ctx.store
    for other in others:
        if other is member:
            continue
        if member.ground and other.ground:
            continue
        same = match_condition(ctx, member.value, other.value)
        if same is None:
            continue
        bits = [member.condition, other.condition]
        if same is not True:
            bits.append(same)
        both = store.bool_and(bits)
        store.post(LinearProp(((1, both),), "=", 0))


def reduce_aggregate(ctx, agg, env):
    """Unfold the operand set and compile the aggregate onto a fresh result
    variable. Counting aggregates over growable sets carry a pending slack
    that sealing zeroes; minimum/maximum post their membership constraints at
    seal time and only per-member bounds before it."""
    uset = unfold_set(ctx, agg.set, env)
    store = ctx.store
    if agg.kind == "card":
        result = store.new_var(0, INT_MAX, name="_card")
    else:
        result = store.new_var(INT_MIN, INT_MAX, name=f"_{agg.kind}")
    link = AggregateLink(
        aggregate=agg, unfolded=uset, result_var=result, kind=agg.kind,
        func_env=dict(env),
    )
    uset.links.append(link)
    ctx.register_link(link)
    if agg.kind in ("card", "sum"):
        terms = [(-1, result)]
        if not uset.sealed:
            link.slack = store.new_var(
                0 if agg.kind == "card" else INT_MIN, INT_MAX, name="_agg_pending"
            )
            terms.append((1, link.slack))
        for member in uset.members:
            weight = 1 if agg.kind == "card" else ctx.func_member_value(
                agg.func, member, link.func_env
            )
            terms.append(_weighted_term(store, member.condition, weight))
            link.compiled += 1
        store.post(LinearProp(tuple(terms), "=", 0))
        for i, member in enumerate(uset.members):
            _post_distinctness(ctx, link, member, uset.members[:i])
    elif agg.kind == "product":
        for i, member in enumerate(uset.members):
            weight = ctx.func_member_value(agg.func, member, link.func_env)
            link.factors.append(_product_factor(store, member.condition, weight))
            link.compiled += 1
            _post_distinctness(ctx, link, member, uset.members[:i])
    else:
        for member in uset.members:
            _post_extremum_bound(ctx, link, member)
            link.compiled += 1
    if uset.sealed:
        link.finalize(ctx)
    return link
