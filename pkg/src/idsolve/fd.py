"""Finite-domain integer constraint store.

Variables carry interval-set domains; constraints are propagator objects run
to fixpoint over a wake-list queue. All domain changes and object creations
go through a trail, so restoring to a saved mark reproduces the store
bit-exactly. Linear and arithmetic constraints get bounds propagation; unary
and boolean constraints get domain propagation. abs and disjunction are
decomposed through reification rather than dedicated propagators.
"""

from __future__ import annotations

import math
import time
from collections import deque

from .errors import (
    EmptyDomain, FDOverflowError, InternalSoundnessError, NotReifiable,
    SearchTimeout,
)

INT_MAX = 2**31 - 1
INT_MIN = -INT_MAX


# ---------------------------------------------------------------------------
# Interval sets


class IntervalSet:
    """Immutable set of integers as sorted, disjoint, non-adjacent closed
    intervals. `lo`/`hi` are cached plain attributes (None when empty)."""

    __slots__ = ("ivs", "lo", "hi")

    def __init__(self, ivs):
        self.ivs = tuple(ivs)
        if self.ivs:
            self.lo = self.ivs[0][0]
            self.hi = self.ivs[-1][1]
        else:
            self.lo = self.hi = None

    @staticmethod
    def range(lo, hi):
        if lo > hi:
            return IntervalSet(())
        return IntervalSet(((lo, hi),))

    @staticmethod
    def of(values):
        vals = sorted(set(values))
        ivs = []
        for v in vals:
            if ivs and v == ivs[-1][1] + 1:
                ivs[-1] = (ivs[-1][0], v)
            else:
                ivs.append((v, v))
        return IntervalSet(tuple(ivs))

    @property
    def empty(self):
        return not self.ivs

    @property
    def min(self):
        return self.lo

    @property
    def max(self):
        return self.hi

    @property
    def size(self):
        return sum(hi - lo + 1 for lo, hi in self.ivs)

    @property
    def fixed(self):
        return len(self.ivs) == 1 and self.ivs[0][0] == self.ivs[0][1]

    @property
    def value(self):
        if not self.fixed:
            raise ValueError("domain not fixed")
        return self.ivs[0][0]

    def __contains__(self, v):
        for lo, hi in self.ivs:
            if lo <= v <= hi:
                return True
            if v < lo:
                return False
        return False

    def __eq__(self, other):
        return isinstance(other, IntervalSet) and self.ivs == other.ivs

    def __hash__(self):
        return hash(self.ivs)

    def __iter__(self):
        for lo, hi in self.ivs:
            yield from range(lo, hi + 1)

    def clamp_min(self, v):
        if not self.ivs or v <= self.lo:
            return self
        out = []
        for lo, hi in self.ivs:
            if hi < v:
                continue
            out.append((max(lo, v), hi))
        return IntervalSet(tuple(out))

    def clamp_max(self, v):
        if not self.ivs or v >= self.hi:
            return self
        out = []
        for lo, hi in self.ivs:
            if lo > v:
                break
            out.append((lo, min(hi, v)))
        return IntervalSet(tuple(out))

    def remove(self, v):
        if v not in self:
            return self
        out = []
        for lo, hi in self.ivs:
            if lo <= v <= hi:
                if lo <= v - 1:
                    out.append((lo, v - 1))
                if v + 1 <= hi:
                    out.append((v + 1, hi))
            else:
                out.append((lo, hi))
        return IntervalSet(tuple(out))

    def intersect_range(self, lo, hi):
        return self.clamp_min(lo).clamp_max(hi)

    def intersect(self, other):
        out = []
        a, b = list(self.ivs), list(other.ivs)
        i = j = 0
        while i < len(a) and j < len(b):
            lo = max(a[i][0], b[j][0])
            hi = min(a[i][1], b[j][1])
            if lo <= hi:
                out.append((lo, hi))
            if a[i][1] < b[j][1]:
                i += 1
            else:
                j += 1
        return IntervalSet(tuple(out))

    def __repr__(self):
        return "{" + ",".join(
            f"{lo}" if lo == hi else f"{lo}..{hi}" for lo, hi in self.ivs
        ) + "}"


def _check_bounds(lo, hi):
    if lo < INT_MIN or hi > INT_MAX:
        raise FDOverflowError(f"domain bound outside ±(2^31-1): {lo}..{hi}")


# ---------------------------------------------------------------------------
# Variables


class FDVar:
    __slots__ = ("id", "name", "role", "domain", "watchers")

    def __init__(self, vid, name, role, domain):
        self.id = vid
        self.name = name
        self.role = role  # problem | boolean | objective
        self.domain = domain
        self.watchers = []

    @property
    def fixed(self):
        return self.domain.fixed

    @property
    def value(self):
        return self.domain.value

    def __repr__(self):
        return f"{self.name}{self.domain!r}"


# ---------------------------------------------------------------------------
# Propagators

TRUE_, FALSE_, UNKNOWN_ = 1, 0, -1


def _sum_bounds(terms):
    lo = hi = 0
    for c, v in terms:
        d = v.domain
        if c >= 0:
            lo += c * d.lo
            hi += c * d.hi
        else:
            lo += c * d.hi
            hi += c * d.lo
    return lo, hi


class Propagator:
    __slots__ = ("pid", "in_queue", "dead")

    kind = "abstract"
    value_sensitive = False  # woken by interior value removals, not just bounds

    def vars(self):
        raise NotImplementedError

    def propagate(self, store):
        raise NotImplementedError

    def check(self, value_of):
        raise NotImplementedError


class LinearProp(Propagator):
    """sum(c_i * x_i) OP k with OP in {'=<', '=', '\\='}."""

    __slots__ = ("terms", "op", "k")

    kind = "linear"

    def __init__(self, terms, op, k):
        self.terms = tuple(terms)
        self.op = op
        self.k = k

    def vars(self):
        return [v for _c, v in self.terms]

    def status(self):
        lo, hi = _sum_bounds(self.terms)
        if self.op == "=<":
            if hi <= self.k:
                return TRUE_
            if lo > self.k:
                return FALSE_
            return UNKNOWN_
        if self.op == "=":
            if lo == hi == self.k:
                return TRUE_
            if self.k < lo or self.k > hi:
                return FALSE_
            if len(self.terms) == 1:
                # unary equality is kept domain-consistent, not just
                # bounds-consistent
                c, v = self.terms[0]
                if self.k % c != 0 or (self.k // c) not in v.domain:
                    return FALSE_
            return UNKNOWN_
        # disequality
        if lo == hi:
            return TRUE_ if lo != self.k else FALSE_
        if self.k < lo or self.k > hi:
            return TRUE_
        if len(self.terms) == 1:
            c, v = self.terms[0]
            if self.k % c != 0 or (self.k // c) not in v.domain:
                return TRUE_
        return UNKNOWN_

    def propagate(self, store):
        if not _prop_linear(store, self.terms, self.op, self.k, self):
            return False
        if self.status() == TRUE_:
            store.kill(self)
        return True

    def check(self, value_of):
        total = sum(c * value_of(v) for c, v in self.terms)
        if self.op == "=<":
            return total <= self.k
        if self.op == "=":
            return total == self.k
        return total != self.k

    def negated(self):
        if self.op == "=<":
            neg = [(-c, v) for c, v in self.terms]
            return LinearProp(neg, "=<", -self.k - 1)
        if self.op == "=":
            return LinearProp(self.terms, "\\=", self.k)
        return LinearProp(self.terms, "=", self.k)

    def __repr__(self):
        lhs = " + ".join(f"{c}*{v.name}" for c, v in self.terms) or "0"
        return f"<{lhs} {self.op} {self.k}>"


def _prop_linear(store, terms, op, k, cause):
    if op == "=<":
        return _prop_le(store, terms, k, cause)
    if op == "=":
        if len(terms) == 1:
            c, v = terms[0]
            if k % c != 0:
                return False
            val = k // c
            return store.narrow(v, v.domain.intersect_range(val, val), cause)
        return _prop_le(store, terms, k, cause) and _prop_le(
            store, [(-c, v) for c, v in terms], -k, cause
        )
    # disequality: only prunes when a single variable remains free
    free = [(c, v) for c, v in terms if not v.fixed]
    if not free:
        total = sum(c * v.value for c, v in terms)
        return total != k
    if len(free) == 1:
        c, v = free[0]
        rest = sum(ci * vi.value for ci, vi in terms if vi.fixed)
        delta = k - rest
        if delta % c == 0:
            return store.narrow(v, v.domain.remove(delta // c), cause)
    return True


def _prop_le(store, terms, k, cause):
    lo = 0
    for c, v in terms:
        d = v.domain
        lo += c * (d.lo if c >= 0 else d.hi)
    slack = k - lo
    if slack < 0:
        return False
    for c, v in terms:
        d = v.domain
        if c > 0:
            bound = d.lo + slack // c
            if bound < d.hi:
                if not store.narrow(v, d.clamp_max(bound), cause):
                    return False
        else:
            bound = d.hi - (slack // -c)
            if bound > d.lo:
                if not store.narrow(v, d.clamp_min(bound), cause):
                    return False
    return True


def _ceil_div(a, b):
    return -((-a) // b) if b > 0 else -(a // (-b))


class ReifiedProp(Propagator):
    """b <-> linear constraint, with full two-way propagation. Unary inner
    constraints are kept domain-consistent, so those instances must wake on
    interior value removals as well."""

    __slots__ = ("b", "pos", "neg", "value_sensitive")

    kind = "reified"

    def __init__(self, b, pos):
        self.b = b
        self.pos = pos
        self.neg = pos.negated()
        self.value_sensitive = len(pos.terms) == 1

    def vars(self):
        return [self.b] + self.pos.vars()

    def propagate(self, store):
        bdom = self.b.domain
        if bdom.lo == bdom.hi:
            side = self.pos if bdom.lo == 1 else self.neg
            if not _prop_linear(store, side.terms, side.op, side.k, self):
                return False
            if side.status() == TRUE_:
                store.kill(self)
            return True
        st = self.pos.status()
        if st == TRUE_:
            return store.set_domain(self.b, IntervalSet.range(1, 1), self)
        if st == FALSE_:
            return store.set_domain(self.b, IntervalSet.range(0, 0), self)
        return True

    def check(self, value_of):
        return (value_of(self.b) == 1) == self.pos.check(value_of)

    def __repr__(self):
        return f"<{self.b.name} <-> {self.pos!r}>"


class BoolOrProp(Propagator):
    """b <-> (x1 or ... or xn) over booleans."""

    __slots__ = ("b", "bits")

    kind = "bool_or"

    def __init__(self, b, bits):
        self.b = b
        self.bits = tuple(bits)

    def vars(self):
        return [self.b] + list(self.bits)

    def propagate(self, store):
        one = IntervalSet.range(1, 1)
        zero = IntervalSet.range(0, 0)
        pending = []
        for x in self.bits:
            d = x.domain
            if d.lo == 1:
                if not store.set_domain(self.b, one, self):
                    return False
                store.kill(self)
                return True
            if d.hi != 0:
                pending.append(x)
        if not pending:
            if not store.set_domain(self.b, zero, self):
                return False
            store.kill(self)
            return True
        bd = self.b.domain
        if bd.hi == 0:
            for x in pending:
                if not store.set_domain(x, zero, self):
                    return False
            store.kill(self)
            return True
        if bd.lo == 1 and len(pending) == 1:
            return store.set_domain(pending[0], one, self)
        return True

    def check(self, value_of):
        return (value_of(self.b) == 1) == any(value_of(x) == 1 for x in self.bits)

    def __repr__(self):
        return f"<{self.b.name} <-> or({','.join(x.name for x in self.bits)})>"


class ProductProp(Propagator):
    """z = x * y with interval-arithmetic bounds propagation."""

    __slots__ = ("z", "x", "y")

    kind = "product"

    def __init__(self, z, x, y):
        self.z = z
        self.x = x
        self.y = y

    def vars(self):
        return [self.z, self.x, self.y]

    def propagate(self, store):
        xd, yd = self.x.domain, self.y.domain
        if xd.lo == xd.hi and yd.lo == yd.hi and self.z.domain.lo == self.z.domain.hi:
            if self.z.domain.lo == xd.lo * yd.lo:
                store.kill(self)
                return True
            return False
        corners = [
            xd.min * yd.min, xd.min * yd.max, xd.max * yd.min, xd.max * yd.max,
        ]
        lo, hi = min(corners), max(corners)
        _check_bounds(lo, hi)
        nz = self.z.domain.intersect_range(lo, hi)
        if not store.narrow(self.z, nz, self):
            return False
        if not self._divide(store, self.x, self.y):
            return False
        return self._divide(store, self.y, self.x)

    def _divide(self, store, target, other):
        od, zd = other.domain, self.z.domain
        if od.fixed:
            c = od.value
            if c == 0:
                return store.set_domain(self.z, self.z.domain.intersect_range(0, 0), self)
            lo = _ceil_div(zd.min, c) if c > 0 else _ceil_div(zd.max, c)
            hi = zd.max // c if c > 0 else zd.min // c
            return store.narrow(target, target.domain.intersect_range(lo, hi), self)
        if od.min > 0 or od.max < 0:
            cands = [
                _ceil_div(zb, ob) if False else zb / ob
                for zb in (zd.min, zd.max)
                for ob in (od.min, od.max)
            ]
            lo = math.ceil(min(cands) - 1e-9)
            hi = math.floor(max(cands) + 1e-9)
            return store.narrow(target, target.domain.intersect_range(lo, hi), self)
        return True  # divisor straddles zero: no sound tightening

    def check(self, value_of):
        return value_of(self.z) == value_of(self.x) * value_of(self.y)

    def __repr__(self):
        return f"<{self.z.name} = {self.x.name}*{self.y.name}>"


# ---------------------------------------------------------------------------
# The store


class Store:
    def __init__(self, trace=None):
        self.vars = []
        self.props = []
        self.trail = []
        self.queue = deque()
        self.failed = False
        self.trace = trace
        self._vid = 0

    # -- creation

    def new_var(self, lo=None, hi=None, *, domain=None, role="problem", name=None):
        if domain is None:
            domain = IntervalSet.range(lo, hi)
        if domain.empty:
            raise EmptyDomain(f"empty initial domain for {name or 'var'}")
        _check_bounds(domain.min, domain.max)
        self._vid += 1
        v = FDVar(self._vid, name or f"_v{self._vid}", role, domain)
        self.vars.append(v)
        self.trail.append(("var", v))
        return v

    def new_bool(self, name=None):
        return self.new_var(0, 1, role="boolean", name=name)

    # -- trail

    def save(self):
        return len(self.trail)

    def restore(self, mark):
        while len(self.trail) > mark:
            kind, *payload = self.trail.pop()
            if kind == "dom":
                var, old = payload
                var.domain = old
            elif kind == "dead":
                (prop,) = payload
                prop.dead = False
            elif kind == "prop":
                (prop,) = payload
                for v in prop.vars():
                    popped = v.watchers.pop()
                    assert popped is prop
                assert self.props.pop() is prop
            else:  # var
                (var,) = payload
                assert self.vars.pop() is var
        while self.queue:
            self.queue.popleft().in_queue = False
        self.failed = False

    # -- domain updates

    def set_domain(self, var, newdom, cause):
        """Restrict a domain; the update is intersected with the current
        domain so domains only ever shrink (monotone propagation)."""
        old = var.domain
        if newdom is old or newdom.ivs == old.ivs:
            return True
        newdom = newdom.intersect(old)
        if newdom.ivs == old.ivs:
            return True
        return self._commit(var, old, newdom, cause)

    def narrow(self, var, newdom, cause):
        """Restrict a domain with a set already derived from the current one
        (clamp/remove/intersect results); skips the subset check."""
        old = var.domain
        if newdom is old or newdom.ivs == old.ivs:
            return True
        return self._commit(var, old, newdom, cause)

    def _commit(self, var, old, newdom, cause):
        if not newdom.ivs:
            if self.trace:
                self.trace(var, old, newdom, cause)
            self.failed = True
            return False
        self.trail.append(("dom", var, old))
        var.domain = newdom
        if self.trace:
            self.trace(var, old, newdom, cause)
        bounds_changed = old.lo != newdom.lo or old.hi != newdom.hi
        append = self.queue.append
        for p in var.watchers:
            if not p.in_queue and not p.dead and (bounds_changed or p.value_sensitive):
                p.in_queue = True
                append(p)
        return True

    # -- constraint posting

    def kill(self, prop):
        """Detach an entailed propagator until backtracking revives it."""
        if not prop.dead:
            prop.dead = True
            self.trail.append(("dead", prop))

    def post(self, prop) -> bool:
        """Record the propagator and run propagation to fixpoint. Returns
        False when the store became inconsistent (a value, not an error)."""
        prop.pid = len(self.props)
        prop.in_queue = False
        prop.dead = False
        self.props.append(prop)
        self.trail.append(("prop", prop))
        for v in prop.vars():
            v.watchers.append(prop)
        prop.in_queue = True
        self.queue.append(prop)
        return self.propagate()

    def requeue(self, prop):
        if not prop.in_queue:
            prop.in_queue = True
            self.queue.append(prop)

    def propagate(self) -> bool:
        """Fixpoint of all queued propagators; monotone and idempotent."""
        if self.failed:
            while self.queue:
                self.queue.popleft().in_queue = False
            return False
        while self.queue:
            prop = self.queue.popleft()
            prop.in_queue = False
            if not prop.propagate(self):
                self.failed = True
                while self.queue:
                    self.queue.popleft().in_queue = False
                return False
        return True

    # -- typed posting helpers

    def post_linear(self, terms, op, k) -> bool:
        terms, op, k = _normalize_linear(terms, op, k)
        return self.post(LinearProp(terms, op, k))

    def reify_linear(self, terms, op, k, name=None):
        """Fresh boolean b with b <-> (sum terms op k)."""
        terms, op, k = _normalize_linear(terms, op, k)
        b = self.new_bool(name)
        self.post(ReifiedProp(b, LinearProp(terms, op, k)))
        return b

    def reify(self, constraint):
        """Boolean reflection of an existing (unposted) linear constraint."""
        if not isinstance(constraint, LinearProp):
            raise NotReifiable(f"cannot reify {getattr(constraint, 'kind', constraint)!r}")
        b = self.new_bool()
        self.post(ReifiedProp(b, constraint))
        return b

    def bool_or(self, bits, name=None):
        b = self.new_bool(name)
        self.post(BoolOrProp(b, bits))
        return b

    def bool_and(self, bits, name=None):
        # b <-> and(bits) as: nb <-> or(negated bits)
        negs = [self.bool_not(x) for x in bits]
        nb = self.bool_or(negs)
        return self.bool_not(nb, name)

    def bool_not(self, x, name=None):
        b = self.new_bool(name)
        self.post(LinearProp(((1, x), (1, b)), "=", 1))
        return b

    def const(self, value, name=None):
        return self.new_var(value, value, name=name or f"_c{value}")

    def true_bool(self):
        return self.new_var(1, 1, role="boolean", name="_true")

    def product_var(self, x, y, name=None):
        xd, yd = x.domain, y.domain
        corners = [xd.min * yd.min, xd.min * yd.max, xd.max * yd.min, xd.max * yd.max]
        z = self.new_var(min(corners), max(corners), name=name)
        self.post(ProductProp(z, x, y))
        return z

    def abs_diff(self, x, y, name=None):
        """A = |x - y| by reified decomposition."""
        hi = max(abs(x.domain.max - y.domain.min), abs(y.domain.max - x.domain.min))
        a = self.new_var(0, hi, name=name)
        # a >= x - y and a >= y - x
        self.post(LinearProp(((1, x), (-1, y), (-1, a)), "=<", 0))
        self.post(LinearProp(((1, y), (-1, x), (-1, a)), "=<", 0))
        b1 = self.reify_linear(((1, a), (-1, x), (1, y)), "=", 0)
        b2 = self.reify_linear(((1, a), (1, x), (-1, y)), "=", 0)
        t = self.bool_or([b1, b2])
        self.post(LinearProp(((1, t),), "=", 1))
        return a

    # -- aggregate-shaped constraints (sealed forms)

    def boolean_sum(self, bits, target) -> bool:
        """target = sum of booleans."""
        terms = [(1, b) for b in bits] + [(-1, target)]
        return self.post_linear(terms, "=", 0)

    def weighted_boolean_sum(self, pairs, target) -> bool:
        """target = sum of b*f for (b, f) pairs; f an int or an FDVar."""
        terms = [(-1, target)]
        ok = True
        for b, f in pairs:
            if isinstance(f, int):
                terms.append((f, b))
            else:
                z = self.product_var(b, f)
                terms.append((1, z))
        ok = self.post_linear(terms, "=", 0) and ok
        return ok

    def min_of_selected(self, pairs, result) -> bool:
        """result = min of values v for pairs (b, v) with b=1; at least one
        b must hold. v entries may be ints or vars."""
        return self._extremum_of_selected(pairs, result, lambda d: d, minimize=True)

    def max_of_selected(self, pairs, result) -> bool:
        return self._extremum_of_selected(pairs, result, lambda d: d, minimize=False)

    def _extremum_of_selected(self, pairs, result, _ident, minimize):
        ok = True
        eqs = []
        sel = []
        for b, v in pairs:
            v = self.const(v) if isinstance(v, int) else v
            if minimize:
                # b=1 -> result <= v, via result - v + M*b <= M
                m = max(result.domain.max - v.domain.min, 0)
                ok = self.post(LinearProp(((1, result), (-1, v), (m, b)), "=<", m)) and ok
            else:
                m = max(v.domain.max - result.domain.min, 0)
                ok = self.post(LinearProp(((1, v), (-1, result), (m, b)), "=<", m)) and ok
            eq = self.reify_linear(((1, result), (-1, v)), "=", 0)
            both = self.bool_and([eq, b])
            eqs.append(both)
            sel.append(b)
        ok = self.post_linear([(1, b) for b in sel], ">=", 1) and ok
        t = self.bool_or(eqs)
        ok = self.post(LinearProp(((1, t),), "=", 1)) and ok
        return ok

    def product_of_selected(self, pairs, result) -> bool:
        """result = product over pairs (b, f) of (1 + b*(f-1))."""
        acc = None
        ok = True
        for b, f in pairs:
            if isinstance(f, int):
                z = self.new_var(min(1, f), max(1, f))
                ok = self.post(LinearProp(((1, z), (-(f - 1), b)), "=", 1)) and ok
            else:
                w = self.product_var(b, f)
                z = self.new_var(min(1, w.domain.min), max(1, w.domain.max))
                # z = 1 - b + w
                ok = self.post(LinearProp(((1, z), (1, b), (-1, w)), "=", 1)) and ok
            acc = z if acc is None else self.product_var(acc, z)
        if acc is None:
            return self.post(LinearProp(((1, result),), "=", 1)) and ok
        return self.post(LinearProp(((1, result), (-1, acc)), "=", 0)) and ok

    def tuple_diseq(self, lhs, rhs) -> bool:
        """At least one position differs; entries are ints or vars."""
        bits = []
        for a, b in zip(lhs, rhs):
            terms = []
            k = 0
            for sign, item in ((1, a), (-1, b)):
                if isinstance(item, int):
                    k -= sign * item
                else:
                    terms.append((sign, item))
            bits.append(self.reify_linear(terms, "\\=", k))
        if not bits:
            return self.post_linear([], "=", 1)  # equal nullary tuples: fail
        t = self.bool_or(bits)
        return self.post(LinearProp(((1, t),), "=", 1))

    # -- introspection

    def check_all(self, value_of) -> bool:
        return all(p.check(value_of) for p in self.props)

    def stats(self):
        return {"vars": len(self.vars), "props": len(self.props)}


def _normalize_linear(terms, op, k):
    """Collapse duplicate vars, fold constants, rewrite op to =< / = / \\=."""
    acc = {}
    const = 0
    for c, v in terms:
        if isinstance(v, int):
            const += c * v
        else:
            acc[v] = acc.get(v, 0) + c
    terms = tuple((c, v) for v, c in acc.items() if c != 0)
    k = k - const
    if op == "<":
        op, k = "=<", k - 1
    elif op == ">":
        op, k = ">=", k + 1
    if op == ">=":
        terms = tuple((-c, v) for c, v in terms)
        op, k = "=<", -k
    if op == "=" or op == "\\=":
        pass
    return terms, op, k


# ---------------------------------------------------------------------------
# Search

LABEL_SIZE_LIMIT = 10**6


def _pick_var(req_vars, all_vars):
    best = None
    for v in req_vars:
        if not v.fixed:
            size = v.domain.size
            if best is None or size < best[0] or (size == best[0] and v.id < best[1].id):
                best = (size, v)
    if best is not None:
        return best[1]
    for v in all_vars:
        if not v.fixed:
            return v
    return None


def label(store, variables, *, deadline=None, node_hook=None):
    """Depth-first labeling with chronological backtracking.

    Variable order: first-fail (smallest domain, ties by id) over `variables`,
    then any remaining unfixed store variable. Value order: ascending. Each
    yielded map covers every store variable and has passed a ground check of
    every posted constraint. `node_hook` runs after every assignment and may
    tighten domains (used for optimization bounds); it returns False to cut
    the branch.
    """
    if not store.propagate():
        return
    stack = []

    def check_deadline():
        if deadline is not None and time.monotonic() > deadline:
            raise SearchTimeout("labeling deadline exceeded")

    def try_next(var, values, mark):
        for v in values:
            store.restore(mark)
            check_deadline()
            ok = store.set_domain(var, IntervalSet.range(v, v), "label")
            if ok and node_hook is not None:
                ok = node_hook()
            if ok and store.propagate():
                return True
        store.restore(mark)
        stack.pop()
        return False

    def descend():
        while True:
            var = _pick_var(variables, store.vars)
            if var is None:
                return True
            if var.domain.size > LABEL_SIZE_LIMIT:
                raise FDOverflowError(
                    f"refusing to label {var.name} over {var.domain.size} values"
                )
            values = iter(list(var.domain))
            mark = store.save()
            stack.append((var, values, mark))
            if not try_next(var, values, mark):
                return False

    def backtrack():
        while stack:
            var, values, mark = stack[-1]
            if try_next(var, values, mark):
                return True
        return False

    live = True
    while live:
        if descend():
            solution = {v: v.value for v in store.vars}
            bad = [p for p in store.props if not p.check(lambda v: solution[v])]
            if bad:
                detail = "; ".join(
                    f"{p!r} vars=" + ",".join(
                        f"{v.name}={solution[v]}" for v in p.vars()
                    ) for p in bad[:3]
                )
                raise InternalSoundnessError(
                    f"labeled solution violates posted constraints: {detail}"
                )
            yield solution
            live = backtrack()
        else:
            live = backtrack() if stack else False


def branch_and_bound(store, objective, sense, variables, *, deadline=None,
                     on_incumbent=None):
    """Optimize by record-best-and-prune: after each solution, search resumes
    under the bound objective > best (maximize; dual for minimize), so
    incumbent values are strictly monotone. Returns (best solution or None,
    status, incumbent objective values); status is 'optimal', 'best-so-far'
    (deadline hit with an incumbent) or 'exhausted'."""
    best = None
    incumbents = []
    bound = [None]

    def apply_bound():
        if bound[0] is None:
            return True
        d = objective.domain
        if sense == "maximize":
            nd = d.clamp_min(bound[0] + 1)
        else:
            nd = d.clamp_max(bound[0] - 1)
        return store.narrow(objective, nd, "bound")

    vars_order = list(variables)
    if objective not in vars_order:
        vars_order.append(objective)
    base = store.save()
    status = "exhausted"
    try:
        for sol in label(store, vars_order, deadline=deadline, node_hook=apply_bound):
            val = sol[objective]
            best = {v: val_ for v, val_ in sol.items()}
            bound[0] = val
            incumbents.append(val)
            if on_incumbent is not None:
                on_incumbent(val, sol)
        if best is not None:
            status = "optimal"
    except SearchTimeout:
        status = "best-so-far" if best is not None else "exhausted"
    finally:
        store.restore(base)
    return best, status, incumbents
