"""Brute-force semantic reference.

Enumerates interpretations of the open predicates over their declared
domains, evaluates definitions through completion and aggregates by direct
set materialization. Deliberately naive: this is the ground truth the solver
is tested against, so it shares no code with the reified reduction path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

from .completion import complete_all, merge_definitions
from .errors import DomainTooLarge
from .ground import GroundEval, _iter_tuples
from .lang import Atom, atoms_of, free_vars

DEFAULT_BOUND = 2**22


@dataclass
class Interpretation:
    """Extensions for the open predicates plus evaluation machinery."""

    open: dict  # {(pred, arity): frozenset of tuples}
    evaluator: GroundEval = field(repr=False, default=None)

    def holds(self, formula, env=None):
        return self.evaluator.truth(formula, env or {})

    def extension_of(self, key):
        if key in self.open:
            return set(self.open[key])
        return set(self.evaluator.extension(key))


def open_keys(theory):
    """Open predicate keys: every predicate occurring without rules, plus any
    dom-declared predicate that has no rules."""
    defined = theory.defined_keys()
    keys = set()
    for rule in theory.all_rules():
        for atom in atoms_of(rule.body):
            if atom.key not in defined:
                keys.add(atom.key)
    for ax in theory.fol_axioms:
        for atom in atoms_of(ax):
            if atom.key not in defined:
                keys.add(atom.key)
    for key in theory.domain_decls:
        if key not in defined:
            keys.add(key)
    return keys


def atom_space(theory, keys):
    """Ground tuple universe per open key, from dom declarations."""
    spaces = {}
    for key in sorted(keys):
        ranges = theory.domain_decls.get(key)
        if ranges is None:
            raise DomainTooLarge(
                f"open predicate {key[0]}/{key[1]} has no dom declaration"
            )
        spaces[key] = sorted(_iter_tuples(ranges))
    return spaces


def enumerate_models(theory, bound=DEFAULT_BOUND, query_goal=None):
    """Yield every interpretation of the open predicates (over declared
    domains) satisfying all definitions and fol axioms, and the query goal
    when given. Interpretations appear in a deterministic subset order."""
    theory = merge_definitions(theory)
    completions = complete_all(theory)
    keys = sorted(open_keys(theory))
    spaces = atom_space(theory, keys)
    total = 1
    for key in keys:
        total *= 2 ** len(spaces[key])
        if total > bound:
            raise DomainTooLarge(
                f"interpretation space exceeds bound {bound}"
            )

    def assignments(idx):
        if idx == len(keys):
            yield {}
            return
        key = keys[idx]
        space = spaces[key]
        for rest in assignments(idx + 1):
            for size in range(len(space) + 1):
                for subset in combinations(space, size):
                    out = dict(rest)
                    out[key] = frozenset(subset)
                    yield out

    for interp in assignments(0):
        ev = GroundEval(theory, completions, open_interp=interp)
        ok = all(ev.truth(ax, {}) for ax in theory.fol_axioms)
        if ok and query_goal is not None:
            ok = ev.truth(query_goal, {}) if not free_vars(query_goal) else any(
                True for _ in ev.solutions(query_goal, {})
            )
        if ok:
            yield Interpretation(open=interp, evaluator=ev)


def evaluate_formula(interp: Interpretation, formula, env=None) -> bool:
    return interp.evaluator.truth(formula, env or {})


def optimal_value(theory, query, bound=DEFAULT_BOUND):
    """Extremal objective value over all models and query instantiations, or
    the string 'unsat'. The query must carry an objective directive."""
    if query.objective is None:
        raise ValueError("optimal_value needs a query with minimize/maximize")
    sense, varname = query.objective
    best = None
    for interp in enumerate_models(theory, bound):
        ev = interp.evaluator
        for env in ev.solutions(query.goal, {}):
            if varname not in env:
                continue
            val = env[varname]
            if best is None:
                best = val
            elif sense == "maximize":
                best = max(best, val)
            else:
                best = min(best, val)
    return "unsat" if best is None else best


def check_answer(theory, query_goal, delta) -> bool:
    """Does taking `delta` (ground atoms per open key) as the exact open
    extension satisfy every axiom and the query goal?"""
    theory = merge_definitions(theory)
    completions = complete_all(theory)
    interp = {k: frozenset(v) for k, v in delta.items()}
    ev = GroundEval(theory, completions, open_interp=interp)
    for ax in theory.fol_axioms:
        if not ev.truth(ax, {}):
            return False
    if query_goal is not None:
        if free_vars(query_goal):
            return any(True for _ in ev.solutions(query_goal, {}))
        return ev.truth(query_goal, {})
    return True
