"""Definition analysis: dependency graph, recursion rejection, merging, and
if-and-only-if completion bodies used to unfold defined atoms."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DuplicateDefinition, RecursionUnsupported
from .lang import (
    Atom, Const, Comparison, Definition, Exists, FALSE, Formula, Int, Rule,
    SetExpr, Theory, Var, atoms_of, free_vars, mk_and, mk_or, substitute,
)


@dataclass
class DependencyGraph:
    nodes: set  # {(pred, arity)}
    edges: dict  # {(pred, arity): set of (pred, arity)}
    defined: set

    def successors(self, key):
        return self.edges.get(key, set())


@dataclass(frozen=True)
class CompletedDef:
    pred: str
    arity: int
    params: tuple
    body: Formula

    @property
    def key(self):
        return (self.pred, self.arity)


def build_dependency_graph(theory: Theory) -> DependencyGraph:
    defined = theory.defined_keys()
    nodes = set(defined)
    edges = {}
    for rule in theory.all_rules():
        targets = edges.setdefault(rule.key, set())
        for atom in atoms_of(rule.body):
            targets.add(atom.key)
            nodes.add(atom.key)
    return DependencyGraph(nodes=nodes, edges=edges, defined=defined)


def find_cycle(graph: DependencyGraph):
    """A cycle among defined predicates, or None. Recursion through set and
    lambda bodies counts; a self-edge is a one-node cycle."""
    color = {}
    parent = {}

    def dfs(start):
        stack = [(start, iter(sorted(graph.successors(start) & graph.defined)))]
        color[start] = 1
        while stack:
            node, it = stack[-1]
            advanced = False
            for succ in it:
                if color.get(succ, 0) == 1:
                    cycle = [succ, node]
                    cur = node
                    while cur != succ and cur in parent:
                        cur = parent[cur]
                        cycle.append(cur)
                    cycle.reverse()
                    return cycle
                if color.get(succ, 0) == 0:
                    parent[succ] = node
                    color[succ] = 1
                    stack.append((succ, iter(sorted(graph.successors(succ) & graph.defined))))
                    advanced = True
                    break
            if not advanced:
                color[node] = 2
                stack.pop()
        return None

    for key in sorted(graph.defined):
        if color.get(key, 0) == 0:
            cycle = dfs(key)
            if cycle is not None:
                return cycle
    return None


def assert_nonrecursive(graph: DependencyGraph):
    cycle = find_cycle(graph)
    if cycle is not None:
        raise RecursionUnsupported(cycle)


def merge_definitions(theory: Theory) -> Theory:
    """Collapse all definitions into one; the rule multiset is preserved and
    the defined set is the union."""
    arity_by_name = {}
    merged = Definition()
    for d in theory.definitions:
        for rule in d.rules:
            prev = arity_by_name.setdefault(rule.head_pred, len(rule.head_args))
            if prev != len(rule.head_args):
                raise DuplicateDefinition(
                    f"predicate {rule.head_pred} heads rules at arities "
                    f"{prev} and {len(rule.head_args)}"
                )
            merged.defined.add(rule.key)
            merged.rules.append(rule)
    return Theory(
        definitions=[merged] if merged.rules else [],
        fol_axioms=list(theory.fol_axioms),
        domain_decls=dict(theory.domain_decls),
    )


def _param_names(rules, arity):
    taken = set()
    for r in rules:
        taken |= free_vars(r.body)
        for a in r.head_args:
            taken |= free_vars(a)
    stem = "_X"
    while any(f"{stem}{i}" in taken for i in range(1, arity + 1)):
        stem += "_"
    return tuple(f"{stem}{i}" for i in range(1, arity + 1))


def complete_predicate(definition: Definition, key) -> CompletedDef:
    """Build B_p: the disjunction over p's rules of the existentially closed
    rule bodies, head arguments turned into parameter equations. Parameter
    equations against distinct head variables are inlined."""
    pred, arity = key
    rules = [r for r in definition.rules if r.key == key]
    params = _param_names(rules, arity)
    disjuncts = []
    for rule in rules:
        equations = []
        body = rule.body
        args = list(rule.head_args)
        seen = {}
        for i, arg in enumerate(args):
            p = Var(params[i])
            if isinstance(arg, Var) and arg.name not in seen:
                seen[arg.name] = p
                replace = {arg.name: p}
                args = [substitute(a, replace) for a in args]
                body = substitute(body, replace)
            else:
                equations.append(Comparison("=", p, args[i]))
        conj = mk_and(equations + [body])
        locals_ = tuple(sorted(free_vars(conj) - set(params)))
        disjuncts.append(Exists(locals_, conj) if locals_ else conj)
    body = mk_or(disjuncts) if disjuncts else FALSE
    return CompletedDef(pred, arity, params, body)


def complete_all(theory: Theory) -> dict:
    """CompletedDef for every defined predicate of the merged theory."""
    merged = merge_definitions(theory)
    if not merged.definitions:
        return {}
    definition = merged.definitions[0]
    return {key: complete_predicate(definition, key) for key in sorted(definition.defined)}


def unfold(completed: CompletedDef, args) -> Formula:
    """Instantiate B_p with concrete arguments."""
    if len(args) != completed.arity:
        raise ValueError(f"{completed.pred}/{completed.arity} applied to {len(args)} args")
    return substitute(completed.body, dict(zip(completed.params, args)))


def format_completed(c: CompletedDef) -> str:
    from .lang import format_formula

    head = Atom(c.pred, tuple(Var(p) for p in c.params))
    return f"{format_formula(head)} <-> {format_formula(c.body)}."
