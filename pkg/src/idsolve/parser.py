"""Tokenizer and recursive-descent parser for the theory and query syntax.

Clause forms:
    head <- body.            rule (body-only variables are implicitly existential)
    fol formula.             first-order axiom (free variables implicitly universal)
    dom pred(lo..hi, ...).   finite-domain declaration for a predicate's arguments
Connectives: "," = and, ";" = or, "=>" = implication, quantifiers written
exists(Vars) : F / forall(Vars) : F and scoping as far right as possible.
"%" starts a comment. The normative grammar ships in docs/grammar.ebnf.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import LanguageError, ParseError
from .lang import (
    AGGREGATE_KINDS, Aggregate, And, Atom, Comparison, Const, Definition,
    Exists, FALSE, Forall, FuncExpr, Implies, InRange, Int, Not, Or, Query,
    Rule, SetExpr, Term, Theory, TRUE, Var, conjuncts, free_vars, fresh_var,
    mk_and,
)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>%[^\n]*)
  | (?P<int>\d+)
  | (?P<var>[A-Z_][A-Za-z0-9_]*)
  | (?P<ident>[a-z][A-Za-z0-9_]*)
  | (?P<punct><-|=>|=<|>=|\\=|\.\.|[()\[\],;:.=<>+\-*])
    """,
    re.VERBOSE,
)


@dataclass
class Token:
    kind: str  # int | var | ident | punct | eof
    text: str
    line: int
    col: int


def tokenize(text: str):
    tokens = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        tok = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, tok, line, col))
        newlines = tok.count("\n")
        if newlines:
            line += newlines
            col = len(tok) - tok.rfind("\n")
        else:
            col += len(tok)
        pos = m.end()
    tokens.append(Token("eof", "", line, col))
    return tokens


_QUANTIFIERS = {"exists": Exists, "forall": Forall}


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    # -- token plumbing

    def peek(self, ahead=0) -> Token:
        return self.tokens[min(self.i + ahead, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.tokens[self.i]
        if tok.kind != "eof":
            self.i += 1
        return tok

    def at(self, text: str) -> bool:
        return self.peek().text == text and self.peek().kind in ("punct", "ident")

    def eat(self, text: str) -> bool:
        if self.at(text):
            self.next()
            return True
        return False

    def expect(self, text: str) -> Token:
        tok = self.peek()
        if not self.eat(text):
            raise ParseError(
                f"unexpected {tok.text!r}" if tok.kind != "eof" else "unexpected end of input",
                tok.line, tok.col, expected=[repr(text)],
            )
        return tok

    def fail(self, message, expected=None):
        tok = self.peek()
        raise ParseError(message, tok.line, tok.col, expected=expected)

    # -- terms

    def parse_term(self) -> Term:
        return self.parse_additive()

    def parse_additive(self) -> Term:
        t = self.parse_multiplicative()
        while self.peek().text in ("+", "-") and self.peek().kind == "punct":
            op = self.next().text
            rhs = self.parse_multiplicative()
            t = self.mk_arith(op, t, rhs)
        return t

    def parse_multiplicative(self) -> Term:
        t = self.parse_primary_term()
        while self.at("*"):
            self.next()
            rhs = self.parse_primary_term()
            t = self.mk_arith("*", t, rhs)
        return t

    @staticmethod
    def mk_arith(op, a, b):
        if isinstance(a, Int) and isinstance(b, Int):
            if op == "+":
                return Int(a.value + b.value)
            if op == "-":
                return Int(a.value - b.value)
            if op == "*":
                return Int(a.value * b.value)
        from .lang import Arith

        return Arith(op, (a, b))

    def parse_primary_term(self) -> Term:
        tok = self.peek()
        if tok.kind == "int":
            self.next()
            return Int(int(tok.text))
        if tok.text == "-" and tok.kind == "punct":
            self.next()
            inner = self.parse_primary_term()
            if isinstance(inner, Int):
                return Int(-inner.value)
            return self.mk_arith("-", Int(0), inner)
        if tok.kind == "var":
            self.next()
            return Var(tok.text)
        if tok.kind == "ident":
            if tok.text == "abs" and self.peek(1).text == "(":
                self.next()
                self.expect("(")
                inner = self.parse_term()
                self.expect(")")
                from .lang import Arith

                return Arith("abs", (inner,))
            self.next()
            return Const(tok.text)
        if self.eat("("):
            t = self.parse_term()
            self.expect(")")
            return t
        self.fail("expected a term", expected=["integer", "variable", "constant"])

    # -- formulas

    def parse_formula(self):
        return self.parse_implication()

    def parse_implication(self):
        lhs = self.parse_disjunction()
        if self.eat("=>"):
            rhs = self.parse_implication()
            return Implies(lhs, rhs)
        return lhs

    def parse_disjunction(self):
        parts = [self.parse_conjunction()]
        while self.eat(";"):
            parts.append(self.parse_conjunction())
        out = parts[0]
        for p in parts[1:]:
            out = Or(out, p)
        return out

    def parse_conjunction(self):
        parts = [self.parse_unit()]
        while self.eat(","):
            parts.append(self.parse_unit())
        out = parts[0]
        for p in parts[1:]:
            out = And(out, p)
        return out

    def parse_var_list(self):
        self.expect("(")
        names = []
        while True:
            tok = self.peek()
            if tok.kind != "var":
                self.fail("expected a variable", expected=["variable"])
            names.append(self.next().text)
            if not self.eat(","):
                break
        self.expect(")")
        return tuple(names)

    def parse_bracket_var_list(self):
        self.expect("[")
        names = []
        while True:
            tok = self.peek()
            if tok.kind != "var":
                self.fail("expected a variable", expected=["variable"])
            names.append(self.next().text)
            if not self.eat(","):
                break
        self.expect("]")
        return tuple(names)

    def parse_set_expr(self) -> SetExpr:
        self.expect("set")
        self.expect("(")
        params = self.parse_bracket_var_list()
        self.expect(",")
        body = self.parse_formula()
        self.expect(")")
        return SetExpr(params, body)

    def parse_func_expr(self) -> FuncExpr:
        self.expect("lambda")
        self.expect("(")
        params = self.parse_bracket_var_list()
        self.expect(",")
        if self.peek().kind == "var" and self.peek(1).text == "where":
            result = self.next().text
            self.expect("where")
            body = self.parse_formula_inside_parens()
        else:
            # arithmetical shorthand lambda([X], t[X])
            term = self.parse_term()
            result = fresh_var("L")
            body = Comparison("=", Var(result), term)
        self.expect(")")
        return FuncExpr(params, result, body)

    def parse_formula_inside_parens(self):
        # a `where` body extends to the lambda's closing paren; parenthesised
        # bodies are also accepted
        return self.parse_formula()

    def parse_aggregate(self, kind: str) -> Aggregate:
        self.expect(kind)
        self.expect("(")
        sexpr = self.parse_set_expr()
        self.expect(",")
        func = None
        if kind in ("sum", "product"):
            func = self.parse_func_expr()
            self.expect(",")
        result = self.parse_term()
        self.expect(")")
        try:
            return Aggregate(kind, sexpr, func, result)
        except LanguageError as e:
            self.fail(str(e))

    def parse_unit(self):
        tok = self.peek()
        if tok.kind == "ident":
            if tok.text == "true" and self.peek(1).text != "(":
                self.next()
                return TRUE
            if tok.text == "false" and self.peek(1).text != "(":
                self.next()
                return FALSE
            if tok.text == "not":
                self.next()
                body = self.parse_unit()
                return Not(body)
            if tok.text in _QUANTIFIERS and self.peek(1).text == "(":
                kind = self.next().text
                names = self.parse_var_list()
                self.expect(":")
                body = self.parse_formula()
                return _QUANTIFIERS[kind](names, body)
            if tok.text in AGGREGATE_KINDS and self.peek(1).text == "(":
                return self.parse_aggregate(tok.text)
            if tok.text == "abs" and self.peek(1).text == "(":
                return self.parse_comparison_from(self.parse_term())
            if self.peek(1).text == "(":
                return self.parse_atom()
            # zero-ary atom or symbol starting a comparison
            if self.peek(1).text in ("=", "\\=", "<", "=<", ">", ">=", "in"):
                return self.parse_comparison_from(self.parse_term())
            self.next()
            return Atom(tok.text, ())
        if self.eat("("):
            f = self.parse_formula()
            self.expect(")")
            return f
        # comparison starting with a term
        return self.parse_comparison_from(self.parse_term())

    def parse_atom(self) -> Atom:
        name = self.next().text
        self.expect("(")
        args = [self.parse_term()]
        while self.eat(","):
            args.append(self.parse_term())
        self.expect(")")
        return Atom(name, tuple(args))

    def parse_comparison_from(self, lhs: Term):
        tok = self.peek()
        if tok.text == "in" and tok.kind == "ident":
            self.next()
            lo = self.parse_term()
            self.expect("..")
            hi = self.parse_term()
            return InRange(lhs, lo, hi)
        if tok.text in ("=", "\\=", "<", "=<", ">", ">="):
            op = self.next().text
            rhs = self.parse_term()
            return Comparison(op, lhs, rhs)
        self.fail("expected a comparison operator", expected=["=", "\\=", "<", "=<", ">", ">=", "in"])

    # -- clauses

    def parse_dom_decl(self):
        self.expect("dom")
        name_tok = self.peek()
        if name_tok.kind != "ident":
            self.fail("expected a predicate name", expected=["identifier"])
        name = self.next().text
        self.expect("(")
        ranges = []
        if not self.at(")"):
            while True:
                lo = self.parse_term()
                self.expect("..")
                hi = self.parse_term()
                if not isinstance(lo, Int) or not isinstance(hi, Int):
                    self.fail("domain bounds must be integer literals")
                if lo.value > hi.value:
                    self.fail("empty domain range")
                ranges.append((lo.value, hi.value))
                if not self.eat(","):
                    break
        self.expect(")")
        self.expect(".")
        return name, tuple(ranges)

    def parse_rule(self) -> Rule:
        head = self.parse_atom() if self.peek(1).text == "(" else Atom(self.next().text, ())
        self.expect("<-")
        body = self.parse_formula()
        self.expect(".")
        for a in head.args:
            if not isinstance(a, (Var, Const, Int)):
                self.fail("rule head arguments must be variables or constants")
        return Rule(head.pred, head.args, body)

    def parse_theory(self) -> Theory:
        theory = Theory()
        current = None  # open Definition for a contiguous rule block
        while self.peek().kind != "eof":
            tok = self.peek()
            if tok.kind == "ident" and tok.text == "fol":
                self.next()
                f = self.parse_formula()
                self.expect(".")
                theory.fol_axioms.append(_close_axiom(f))
                current = None
            elif tok.kind == "ident" and tok.text == "dom":
                name, ranges = self.parse_dom_decl()
                key = (name, len(ranges))
                if key in theory.domain_decls and theory.domain_decls[key] != ranges:
                    self.fail(f"conflicting domain declaration for {name}/{len(ranges)}")
                theory.domain_decls[key] = ranges
                current = None
            elif tok.kind == "ident":
                rule = self.parse_rule()
                _check_rule_vars(rule)
                if current is None:
                    current = Definition()
                    theory.definitions.append(current)
                current.defined.add(rule.key)
                current.rules.append(rule)
                _derive_domain_decl(theory, rule)
            else:
                self.fail("expected a clause", expected=["rule", "'fol'", "'dom'"])
        _check_theory(theory)
        return theory

    def parse_query(self) -> Query:
        goal = self.parse_formula()
        self.expect(".")
        if self.peek().kind != "eof":
            self.fail("trailing input after query")
        objective = None
        kept = []
        for part in conjuncts(goal):
            if isinstance(part, Atom) and part.pred in ("minimize", "maximize"):
                if len(part.args) != 1 or not isinstance(part.args[0], Var):
                    raise ParseError(
                        f"{part.pred} takes a single variable", 1, 1
                    )
                if objective is not None:
                    raise ParseError("more than one optimization directive", 1, 1)
                objective = (part.pred, part.args[0].name)
            else:
                kept.append(part)
        goal = mk_and(kept) if kept or objective else goal
        if objective is not None and objective[1] not in free_vars(goal):
            raise ParseError(
                f"objective variable {objective[1]} does not occur in the goal", 1, 1
            )
        return Query(goal, objective)


def _close_axiom(f):
    """Free variables of an axiom are implicitly universally quantified."""
    fv = sorted(free_vars(f))
    if not fv:
        return f
    if isinstance(f, Forall):
        return Forall(tuple(fv) + f.vars, f.body)
    return Forall(tuple(fv), f)


def _check_rule_vars(rule: Rule):
    # body-only variables are implicitly existential (closed at completion
    # time); aggregate operands may not sit under term positions, which the
    # grammar already guarantees.
    return


def _derive_domain_decl(theory: Theory, rule: Rule):
    """A rule of the exact shape  p(V) <- V in lo..hi.  doubles as a domain
    declaration for p/1."""
    if len(rule.head_args) != 1 or not isinstance(rule.head_args[0], Var):
        return
    body = rule.body
    if not isinstance(body, InRange):
        return
    head_var = rule.head_args[0]
    if body.term != head_var:
        return
    if not isinstance(body.lo, Int) or not isinstance(body.hi, Int):
        return
    key = (rule.head_pred, 1)
    rng = ((body.lo.value, body.hi.value),)
    theory.domain_decls.setdefault(key, rng)


def _check_theory(theory: Theory):
    by_name = {}
    for d in theory.definitions:
        for pred, arity in d.defined:
            prev = by_name.setdefault(pred, arity)
            if prev != arity:
                # same name at two arities is fine only when one of the two is
                # open; both heading rules is ambiguous
                from .errors import DuplicateDefinition

                raise DuplicateDefinition(
                    f"predicate {pred} heads rules at arities {prev} and {arity}"
                )


def parse_theory(text: str) -> Theory:
    return _Parser(text).parse_theory()


def parse_query(text: str) -> Query:
    return _Parser(text).parse_query()
