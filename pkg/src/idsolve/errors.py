"""Exception taxonomy shared by all solver components."""


class IdsolveError(Exception):
    """Base class for every error raised by this package."""


class ParseError(IdsolveError):
    def __init__(self, message, line, col, expected=None):
        self.line = line
        self.col = col
        self.expected = tuple(expected or ())
        detail = f"{message} at line {line}, column {col}"
        if self.expected:
            detail += " (expected " + " or ".join(self.expected) + ")"
        super().__init__(detail)


class LanguageError(IdsolveError):
    """Well-formedness violation beyond raw syntax (bad arity, bad operand sorts)."""


class SymbolComparisonError(LanguageError):
    """Ordering comparison applied to non-integer constants."""


class RecursionUnsupported(IdsolveError):
    """The theory's definitions are recursive; only the non-recursive fragment is solvable."""

    def __init__(self, cycle):
        self.cycle = tuple(cycle)
        pretty = " -> ".join(f"{p}/{a}" for p, a in self.cycle)
        super().__init__(f"recursive definition cycle: {pretty}")


class DuplicateDefinition(IdsolveError):
    """Same predicate name heads rules at two different arities."""


class EmptyDomain(IdsolveError):
    """A variable was created with no values."""


class FDOverflowError(IdsolveError):
    """A domain bound left the supported integer range."""


class NotReifiable(IdsolveError):
    """Constraint kind has no boolean reflection."""


class UnsupportedSetExpression(IdsolveError):
    """A membership-relevant variable of a set expression has no finite domain."""

    def __init__(self, variable, set_expr_text):
        self.variable = variable
        self.set_expr_text = set_expr_text
        super().__init__(
            f"variable {variable} in set expression {set_expr_text} has no finite domain"
        )


class NonFunctional(IdsolveError):
    """A function expression produced zero or several values for one member."""

    def __init__(self, member, count):
        self.member = member
        self.count = count
        super().__init__(f"function expression yields {count} values for member {member}")


class EmptySetMinimum(IdsolveError):
    """minimum/maximum applied to a provably empty set."""


class FlounderingError(IdsolveError):
    """A universally quantified variable was selected in a position that cannot instantiate it."""

    def __init__(self, denial_text, variable):
        self.denial_text = denial_text
        self.variable = variable
        super().__init__(
            f"floundering: universal variable {variable} not instantiatable in {denial_text}"
        )


class DomainTooLarge(IdsolveError):
    """Brute-force enumeration would exceed the configured bound."""


class InternalSoundnessError(IdsolveError):
    """An emitted answer failed independent validation; indicates a solver bug."""


class SearchTimeout(IdsolveError):
    """Deadline hit during search; incumbent (if any) is still valid."""


class UsageError(IdsolveError):
    """Bad command-line invocation."""
