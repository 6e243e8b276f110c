"""Battleship solitaire instances: generation, theory encoding, checking.

The fleet is one battleship (4 cells), two cruisers (3), three destroyers
(2) and four submarines (1) on a 10x10 grid; ships are horizontal or
vertical and never touch, not even diagonally. An instance gives the per-row
and per-column counts of occupied cells plus a few revealed cells.

Coordinates follow the theory encoding: a cell is (X, Y) with X in 1..10
selecting the row tally `row(X, N)` and Y the column tally `column(Y, M)`.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

SIZE = 10
FLEET = {"battleship": (4, 1), "cruiser": (3, 2), "destroyer": (2, 3), "submarine": (1, 4)}
SHIP_TYPES = (
    ("battleship", 4), ("cruiser", 3), ("cruiser", 3),
    ("destroyer", 2), ("destroyer", 2), ("destroyer", 2),
    ("submarine", 1), ("submarine", 1), ("submarine", 1), ("submarine", 1),
)
TOTAL_CELLS = sum(l for _t, l in SHIP_TYPES)


@dataclass
class BattleshipInstance:
    size: int
    rows: list  # row tallies, index 0 = X coordinate 1
    cols: list
    givens: list  # (x, y, "boat" | "water")
    fleet: dict = field(default_factory=lambda: {t: n for t, (_l, n) in FLEET.items()})

    def to_json(self) -> str:
        return json.dumps({
            "size": self.size,
            "fleet": self.fleet,
            "rows": self.rows,
            "cols": self.cols,
            "givens": [list(g) for g in self.givens],
        }, indent=2)

    @staticmethod
    def from_json(text: str) -> "BattleshipInstance":
        data = json.loads(text)
        return BattleshipInstance(
            size=data["size"],
            rows=list(data["rows"]),
            cols=list(data["cols"]),
            givens=[tuple(g) for g in data["givens"]],
            fleet=dict(data["fleet"]),
        )


def ship_length_of(ship_id: int) -> int:
    return SHIP_TYPES[ship_id - 1][1]


def random_placement(rng: random.Random):
    """Legal fleet placement as {(ship, part): (x, y)}; ships are placed
    largest first with a halo test, retrying from scratch when blocked."""
    for _attempt in range(1000):
        occupied = set()
        halo = set()
        placement = {}
        ok = True
        for ship_id, (_type, length) in enumerate(SHIP_TYPES, start=1):
            spots = []
            for horizontal in (True, False):
                xmax = SIZE - (length - 1 if horizontal else 0)
                ymax = SIZE - (0 if horizontal else length - 1)
                for x in range(1, xmax + 1):
                    for y in range(1, ymax + 1):
                        cells = [
                            (x + i, y) if horizontal else (x, y + i)
                            for i in range(length)
                        ]
                        if all(c not in halo for c in cells):
                            spots.append(cells)
            if not spots:
                ok = False
                break
            cells = rng.choice(spots)
            for part, cell in enumerate(cells, start=1):
                placement[(ship_id, part)] = cell
            occupied.update(cells)
            for (cx, cy) in cells:
                for dx in (-1, 0, 1):
                    for dy in (-1, 0, 1):
                        halo.add((cx + dx, cy + dy))
        if ok:
            return placement
    raise RuntimeError("placement retry budget exhausted; re-seed")


def generate(seed: int, reveals: int = 8):
    """Deterministic instance from a seed; returns (instance, placement).
    The instance is satisfiable by construction (the placement witnesses it)."""
    rng = random.Random(seed)
    placement = random_placement(rng)
    occupied = set(placement.values())
    rows = [sum(1 for (x, _y) in occupied if x == i) for i in range(1, SIZE + 1)]
    cols = [sum(1 for (_x, y) in occupied if y == j) for j in range(1, SIZE + 1)]
    cells = [(x, y) for x in range(1, SIZE + 1) for y in range(1, SIZE + 1)]
    rng.shuffle(cells)
    givens = []
    for (x, y) in cells[:reveals]:
        givens.append((x, y, "boat" if (x, y) in occupied else "water"))
    return BattleshipInstance(SIZE, rows, cols, sorted(givens)), placement


BASE_THEORY = """\
% fleet: one battleship, two cruisers, three destroyers, four submarines
ship(S) <- S in 1..10.

ship_type(1,battleship) <- true.
ship_type(S,cruiser)    <- S in 2..3.
ship_type(S,destroyer)  <- S in 4..6.
ship_type(S,submarine)  <- S in 7..10.

length(battleship,4) <- true.
length(cruiser,3)    <- true.
length(destroyer,2)  <- true.
length(submarine,1)  <- true.

ship_length(S,L) <- ship_type(S,T), length(T,L).

domx(X) <- X in 1..10.
domy(Y) <- Y in 1..10.
dom ship(1..10, 1..4, 1..10, 1..10).

% each part of each ship sits somewhere on the grid
fol forall(S,Len,Part):
    ship(S), ship_length(S,Len), Part in 1..Len
    => ( exists(X,Y): domx(X), domy(Y), ship(S,Part,X,Y) ).

% parts of one ship line up horizontally or vertically
fol forall(S,P1,P2,X1,X2,Y1,Y2):
    ship(S,P1,X1,Y1), ship(S,P2,X2,Y2), P1 \\= P2
    => ( X1 - X2 = P1 - P2, Y1 = Y2 ; Y1 - Y2 = P1 - P2, X1 = X2 ).

% different ships never touch, not even diagonally
fol forall(S1,S2,P1,P2,X1,X2,Y1,Y2):
    ship(S1,P1,X1,Y1), ship(S2,P2,X2,Y2), S1 \\= S2
    => ( abs(X1 - X2) > 1 ; abs(Y1 - Y2) > 1 ).

% a boat cell carries some ship part; water is everything else
boat(X,Y)  <- exists(S,L,P): ship(S), ship_length(S,L), P in 1..L, ship(S,P,X,Y).
water(X,Y) <- not boat(X,Y).
dom water(1..10, 1..10).

% tallies count ship parts per row and per column
row(I,N)    <- card(set([S,P], exists(Y): ship(S,P,I,Y)), N).
column(J,M) <- card(set([S,P], exists(X): ship(S,P,X,J)), M).

% search-order canon: part numbering runs in cell order, and ships of equal
% type are ordered by their first part (cuts interchangeable placements)
same_type(S1,S2) <- ship_type(S1,T), ship_type(S2,T).

fol forall(S,P1,P2,X1,Y1,X2,Y2):
    ship(S,P1,X1,Y1), ship(S,P2,X2,Y2), P1 < P2
    => X1*10 + Y1 < X2*10 + Y2.

fol forall(S1,S2,X1,Y1,X2,Y2):
    same_type(S1,S2), S1 < S2, ship(S1,1,X1,Y1), ship(S2,1,X2,Y2)
    => X1*10 + Y1 < X2*10 + Y2.
"""


def instance_theory(instance: BattleshipInstance) -> str:
    """Theory text for one instance: base encoding plus data axioms."""
    lines = [BASE_THEORY, "% instance data"]
    for i, n in enumerate(instance.rows, start=1):
        lines.append(f"fol row({i},{n}).")
    for j, m in enumerate(instance.cols, start=1):
        lines.append(f"fol column({j},{m}).")
    for (x, y, kind) in instance.givens:
        if kind == "boat":
            lines.append(
                f"fol exists(C): card(set([S,P], ship(S,P,{x},{y})), C), C >= 1."
            )
        else:
            lines.append(
                f"fol exists(C): card(set([S,P], ship(S,P,{x},{y})), C), C = 0."
            )
    return "\n".join(lines) + "\n"


def parse_placement(atoms):
    """{(ship, part): (x, y)} from ship/4 atom strings like 'ship(1,2,3,4)'."""
    placement = {}
    for s in atoms:
        s = s.strip()
        if not s.startswith("ship(") or not s.endswith(")"):
            continue
        parts = [int(v) for v in s[len("ship("):-1].split(",")]
        if len(parts) != 4:
            continue
        ship, part, x, y = parts
        placement[(ship, part)] = (x, y)
    return placement


def check(instance: BattleshipInstance, placement) -> list:
    """All violations of a placement against the instance; empty means pass."""
    v = []
    expected_keys = set()
    for ship_id, (_t, length) in enumerate(SHIP_TYPES, start=1):
        for part in range(1, length + 1):
            expected_keys.add((ship_id, part))
    missing = expected_keys - set(placement)
    extra = set(placement) - expected_keys
    if missing:
        v.append(f"fleet composition: missing parts {sorted(missing)}")
    if extra:
        v.append(f"fleet composition: unexpected parts {sorted(extra)}")
    cells = list(placement.values())
    if len(set(cells)) != len(cells):
        v.append("two parts share a cell")
    for (ship, part), (x, y) in placement.items():
        if not (1 <= x <= instance.size and 1 <= y <= instance.size):
            v.append(f"part {(ship, part)} off the grid at {(x, y)}")
    # straightness and connectivity, pairwise as in the axioms
    for (s1, p1), (x1, y1) in placement.items():
        for (s2, p2), (x2, y2) in placement.items():
            if s1 == s2 and p1 != p2:
                if not ((x1 - x2 == p1 - p2 and y1 == y2)
                        or (y1 - y2 == p1 - p2 and x1 == x2)):
                    v.append(f"ship {s1} parts {p1},{p2} not in line")
            if s1 < s2:
                if abs(x1 - x2) <= 1 and abs(y1 - y2) <= 1:
                    v.append(f"ships {s1} and {s2} touch at {(x1, y1)}/{(x2, y2)}")
    occupied = set(cells)
    for i in range(1, instance.size + 1):
        n = sum(1 for (x, _y) in occupied if x == i)
        if n != instance.rows[i - 1]:
            v.append(f"row {i} tally {n} != {instance.rows[i - 1]}")
    for j in range(1, instance.size + 1):
        m = sum(1 for (_x, y) in occupied if y == j)
        if m != instance.cols[j - 1]:
            v.append(f"column {j} tally {m} != {instance.cols[j - 1]}")
    for (x, y, kind) in instance.givens:
        if kind == "boat" and (x, y) not in occupied:
            v.append(f"given boat cell {(x, y)} is water")
        if kind == "water" and (x, y) in occupied:
            v.append(f"given water cell {(x, y)} is occupied")
    return v


def render(instance: BattleshipInstance, placement=None) -> str:
    """ASCII board: rows are X (one line per X), columns are Y."""
    lines = []
    occupied = set(placement.values()) if placement else set()
    given_map = {(x, y): kind for (x, y, kind) in instance.givens}
    header = "    " + " ".join(str(instance.cols[j - 1]) for j in range(1, instance.size + 1))
    lines.append(header)
    for x in range(1, instance.size + 1):
        row = []
        for y in range(1, instance.size + 1):
            if (x, y) in occupied:
                row.append("#")
            elif given_map.get((x, y)) == "boat":
                row.append("B")
            elif given_map.get((x, y)) == "water":
                row.append("~")
            else:
                row.append(".")
        lines.append(f"{instance.rows[x - 1]:>2}  " + " ".join(row))
    return "\n".join(lines)
