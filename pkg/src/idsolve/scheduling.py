"""Maintenance scheduling instances: tables, theory encoding, and an
exhaustive reference optimizer.

A unit belongs to a plant, a plant to an area. Each maintenance has a fixed
duration and must be scheduled inside the year; prohibited windows,
non-simultaneity gaps, forced simultaneity, per-unit non-overlap, a per-plant
cap on units in maintenance, and a per-area cap on capacity in maintenance
all constrain the choice. The objective maximizes the minimal weekly reserve
(total capacity minus peak load minus capacity in maintenance).

The reference optimizer enumerates start weeks per maintenance exhaustively.
Start-week tuples are exactly the subset-minimal models of the encoding, and
adding further start atoms only lowers weekly reserves while tightening every
constraint, so the optimum over schedules equals the optimum over all models
(the micro-instance test cross-checks this against full model enumeration).
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class SchedulingInstance:
    weeks: int
    capacity: dict  # unit -> capacity
    unit_plant: dict  # unit -> plant
    plant_area: dict  # plant -> area
    plant_max: dict  # plant -> max units simultaneously in maintenance
    area_max: dict  # area -> max capacity simultaneously in maintenance
    maint_unit: dict  # maintenance -> unit
    duration: dict  # maintenance -> weeks
    peakload: dict  # week -> load
    prohibited: list = field(default_factory=list)  # (unit, from, to)
    non_simult: list = field(default_factory=list)  # (m1, m2, pre, post)
    simult: list = field(default_factory=list)  # (m1, m2)

    @property
    def total_capacity(self):
        return sum(self.capacity.values())


def small_instance() -> SchedulingInstance:
    """The desk-scale instance: 6 maintenances, 4 units, 2 plants, 1 area,
    12 weeks, every constraint family populated."""
    return SchedulingInstance(
        weeks=12,
        capacity={1: 100, 2: 250, 3: 150, 4: 200},
        unit_plant={1: 1, 2: 1, 3: 2, 4: 2},
        plant_area={1: 1, 2: 1},
        plant_max={1: 1, 2: 1},
        area_max={1: 350},
        maint_unit={1: 1, 2: 1, 3: 2, 4: 3, 5: 4, 6: 4},
        duration={1: 2, 2: 3, 3: 2, 4: 4, 5: 2, 6: 3},
        peakload={1: 300, 2: 310, 3: 330, 4: 350, 5: 380, 6: 400,
                  7: 410, 8: 400, 9: 370, 10: 340, 11: 320, 12: 300},
        prohibited=[(1, 1, 2), (3, 10, 12)],
        non_simult=[(1, 4, 1, 1)],
        simult=[(1, 5)],
    )


def micro_instance() -> SchedulingInstance:
    """Tiny enough for full model enumeration by the oracle."""
    return SchedulingInstance(
        weeks=2,
        capacity={1: 10, 2: 20},
        unit_plant={1: 1, 2: 1},
        plant_area={1: 1},
        plant_max={1: 1},
        area_max={1: 25},
        maint_unit={1: 1, 2: 2},
        duration={1: 1, 2: 1},
        peakload={1: 5, 2: 12},
    )


def _facts(name, rows):
    out = []
    for row in rows:
        args = ",".join(str(v) for v in row)
        out.append(f"{name}({args}) <- true.")
    return out


def instance_theory(inst: SchedulingInstance) -> str:
    lines = [
        "% maintenance scheduling",
        f"week(W) <- W in 1..{inst.weeks}.",
        f"dom start(1..{len(inst.maint_unit)}, 1..{inst.weeks}, 1..{inst.weeks}).",
        "",
    ]
    lines += _facts("unit", [(u,) for u in sorted(inst.capacity)])
    lines += _facts("plant", [(p,) for p in sorted(inst.plant_max)])
    lines += _facts("area", [(a,) for a in sorted(inst.area_max)])
    lines += _facts("maint", [(m,) for m in sorted(inst.maint_unit)])
    lines += _facts("duration", sorted(inst.duration.items()))
    lines += _facts("maint_for_unit", sorted(inst.maint_unit.items()))
    lines += _facts("capacity", sorted(inst.capacity.items()))
    lines += _facts("unit_in_plant", sorted(inst.unit_plant.items()))
    lines += _facts("plant_in_area", sorted(inst.plant_area.items()))
    lines += _facts("plant_max", sorted(inst.plant_max.items()))
    lines += _facts("area_max", sorted(inst.area_max.items()))
    lines += _facts("peakload", sorted(inst.peakload.items()))
    lines += _facts("total_capacity", [(inst.total_capacity,)])
    lines += _facts("prohibited", inst.prohibited)
    lines += _facts("non_simult_maint", inst.non_simult)
    lines += _facts("simult_maint", inst.simult)
    lines.append("""
in_maint(U,W) <- exists(M,B,E):
    maint_for_unit(M,U), start(M,B,E), B =< W, W =< E.

in_area(U,A) <- unit_in_plant(U,P), plant_in_area(P,A).

reserve(Week,R) <- exists(Load,T,InMaint):
    peakload(Week,Load), total_capacity(T),
    sum(set([Unit], (unit(Unit), in_maint(Unit,Week))),
        lambda([Un], C where capacity(Un,C)), InMaint),
    R = T - Load - InMaint.

% every maintenance is scheduled inside the year
fol forall(M): maint(M)
    => exists(B,E,D): week(B), week(E),
       duration(M,D), E = B + D - 1, start(M,B,E).

% prohibited windows per unit
fol forall(U,Bp,Ep,M,B,E):
    prohibited(U,Bp,Ep), maint_for_unit(M,U), start(M,B,E)
    => (E < Bp ; Ep < B).

% minimum distance between incompatible maintenances
fol forall(M1,M2,Pre,Post,B1,E1,B2,E2):
    non_simult_maint(M1,M2,Pre,Post), start(M1,B1,E1), start(M2,B2,E2)
    => (B2 > E1 + Post ; B1 > E2 + Pre).

% forced simultaneity: one period inside the other
fol forall(M1,M2,B1,E1,B2,E2):
    simult_maint(M1,M2), start(M1,B1,E1), start(M2,B2,E2)
    => ((B1 =< B2, E2 =< E1) ; (B2 =< B1, E1 =< E2)).

% maintenances of one unit never overlap
fol forall(U,M1,M2,B1,E1,B2,E2):
    unit(U), maint_for_unit(M1,U), maint_for_unit(M2,U), M1 \\= M2,
    start(M1,B1,E1), start(M2,B2,E2)
    => (E1 < B2 ; E2 < B1).

% per plant: units simultaneously in maintenance stay under the cap
fol forall(P,Max,We):
    plant(P), plant_max(P,Max), week(We)
    => (exists(OnMaint):
          card(set([U], (unit(U), unit_in_plant(U,P), in_maint(U,We))), OnMaint),
          OnMaint =< Max).

% per area: capacity simultaneously in maintenance stays under the cap
fol forall(A,Max,We,CapOnMaint):
    area(A), area_max(A,Max), week(We),
    sum(set([U], (unit(U), in_area(U,A), in_maint(U,We))),
        lambda([Un], C where capacity(Un,C)), CapOnMaint)
    => (0 =< CapOnMaint, CapOnMaint =< Max).
""")
    return "\n".join(lines) + "\n"


OBJECTIVE_QUERY = "minimum(set([R], exists(W): reserve(W,R)), M), maximize(M)."


def schedule_feasible(inst: SchedulingInstance, starts: dict) -> bool:
    """Direct re-statement of all seven constraint families over one
    start-week assignment {maintenance: B}; independent of the solver."""
    spans = {}
    for m, b in starts.items():
        e = b + inst.duration[m] - 1
        if b < 1 or e > inst.weeks:
            return False
        spans[m] = (b, e)
    for (u, bp, ep) in inst.prohibited:
        for m, (b, e) in spans.items():
            if inst.maint_unit[m] == u and not (e < bp or ep < b):
                return False
    for (m1, m2, pre, post) in inst.non_simult:
        if m1 in spans and m2 in spans:
            b1, e1 = spans[m1]
            b2, e2 = spans[m2]
            if not (b2 > e1 + post or b1 > e2 + pre):
                return False
    for (m1, m2) in inst.simult:
        if m1 in spans and m2 in spans:
            b1, e1 = spans[m1]
            b2, e2 = spans[m2]
            if not ((b1 <= b2 and e2 <= e1) or (b2 <= b1 and e1 <= e2)):
                return False
    for m1, (b1, e1) in spans.items():
        for m2, (b2, e2) in spans.items():
            if m1 < m2 and inst.maint_unit[m1] == inst.maint_unit[m2]:
                if not (e1 < b2 or e2 < b1):
                    return False
    for w in range(1, inst.weeks + 1):
        in_maint = {
            inst.maint_unit[m] for m, (b, e) in spans.items() if b <= w <= e
        }
        for p, cap in inst.plant_max.items():
            if sum(1 for u in in_maint if inst.unit_plant[u] == p) > cap:
                return False
        for a, cap in inst.area_max.items():
            total = sum(
                inst.capacity[u] for u in in_maint
                if inst.plant_area[inst.unit_plant[u]] == a
            )
            if total > cap:
                return False
    return True


def min_reserve(inst: SchedulingInstance, starts: dict) -> int:
    worst = None
    total = inst.total_capacity
    spans = {m: (b, b + inst.duration[m] - 1) for m, b in starts.items()}
    for w in range(1, inst.weeks + 1):
        in_maint = {
            inst.maint_unit[m] for m, (b, e) in spans.items() if b <= w <= e
        }
        r = total - inst.peakload[w] - sum(inst.capacity[u] for u in in_maint)
        worst = r if worst is None else min(worst, r)
    return worst


def reference_optimum(inst: SchedulingInstance):
    """Exhaustive search over start-week tuples with incremental pruning;
    returns the maximal minimal weekly reserve, or 'unsat'."""
    maints = sorted(inst.maint_unit)
    windows = {}
    for m in maints:
        d = inst.duration[m]
        u = inst.maint_unit[m]
        opts = []
        for b in range(1, inst.weeks - d + 2):
            e = b + d - 1
            if any(uu == u and not (e < bp or ep < b)
                   for (uu, bp, ep) in inst.prohibited):
                continue
            opts.append(b)
        windows[m] = opts
    best = [None]
    starts = {}

    def feasible_so_far(m):
        b = starts[m]
        e = b + inst.duration[m] - 1
        u = inst.maint_unit[m]
        for (m1, m2, pre, post) in inst.non_simult:
            other = m2 if m1 == m else (m1 if m2 == m else None)
            if other in starts:
                b1, e1 = (starts[m1], starts[m1] + inst.duration[m1] - 1)
                b2, e2 = (starts[m2], starts[m2] + inst.duration[m2] - 1)
                if not (b2 > e1 + post or b1 > e2 + pre):
                    return False
        for (m1, m2) in inst.simult:
            other = m2 if m1 == m else (m1 if m2 == m else None)
            if other in starts:
                b1, e1 = (starts[m1], starts[m1] + inst.duration[m1] - 1)
                b2, e2 = (starts[m2], starts[m2] + inst.duration[m2] - 1)
                if not ((b1 <= b2 and e2 <= e1) or (b2 <= b1 and e1 <= e2)):
                    return False
        for m2, b2 in starts.items():
            if m2 != m and inst.maint_unit[m2] == u:
                e2 = b2 + inst.duration[m2] - 1
                if not (e < b2 or e2 < b):
                    return False
        for w in range(b, e + 1):
            in_maint = {
                inst.maint_unit[mm]
                for mm, bb in starts.items()
                if bb <= w <= bb + inst.duration[mm] - 1
            }
            p = inst.unit_plant[u]
            if sum(1 for uu in in_maint if inst.unit_plant[uu] == p) > inst.plant_max[p]:
                return False
            a = inst.plant_area[p]
            cap = sum(
                inst.capacity[uu] for uu in in_maint
                if inst.plant_area[inst.unit_plant[uu]] == a
            )
            if cap > inst.area_max[a]:
                return False
        return True

    def dfs(i):
        if i == len(maints):
            val = min_reserve(inst, starts)
            if best[0] is None or val > best[0]:
                best[0] = val
            return
        m = maints[i]
        for b in windows[m]:
            starts[m] = b
            if feasible_so_far(m):
                dfs(i + 1)
            del starts[m]

    dfs(0)
    return "unsat" if best[0] is None else best[0]
