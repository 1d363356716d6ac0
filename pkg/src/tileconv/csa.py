"""Tiling analysis for cache-blocked direct convolution.

Given a layer shape and a machine description, this module sizes one
L1-resident tile triple (input windows, filters, outputs), distributes
tiles over L2/L3 via the K2/K3 counts, and picks the cheaper of the two
tile schedules (input-stationary vs. weight-stationary) with an analytic
line-traffic cost model.

Everything here is exact integer arithmetic: cache budgets are floored
rationals, divisions of tile counts are ceilings (edge tiles exist), and
the returned plan provably satisfies the capacity constraints it was
solved under.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional

from .core import ConvShape, MachineSpec, ceildiv, output_dims


class Schedule(str, Enum):
    """Which tile kind stays resident in L1 while the other streams past."""

    INPUT_STATIONARY = "IS"
    WEIGHT_STATIONARY = "WS"

    @classmethod
    def parse(cls, text: str) -> "Schedule":
        key = text.strip().upper()
        for sched in cls:
            if key in (sched.value, sched.name):
                return sched
        raise ValueError(f"unknown schedule {text!r} (expected IS or WS)")


class PlanError(ValueError):
    """No tiling satisfies a cache-capacity constraint."""


class UnplannableL1(PlanError):
    """Even a single-channel tile triple exceeds the usable L1 space."""


class UnplannableL2(PlanError):
    """K2 = 1 still exceeds the usable L2 space."""


class UnplannableL3(PlanError):
    """K3 = 1 still exceeds the usable L3 space."""


@dataclass(frozen=True)
class TileSizes:
    """Byte sizes of the L1 tile triple and the per-tile extents."""

    in_t_bytes: int
    fs_t_bytes: int
    out_t_bytes: int
    n_c: int
    n_win: int
    n_f: int

    @property
    def total_bytes(self) -> int:
        return self.in_t_bytes + self.fs_t_bytes + self.out_t_bytes


@dataclass(frozen=True)
class TileCounts:
    """How many tiles of each kind one convolution needs, per channel set."""

    num_in_t: int
    num_fs_t: int
    num_out_t: int
    num_channel_sets: int


@dataclass(frozen=True)
class CostBreakdown:
    """Line-access counts per level and the total cycle estimate."""

    n_dram1: int  # cold misses: first touch of every tile
    n_dram2: int  # reloads from DRAM after capacity eviction
    n_l3: int
    n_l2: int
    c_total: int


@dataclass(frozen=True)
class TilingStrategy:
    """Complete plan for one convolution on one machine."""

    sizes: TileSizes
    counts: TileCounts
    k2: int
    k3: int
    schedule: Schedule
    cost_is: CostBreakdown
    cost_ws: CostBreakdown

    @property
    def n_c(self) -> int:
        return self.sizes.n_c

    def cost(self, schedule: Optional[Schedule] = None) -> CostBreakdown:
        sched = self.schedule if schedule is None else schedule
        return self.cost_is if sched is Schedule.INPUT_STATIONARY else self.cost_ws


def halving_sequence(start: int) -> Iterator[int]:
    """start, start//2, ..., 1 (each value at least 1, strictly decreasing)."""
    value = start
    while True:
        yield value
        if value == 1:
            return
        value = max(1, value // 2)


def tile_sizes(shape: ConvShape, machine: MachineSpec, n_c: int) -> TileSizes:
    """Tile byte sizes for a given channel-set width n_c."""
    if not 1 <= n_c <= shape.in_c:
        raise ValueError(f"n_c={n_c} out of range [1, {shape.in_c}]")
    area = shape.f_h * shape.f_w
    dt = shape.dt_bytes
    return TileSizes(
        in_t_bytes=machine.nwin * n_c * area * dt,
        fs_t_bytes=machine.nf * n_c * area * dt,
        out_t_bytes=machine.nwin * machine.nf * dt,
        n_c=n_c,
        n_win=machine.nwin,
        n_f=machine.nf,
    )


def tile_counts(shape: ConvShape, machine: MachineSpec, n_c: int) -> TileCounts:
    """Tile counts per channel set; ceilings, since edge tiles are smaller."""
    out_h, out_w = output_dims(shape)
    num_in_t = ceildiv(out_h * out_w, machine.nwin)
    num_fs_t = ceildiv(shape.out_c, machine.nf)
    return TileCounts(
        num_in_t=num_in_t,
        num_fs_t=num_fs_t,
        num_out_t=num_in_t * num_fs_t,
        num_channel_sets=ceildiv(shape.in_c, n_c),
    )


def solve_nc(shape: ConvShape, machine: MachineSpec) -> int:
    """Largest halving value of in_c whose tile triple fits the L1 budget.

    Starts at in_c and halves (floor at 1) until the triple fits; raises
    UnplannableL1 when even one channel per tile is too big.
    """
    budget = machine.l1_budget
    for n_c in halving_sequence(shape.in_c):
        if tile_sizes(shape, machine, n_c).total_bytes <= budget:
            return n_c
    raise UnplannableL1(
        f"tile triple exceeds L1 budget {budget} even at n_c=1 "
        f"(needs {tile_sizes(shape, machine, 1).total_bytes} bytes)")


def _stationary_moving(sizes: TileSizes, counts: TileCounts,
                       schedule: Schedule) -> tuple[int, int, int, int]:
    """(stationary count, stationary bytes, moving count, moving bytes).

    IS keeps an input tile stationary and streams filter tiles; WS swaps the
    roles. K2 counts moving tiles in L2, K3 counts stationary tiles in L3.
    """
    if schedule is Schedule.INPUT_STATIONARY:
        return counts.num_in_t, sizes.in_t_bytes, counts.num_fs_t, sizes.fs_t_bytes
    return counts.num_fs_t, sizes.fs_t_bytes, counts.num_in_t, sizes.in_t_bytes


def solve_k2_k3(sizes: TileSizes, counts: TileCounts, machine: MachineSpec,
                schedule: Schedule) -> tuple[int, int]:
    """Largest halving values of K2 then K3 that fit the L2/L3 budgets.

    K2 starts at the moving-tile count and halves until
        stationary + K2 * (moving + out) <= L2 budget;
    K3 then starts at the stationary-tile count and halves until
        K3 * stationary + K2 * moving + K2 * K3 * out <= L3 budget.
    """
    stat_n, stat_b, mov_n, mov_b = _stationary_moving(sizes, counts, schedule)
    out_b = sizes.out_t_bytes

    k2 = None
    for cand in halving_sequence(mov_n):
        if stat_b + cand * (mov_b + out_b) <= machine.l2_budget:
            k2 = cand
            break
    if k2 is None:
        raise UnplannableL2(
            f"{schedule.value}: stationary tile plus one moving tile exceeds "
            f"L2 budget {machine.l2_budget}")

    for cand in halving_sequence(stat_n):
        if cand * stat_b + k2 * mov_b + k2 * cand * out_b <= machine.l3_budget:
            return k2, cand
    raise UnplannableL3(
        f"{schedule.value}: K3=1 with K2={k2} exceeds L3 budget {machine.l3_budget}")


def cost_model(sizes: TileSizes, counts: TileCounts, machine: MachineSpec,
               schedule: Schedule, k2: int, k3: int) -> CostBreakdown:
    """Line-traffic estimate for one schedule with K2/K3 already solved.

    Counts L2, L3 and DRAM line accesses; L1 hits are free and output-tile
    reload traffic is excluded (it is identical for both schedules).  Tile
    counts that get divided are ceilings and fit terms clamp at zero.
    """
    stat_n, stat_b, mov_n, mov_b = _stationary_moving(sizes, counts, schedule)
    csets = counts.num_channel_sets

    def lines(nbytes: int) -> int:
        return ceildiv(nbytes, machine.line_bytes)

    # Cold misses: every tile of both kinds, once per channel set.  Symmetric
    # in the two tile kinds, so identical for IS and WS.
    n_dram1 = csets * (counts.num_in_t * lines(sizes.in_t_bytes)
                       + counts.num_fs_t * lines(sizes.fs_t_bytes))

    mov_sets = ceildiv(mov_n, k2)   # sweeps of K2 moving tiles
    stat_sets = ceildiv(stat_n, k3)  # groups of K3 stationary tiles

    # Moving tiles that spill L2 must re-enter from DRAM once per extra
    # stationary group: by then L3 holds only the current working set.
    mov_fitmin = min(mov_sets - 1, 1)
    stat_fit = max(stat_sets - 1, 0)
    n_dram2 = csets * mov_fitmin * stat_fit * mov_n * lines(mov_b)

    # Each extra sweep of moving tiles re-reads every stationary tile from L3.
    mov_fit = max(mov_sets - 1, 0)
    n_l3 = csets * mov_fit * stat_n * lines(stat_b)

    # Every stationary tile re-reads the moving tiles from L2; the first
    # arrival came straight from memory, so one pass is discharged.
    n_l2 = csets * (stat_n - 1) * mov_n * lines(mov_b)

    c_total = (machine.cost_dram * (n_dram1 + n_dram2)
               + machine.cost_l3 * n_l3
               + machine.cost_l2 * n_l2)
    return CostBreakdown(n_dram1=n_dram1, n_dram2=n_dram2, n_l3=n_l3,
                         n_l2=n_l2, c_total=c_total)


def plan(shape: ConvShape, machine: MachineSpec,
         force_schedule: Optional[Schedule] = None) -> TilingStrategy:
    """Full tiling strategy: n_c, K2/K3 and the cheaper schedule.

    Both schedules are solved and costed; the plan keeps the K2/K3 of the
    chosen one (the cheaper, ties to input-stationary) and reports both cost
    breakdowns.  force_schedule overrides the cost-based choice.
    """
    n_c = solve_nc(shape, machine)
    sizes = tile_sizes(shape, machine, n_c)
    counts = tile_counts(shape, machine, n_c)

    k_is = solve_k2_k3(sizes, counts, machine, Schedule.INPUT_STATIONARY)
    k_ws = solve_k2_k3(sizes, counts, machine, Schedule.WEIGHT_STATIONARY)
    cost_is = cost_model(sizes, counts, machine, Schedule.INPUT_STATIONARY, *k_is)
    cost_ws = cost_model(sizes, counts, machine, Schedule.WEIGHT_STATIONARY, *k_ws)

    if force_schedule is not None:
        schedule = force_schedule
    elif cost_ws.c_total < cost_is.c_total:
        schedule = Schedule.WEIGHT_STATIONARY
    else:
        schedule = Schedule.INPUT_STATIONARY

    k2, k3 = k_is if schedule is Schedule.INPUT_STATIONARY else k_ws
    return TilingStrategy(sizes=sizes, counts=counts, k2=k2, k3=k3,
                          schedule=schedule, cost_is=cost_is, cost_ws=cost_ws)


def strategy_to_dict(strategy: TilingStrategy) -> dict:
    """JSON-friendly view of a plan, as emitted by the CLI."""
    def cost_dict(c: CostBreakdown) -> dict:
        return {"n_dram1": c.n_dram1, "n_dram2": c.n_dram2, "n_l3": c.n_l3,
                "n_l2": c.n_l2, "c_total": c.c_total}

    return {
        "n_c": strategy.n_c,
        "k2": strategy.k2,
        "k3": strategy.k3,
        "schedule": strategy.schedule.value,
        "sizes": {
            "in_t_bytes": strategy.sizes.in_t_bytes,
            "fs_t_bytes": strategy.sizes.fs_t_bytes,
            "out_t_bytes": strategy.sizes.out_t_bytes,
            "n_win": strategy.sizes.n_win,
            "n_f": strategy.sizes.n_f,
        },
        "counts": {
            "num_in_t": strategy.counts.num_in_t,
            "num_fs_t": strategy.counts.num_fs_t,
            "num_out_t": strategy.counts.num_out_t,
            "num_channel_sets": strategy.counts.num_channel_sets,
        },
        "cost_is": cost_dict(strategy.cost_is),
        "cost_ws": cost_dict(strategy.cost_ws),
    }
