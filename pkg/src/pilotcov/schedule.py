"""Pilot allocation schedules and their identifiability properties.

A single allocation assigns each of the K users one of Ttr orthonormal
pilots (a one-hot K x Ttr matrix).  Reusing the same allocation in every
coherence interval makes the variance-reconstruction problem ill-posed;
iterating through a schedule of distinct allocations makes the compound
(horizontally stacked) allocation matrix full row rank and the problem
well-conditioned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import IdentifiabilityError, InfeasibleConstraintError
from .scenario import UserGrouping

__all__ = [
    "Allocation",
    "Schedule",
    "min_schedule_length",
    "make_random_schedule",
    "make_example_schedule_442",
    "rank_and_condition",
    "save_schedule",
    "load_schedule",
]


@dataclass(frozen=True)
class Allocation:
    """One-hot pilot assignment for a single coherence interval."""

    assignment: np.ndarray  # (K, Ttr) with entries in {0, 1}

    def __post_init__(self) -> None:
        A = np.asarray(self.assignment, dtype=float)
        object.__setattr__(self, "assignment", A)
        if A.ndim != 2:
            raise ValueError(f"assignment must be 2-D (K x Ttr), got {A.shape}")
        if not np.all((A == 0) | (A == 1)):
            raise ValueError("assignment entries must be 0 or 1")
        if not np.all(A.sum(axis=1) == 1):
            raise ValueError("every user must be assigned exactly one pilot")

    @classmethod
    def from_pilot_indices(cls, pilots: np.ndarray, Ttr: int) -> "Allocation":
        pilots = np.asarray(pilots, dtype=int)
        if np.any(pilots < 0) or np.any(pilots >= Ttr):
            raise ValueError(f"pilot indices must lie in [0, {Ttr})")
        A = np.zeros((pilots.size, Ttr))
        A[np.arange(pilots.size), pilots] = 1.0
        return cls(A)

    @property
    def K(self) -> int:
        return self.assignment.shape[0]

    @property
    def Ttr(self) -> int:
        return self.assignment.shape[1]

    @property
    def pilot_of_user(self) -> np.ndarray:
        return np.argmax(self.assignment, axis=1)


@dataclass(frozen=True)
class Schedule:
    """Ordered sequence of allocations plus their horizontal concatenation."""

    allocations: tuple[Allocation, ...]
    compound: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        allocs = tuple(self.allocations)
        if not allocs:
            raise ValueError("schedule must contain at least one allocation")
        shapes = {(a.K, a.Ttr) for a in allocs}
        if len(shapes) != 1:
            raise ValueError("all allocations must share the same (K, Ttr)")
        object.__setattr__(self, "allocations", allocs)
        object.__setattr__(
            self, "compound", np.hstack([a.assignment for a in allocs])
        )

    @property
    def K(self) -> int:
        return self.allocations[0].K

    @property
    def Ttr(self) -> int:
        return self.allocations[0].Ttr

    @property
    def N(self) -> int:
        return len(self.allocations)


def min_schedule_length(K: int, Ttr: int) -> int:
    """Smallest number of distinct allocations that can make the compound
    matrix full row rank when every user is served in every interval.

    With one pilot there is nothing to permute: serving all users each
    interval then pins the compound rank at 1.
    """
    if K < 2:
        raise ValueError(f"K must be >= 2, got {K}")
    if Ttr < 1:
        raise ValueError(f"Ttr must be >= 1, got {Ttr}")
    if Ttr == 1:
        raise IdentifiabilityError(
            "with a single pilot and all users served each interval the "
            "compound allocation has rank 1; at least two pilots are needed"
        )
    return math.ceil((K - 1) / (Ttr - 1))


def _draw_allocation(
    K: int, Ttr: int, grouping: UserGrouping, rng: np.random.Generator
) -> Allocation:
    pilots = np.empty(K, dtype=int)
    for cell in range(grouping.num_cells):
        members = grouping.members(cell)
        # uniform random injection: members of one cell get distinct pilots
        pilots[members] = rng.permutation(Ttr)[: members.size]
    return Allocation.from_pilot_indices(pilots, Ttr)


def make_random_schedule(
    K: int,
    Ttr: int,
    N: int,
    grouping: UserGrouping,
    rng: np.random.Generator,
    *,
    max_redraws: int = 100,
    require_full_rank: bool | None = None,
) -> Schedule:
    """Draw N random allocations with same-cell users on distinct pilots.

    When `require_full_rank` (default: N is at least the minimum schedule
    length), rank-deficient draws are rejected and redrawn up to
    `max_redraws` times before raising.  Pass `require_full_rank=False`
    to obtain a single unfiltered draw, e.g. to measure how often random
    schedules happen to be identifiable.
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if grouping.num_users != K:
        raise ValueError(f"grouping covers {grouping.num_users} users, expected {K}")
    if grouping.users_per_cell > Ttr:
        raise InfeasibleConstraintError(
            f"{grouping.users_per_cell} users per cell cannot use distinct "
            f"pilots when only Ttr={Ttr} pilots are available"
        )
    if require_full_rank is None:
        require_full_rank = Ttr >= 2 and N >= min_schedule_length(K, Ttr)
    if require_full_rank and grouping.num_cells >= 2 and grouping.users_per_cell == Ttr:
        # each cell then uses every pilot exactly once per interval, so
        # differences of cell indicators annihilate every allocation and
        # the compound rank is capped at K - (num_cells - 1)
        raise IdentifiabilityError(
            f"with {grouping.users_per_cell} users per cell and Ttr={Ttr} "
            f"every cell occupies all pilots each interval; the compound "
            f"rank can never reach K={K}"
        )

    for _ in range(max_redraws + 1):
        schedule = Schedule(
            tuple(_draw_allocation(K, Ttr, grouping, rng) for _ in range(N))
        )
        if not require_full_rank:
            return schedule
        rank, _ = rank_and_condition(schedule)
        if rank == K:
            return schedule
    raise IdentifiabilityError(
        f"no full-rank schedule found in {max_redraws + 1} draws "
        f"(K={K}, Ttr={Ttr}, N={N})"
    )


def make_example_schedule_442() -> Schedule:
    """The canonical 4-user, 2-pilot schedule of three distinct allocations.

    Its compound matrix has rank 4 and condition number sqrt(3).
    """
    pi1 = [[1, 0], [1, 0], [0, 1], [0, 1]]
    pi2 = [[1, 0], [0, 1], [1, 0], [0, 1]]
    pi3 = [[1, 0], [0, 1], [0, 1], [1, 0]]
    return Schedule(tuple(Allocation(np.array(p, dtype=float)) for p in (pi1, pi2, pi3)))


def rank_and_condition(schedule: Schedule) -> tuple[int, float]:
    """Numerical rank and condition number of the compound allocation.

    Singular values below max_dim * eps * s_max count as zero; the
    condition number is taken over the nonzero singular values.
    """
    s = np.linalg.svd(schedule.compound, compute_uv=False)
    tol = max(schedule.compound.shape) * np.finfo(float).eps * s[0]
    nonzero = s[s > tol]
    rank = int(nonzero.size)
    cond = float(nonzero[0] / nonzero[-1])
    # with one-hot rows every user is served each interval, so adding an
    # allocation raises the rank by at most Ttr - 1
    bound = schedule.Ttr + (schedule.N - 1) * (schedule.Ttr - 1)
    assert rank <= bound, f"rank {rank} exceeds structural bound {bound}"
    return rank, cond


def save_schedule(schedule: Schedule, path: str) -> None:
    """Write one line per interval: K space-separated pilot indices (0-based)."""
    lines = [
        " ".join(str(p) for p in alloc.pilot_of_user)
        for alloc in schedule.allocations
    ]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_schedule(path: str, Ttr: int | None = None) -> Schedule:
    """Read the text format written by `save_schedule`.

    If `Ttr` is omitted it is inferred as max pilot index + 1.
    """
    rows: list[list[int]] = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([int(tok) for tok in line.split()])
    if not rows:
        raise ValueError(f"empty schedule file: {path}")
    if len({len(r) for r in rows}) != 1:
        raise ValueError("all intervals must list the same number of users")
    if Ttr is None:
        Ttr = max(max(r) for r in rows) + 1
    return Schedule(
        tuple(Allocation.from_pilot_indices(np.array(r), Ttr) for r in rows)
    )
