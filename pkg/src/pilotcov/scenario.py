"""Simulation scenario and ground-truth variance generation.

The base station estimates the channel statistics of all K users (own cell
plus interferers) on M antennas.  All covariance matrices are diagonal, so
the ground truth is fully described by an M x K matrix of per-antenna,
per-user variances.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import InvalidProfileError

__all__ = [
    "ScenarioConfig",
    "CovarianceSet",
    "UserGrouping",
    "Uniform",
    "BandLimited",
    "RandomSparse",
    "ProfileKind",
    "generate_covariance_set",
    "genie_covariances",
]


@dataclass(frozen=True)
class ScenarioConfig:
    """Dimensions and noise level of one uplink training scenario.

    M:              base-station antennas
    K:              total users, own cell plus neighbouring cells
    Ttr:            orthonormal pilot sequences per training phase
    sigma_v2:       noise variance (linear scale), assumed known
    num_cells:      number of cells contributing users
    users_per_cell: users per cell; num_cells * users_per_cell == K
    seed:           base RNG seed for everything derived from this scenario
    """

    M: int
    K: int
    Ttr: int
    sigma_v2: float
    num_cells: int = 1
    users_per_cell: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.M < 1:
            raise ValueError(f"M must be >= 1, got {self.M}")
        if self.K < 2:
            raise ValueError(f"K must be >= 2, got {self.K}")
        if not 1 <= self.Ttr <= self.K:
            raise ValueError(f"Ttr must be in [1, K={self.K}], got {self.Ttr}")
        if self.sigma_v2 < 0:
            raise ValueError(f"sigma_v2 must be >= 0, got {self.sigma_v2}")
        if self.num_cells < 1:
            raise ValueError(f"num_cells must be >= 1, got {self.num_cells}")
        if self.users_per_cell is None:
            if self.K % self.num_cells != 0:
                raise ValueError(
                    f"K={self.K} is not divisible by num_cells={self.num_cells}"
                )
            object.__setattr__(self, "users_per_cell", self.K // self.num_cells)
        if self.num_cells * self.users_per_cell != self.K:
            raise ValueError(
                f"num_cells * users_per_cell = "
                f"{self.num_cells * self.users_per_cell} != K = {self.K}"
            )

    def grouping(self) -> "UserGrouping":
        """Contiguous cell assignment: users [0, K_C) in cell 0 and so on."""
        return UserGrouping.contiguous(self.num_cells, self.users_per_cell)


@dataclass(frozen=True)
class UserGrouping:
    """Cell membership of every user (balanced cells)."""

    cell_of_user: np.ndarray

    def __post_init__(self) -> None:
        cells = np.asarray(self.cell_of_user, dtype=int)
        object.__setattr__(self, "cell_of_user", cells)
        if cells.ndim != 1 or cells.size == 0:
            raise ValueError("cell_of_user must be a non-empty 1-D vector")
        counts = np.bincount(cells, minlength=cells.max() + 1)
        if cells.min() < 0 or np.any(counts != counts[0]):
            raise ValueError("every cell must contain the same number of users")

    @classmethod
    def contiguous(cls, num_cells: int, users_per_cell: int) -> "UserGrouping":
        return cls(np.repeat(np.arange(num_cells), users_per_cell))

    @property
    def num_users(self) -> int:
        return self.cell_of_user.size

    @property
    def num_cells(self) -> int:
        return int(self.cell_of_user.max()) + 1

    @property
    def users_per_cell(self) -> int:
        return self.num_users // self.num_cells

    def members(self, cell: int) -> np.ndarray:
        """Indices of the users in `cell`."""
        return np.flatnonzero(self.cell_of_user == cell)


@dataclass(frozen=True)
class CovarianceSet:
    """Diagonals of all user covariance matrices, stacked as columns.

    C[m, k] is the variance of the channel coefficient of user k at
    antenna m.  An all-zero column is permitted only for explicitly
    constructed edge cases; the generators never produce one.
    """

    C: np.ndarray

    def __post_init__(self) -> None:
        C = np.asarray(self.C, dtype=float)
        object.__setattr__(self, "C", C)
        if C.ndim != 2:
            raise ValueError(f"C must be 2-D (M x K), got shape {C.shape}")
        if not np.all(np.isfinite(C)):
            raise ValueError("C must be finite")
        if np.any(C < 0):
            raise ValueError("C must be entry-wise nonnegative")

    @property
    def M(self) -> int:
        return self.C.shape[0]

    @property
    def K(self) -> int:
        return self.C.shape[1]


@dataclass(frozen=True)
class Uniform:
    """Flat variance profile: every antenna sees the same power `power`."""

    power: float = 1.0


@dataclass(frozen=True)
class BandLimited:
    """Contiguous (wrapping) support of `width` antennas with a raised-cosine
    taper, mimicking limited angular support in the beamspace domain.

    Per-user support centers are drawn uniformly unless `center` is fixed.
    Per-user total power is drawn log-uniformly over `dynamic_range_db`
    below `power`, emulating the path-loss disparity between own-cell
    users and interferers.
    """

    width: int
    power: float = 1.0
    center: int | None = None
    dynamic_range_db: float = 20.0


@dataclass(frozen=True)
class RandomSparse:
    """Random antenna support covering a `support_fraction` of the array;
    each column sums exactly to `total_power`."""

    support_fraction: float
    total_power: float = 1.0


ProfileKind = Union[Uniform, BandLimited, RandomSparse]


def _bandlimited_column(
    M: int, width: int, center: int, total_power: float
) -> np.ndarray:
    idx = (center - width // 2 + np.arange(width)) % M
    # half-sample offset keeps every tap strictly positive, including width=1
    taper = 1.0 - np.cos(2.0 * np.pi * (np.arange(width) + 0.5) / width)
    col = np.zeros(M)
    col[idx] = taper / taper.sum() * total_power
    return col


def generate_covariance_set(
    config: ScenarioConfig, profile: ProfileKind, rng: np.random.Generator
) -> CovarianceSet:
    """Draw the ground-truth M x K variance matrix for all users.

    Deterministic given (config, profile, rng state).  Column sums of the
    BandLimited and RandomSparse profiles equal the drawn per-user powers.
    """
    M, K = config.M, config.K
    if isinstance(profile, Uniform):
        if profile.power < 0:
            raise InvalidProfileError(f"power must be >= 0, got {profile.power}")
        return CovarianceSet(np.full((M, K), float(profile.power)))

    if isinstance(profile, BandLimited):
        if not 1 <= profile.width <= M:
            raise InvalidProfileError(
                f"width must be in [1, M={M}], got {profile.width}"
            )
        if profile.power <= 0:
            raise InvalidProfileError(f"power must be > 0, got {profile.power}")
        if profile.dynamic_range_db < 0:
            raise InvalidProfileError("dynamic_range_db must be >= 0")
        C = np.zeros((M, K))
        for k in range(K):
            center = (
                int(rng.integers(0, M)) if profile.center is None else profile.center
            )
            power_k = profile.power * 10.0 ** (
                -rng.uniform(0.0, profile.dynamic_range_db) / 10.0
            )
            C[:, k] = _bandlimited_column(M, profile.width, center, power_k)
        return CovarianceSet(C)

    if isinstance(profile, RandomSparse):
        if not 0.0 < profile.support_fraction <= 1.0:
            raise InvalidProfileError(
                f"support_fraction must be in (0, 1], got {profile.support_fraction}"
            )
        if profile.total_power <= 0:
            raise InvalidProfileError(
                f"total_power must be > 0, got {profile.total_power}"
            )
        n_nz = max(1, round(profile.support_fraction * M))
        C = np.zeros((M, K))
        for k in range(K):
            support = rng.choice(M, size=n_nz, replace=False)
            weights = rng.random(n_nz) + 1e-12
            C[support, k] = weights / weights.sum() * profile.total_power
        return CovarianceSet(C)

    raise InvalidProfileError(f"unknown profile kind: {profile!r}")


def genie_covariances(cov: CovarianceSet) -> CovarianceSet:
    """Genie baseline: hand the true covariances straight through."""
    return CovarianceSet(cov.C.copy())
