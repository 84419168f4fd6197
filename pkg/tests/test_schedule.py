import numpy as np
import pytest

from pilotcov import (
    Allocation,
    IdentifiabilityError,
    InfeasibleConstraintError,
    Schedule,
    UserGrouping,
    load_schedule,
    make_example_schedule_442,
    make_random_schedule,
    min_schedule_length,
    rank_and_condition,
    save_schedule,
)


class TestAllocation:
    def test_rows_must_be_one_hot(self):
        with pytest.raises(ValueError):
            Allocation(np.array([[1, 1], [0, 1]]))
        with pytest.raises(ValueError):
            Allocation(np.array([[0, 0], [0, 1]]))
        with pytest.raises(ValueError):
            Allocation(np.array([[0.5, 0.5], [0, 1]]))

    def test_from_pilot_indices_roundtrip(self):
        alloc = Allocation.from_pilot_indices(np.array([2, 0, 1, 2]), 3)
        np.testing.assert_array_equal(alloc.pilot_of_user, [2, 0, 1, 2])
        assert alloc.assignment.shape == (4, 3)


class TestMinScheduleLength:
    def test_four_users_two_pilots(self):
        assert min_schedule_length(4, 2) == 3

    def test_seventy_users_eleven_pilots(self):
        assert min_schedule_length(70, 11) == 7

    @pytest.mark.parametrize("Ttr", [2, 3, 4, 5, 6])
    def test_one_extra_user_needs_two_allocations(self, Ttr):
        assert min_schedule_length(Ttr + 1, Ttr) == 2

    def test_single_pilot_impossible(self):
        with pytest.raises(IdentifiabilityError):
            min_schedule_length(4, 1)


class TestExampleSchedule442:
    def test_exact_allocations(self):
        sched = make_example_schedule_442()
        expected = [
            [[1, 0], [1, 0], [0, 1], [0, 1]],
            [[1, 0], [0, 1], [1, 0], [0, 1]],
            [[1, 0], [0, 1], [0, 1], [1, 0]],
        ]
        assert sched.N == 3
        for alloc, exp in zip(sched.allocations, expected):
            np.testing.assert_array_equal(alloc.assignment, np.array(exp))
        assert sched.compound.shape == (4, 6)

    def test_rank_and_condition(self):
        rank, cond = rank_and_condition(make_example_schedule_442())
        assert rank == 4
        assert abs(cond - np.sqrt(3.0)) < 1e-12


class TestRankAndCondition:
    def test_repeated_allocation_rank_is_pilot_count(self):
        alloc = Allocation.from_pilot_indices(np.array([0, 1, 2, 0, 1]), 3)
        sched = Schedule((alloc,) * 4)
        rank, _ = rank_and_condition(sched)
        assert rank == 3

    def test_structural_bound_below_user_count(self):
        # K=6, Ttr=3, N=2: rank can reach at most 3 + 2 = 5 < 6
        rng = np.random.default_rng(0)
        grouping = UserGrouping.contiguous(3, 2)
        for _ in range(20):
            sched = make_random_schedule(6, 3, 2, grouping, rng,
                                         require_full_rank=False)
            rank, _ = rank_and_condition(sched)
            assert rank <= 5

    def test_rank_bound_over_random_grid(self):
        rng = np.random.default_rng(1)
        for K, Ttr, cells in [(6, 3, 3), (8, 4, 2), (12, 5, 3), (10, 4, 5)]:
            grouping = UserGrouping.contiguous(cells, K // cells)
            for N in (1, 2, 4):
                sched = make_random_schedule(K, Ttr, N, grouping, rng,
                                             require_full_rank=False)
                rank, _ = rank_and_condition(sched)
                assert rank <= Ttr + (N - 1) * (Ttr - 1)


class TestRandomSchedule:
    def test_single_cell_full_pilots_gives_permutation(self):
        rng = np.random.default_rng(2)
        grouping = UserGrouping.contiguous(1, 4)
        sched = make_random_schedule(4, 4, 1, grouping, rng)
        A = sched.allocations[0].assignment
        np.testing.assert_array_equal(A.sum(axis=0), np.ones(4))
        np.testing.assert_array_equal(A.sum(axis=1), np.ones(4))

    def test_paired_cells_force_column_sums(self):
        # two cells of two users, two pilots: each pilot carries one user
        # per cell, so both column sums are 2 in every interval
        rng = np.random.default_rng(3)
        grouping = UserGrouping.contiguous(2, 2)
        sched = make_random_schedule(4, 2, 3, grouping, rng,
                                     require_full_rank=False)
        for alloc in sched.allocations:
            np.testing.assert_array_equal(alloc.assignment.sum(axis=0), [2, 2])

    def test_same_cell_users_get_distinct_pilots(self):
        rng = np.random.default_rng(4)
        grouping = UserGrouping.contiguous(3, 4)
        sched = make_random_schedule(12, 5, 6, grouping, rng)
        for alloc in sched.allocations:
            pilots = alloc.pilot_of_user
            for cell in range(3):
                cell_pilots = pilots[grouping.members(cell)]
                assert len(set(cell_pilots)) == 4
            # all users served: the interval's columns sum to K in total
            assert alloc.assignment.sum() == 12

    def test_full_rank_enforced_by_default(self):
        rng = np.random.default_rng(5)
        grouping = UserGrouping.contiguous(7, 10)
        sched = make_random_schedule(70, 11, 9, grouping, rng)
        rank, _ = rank_and_condition(sched)
        assert rank == 70

    def test_too_many_users_per_cell_rejected(self):
        grouping = UserGrouping.contiguous(2, 4)
        with pytest.raises(InfeasibleConstraintError):
            make_random_schedule(8, 3, 5, grouping, np.random.default_rng(0))

    def test_cell_saturating_pilots_never_identifiable(self):
        # when every cell occupies all pilots, differences of cell
        # indicators annihilate every allocation
        grouping = UserGrouping.contiguous(2, 3)
        with pytest.raises(IdentifiabilityError):
            make_random_schedule(6, 3, 10, grouping, np.random.default_rng(0))


class TestScheduleIO:
    def test_roundtrip_preserves_compound(self, tmp_path):
        rng = np.random.default_rng(6)
        grouping = UserGrouping.contiguous(2, 3)
        sched = make_random_schedule(6, 4, 3, grouping, rng)
        path = tmp_path / "sched.txt"
        save_schedule(sched, str(path))
        loaded = load_schedule(str(path), Ttr=4)
        np.testing.assert_array_equal(loaded.compound, sched.compound)

    def test_text_format_one_line_per_interval(self, tmp_path):
        sched = make_example_schedule_442()
        path = tmp_path / "sched.txt"
        save_schedule(sched, str(path))
        lines = path.read_text().splitlines()
        assert lines == ["0 0 1 1", "0 1 0 1", "0 1 1 0"]

    def test_load_infers_pilot_count(self, tmp_path):
        path = tmp_path / "sched.txt"
        path.write_text("0 1 2\n2 1 0\n")
        sched = load_schedule(str(path))
        assert sched.Ttr == 3 and sched.K == 3 and sched.N == 2
