import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurorate.dataset import (
    ExperimentPlan,
    TrialData,
    assemble,
    build_sequences,
    monte_carlo,
    plan_counts,
    read_dataset,
    sequences_per_trial,
    split_videos,
    table1_discrepancies,
    write_dataset,
    TABLE1_ROWS,
)
from neurorate.errors import FormatError, ValidationError
from neurorate.spectral import BrainRate
from neurorate.topomap import TopoMap


def dummy_stack(windows, grid=2, bands=1, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(windows, grid, bands and grid, bands)).astype(np.float32).astype(np.float64)


def dummy_rates(windows, seed=0):
    return 10.0 + np.arange(windows, dtype=float) + seed


def make_data(participants=3, videos=4, windows=12, seed=0):
    data = {}
    for p in range(participants):
        vids = {}
        for v in range(videos):
            vids[f"v{v:02d}"] = TrialData(
                maps=dummy_stack(windows, seed=100 * p + v),
                rates=dummy_rates(windows, seed=p),
                mode="mean",
            )
        data[f"p{p:02d}"] = vids
    return data


class TestBuildSequences:
    def test_paper_count(self):
        samples = build_sequences(dummy_stack(489), dummy_rates(489), z=7, video_id="v00", mode="mean")
        assert len(samples) == 482  # 489 - 7

    def test_eight_windows_single_sequence(self):
        samples = build_sequences(dummy_stack(8), dummy_rates(8), z=7, video_id="v00", mode="mean")
        assert len(samples) == 1
        s = samples[0]
        assert s.start_window == 0
        assert s.target == dummy_rates(8)[7]  # the 8th window's rate

    def test_seven_windows_too_few(self):
        with pytest.raises(ValidationError, match="z\\+1"):
            build_sequences(dummy_stack(7), dummy_rates(7), z=7, video_id="v00", mode="mean")

    def test_z_below_one(self):
        with pytest.raises(ValidationError, match=">= 1"):
            build_sequences(dummy_stack(8), dummy_rates(8), z=0, video_id="v00", mode="mean")

    def test_inputs_are_consecutive_views(self):
        stack = dummy_stack(10)
        samples = build_sequences(stack, dummy_rates(10), z=3, video_id="v00", mode="mean")
        assert len(samples) == 7
        for s in samples:
            assert np.shares_memory(s.inputs, stack)
            assert np.array_equal(s.inputs, stack[s.start_window : s.start_window + 3])

    def test_accepts_domain_objects(self):
        maps = [
            TopoMap(grid=np.full((2, 2, 1), float(i)), band_names=("delta",), trial_id="t1", start_index=16 * i)
            for i in range(5)
        ]
        rates = [BrainRate(value=10.0 + i, mode="mean") for i in range(5)]
        samples = build_sequences(maps, rates, z=2, participant_id="p00")
        assert len(samples) == 3
        assert samples[0].video_id == "t1"
        assert samples[0].target_mode == "mean"
        assert samples[0].target == 12.0

    def test_mixed_modes_rejected(self):
        rates = [BrainRate(10.0, "mean"), BrainRate(11.0, "sum"), BrainRate(12.0, "mean")]
        maps = dummy_stack(3)
        with pytest.raises(ValidationError, match="mix"):
            build_sequences(maps, rates, z=1, video_id="v0")

    def test_misaligned_lengths_rejected(self):
        with pytest.raises(ValidationError, match="rates"):
            build_sequences(dummy_stack(5), dummy_rates(4), z=2, video_id="v0", mode="mean")

    @settings(max_examples=30, deadline=None)
    @given(windows=st.integers(2, 60), z=st.integers(1, 59))
    def test_count_law(self, windows, z):
        if z + 1 > windows:
            with pytest.raises(ValidationError):
                build_sequences(dummy_stack(windows), dummy_rates(windows), z=z, video_id="v", mode="mean")
        else:
            samples = build_sequences(dummy_stack(windows), dummy_rates(windows), z=z, video_id="v", mode="mean")
            assert len(samples) == windows - z
            assert all(s.start_window + z <= windows - 1 for s in samples)


class TestSplitVideos:
    def test_forty_videos_28_6_6(self):
        ids = [f"v{i:02d}" for i in range(40)]
        split = split_videos(ids, seed=0)
        assert (len(split.train), len(split.validation), len(split.test)) == (28, 6, 6)
        assert set(split.train) | set(split.validation) | set(split.test) == set(ids)

    def test_deterministic(self):
        ids = [f"v{i}" for i in range(10)]
        assert split_videos(ids, seed=7) == split_videos(ids, seed=7)
        assert split_videos(ids, seed=7) != split_videos(ids, seed=8)

    def test_minimum_three_videos(self):
        split = split_videos(["a", "b", "c"], seed=0)
        assert sorted([len(split.train), len(split.validation), len(split.test)]) == [1, 1, 1]
        with pytest.raises(ValidationError, match="at least 3"):
            split_videos(["a", "b"], seed=0)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValidationError, match="unique"):
            split_videos(["a", "a", "b"], seed=0)


class TestPlanCounts:
    @pytest.mark.parametrize("participants", [1, 3, 5, 7])
    def test_table_rows_match_formula(self, participants):
        counts = plan_counts(participants)
        total, train, val, test = TABLE1_ROWS[participants]
        assert counts.total == total
        assert counts.train == train
        assert counts.validation == val
        assert counts.test == test

    def test_one_person_values(self):
        counts = plan_counts(1)
        assert counts.total == 19280  # 482 x 40
        assert (counts.train, counts.validation, counts.test) == (13496, 2892, 2892)

    def test_nine_person_discrepancy_detected(self):
        problems = table1_discrepancies()
        assert problems == [
            "9-person total: computed 173520 != published 177570",
            "9-person train: computed 121464 != published 125514",
        ]

    def test_sequences_per_trial(self):
        assert sequences_per_trial(489, 7) == 482
        with pytest.raises(ValidationError):
            sequences_per_trial(7, 7)


class TestAssemble:
    def test_within_subject_sizes(self):
        data = make_data(participants=1, videos=4, windows=12)
        plan = ExperimentPlan(kind="within", participants=1, seed=0)
        assert plan.repetitions == 2
        split = assemble(plan, data, repetition=0, z=2)
        per_video = 12 - 2
        assert len(split.train) == 2 * per_video  # 4 videos -> 2/1/1 split
        assert len(split.validation) == per_video
        assert len(split.test) == per_video
        split.check_video_leakage()

    def test_across_subject_concatenation(self):
        data = make_data(participants=4, videos=4, windows=12)
        plan = ExperimentPlan(kind="across", participants=3, seed=1)
        assert plan.repetitions == 10
        split = assemble(plan, data, repetition=0, z=2)
        per_video = 10
        assert len(split.participants) == 3
        assert len(split.train) == 3 * 2 * per_video
        assert len(split.validation) == 3 * per_video
        assert len(split.test) == 3 * per_video

    def test_counts_obey_plan_formula(self):
        data = make_data(participants=3, videos=5, windows=9)
        plan = ExperimentPlan(kind="across", participants=2, seed=3)
        split = assemble(plan, data, repetition=1, z=4)
        counts = plan_counts(2, videos_per_participant=5, windows_per_video=9, z=4)
        assert len(split.train) + len(split.validation) + len(split.test) == counts.total
        assert len(split.train) == counts.train
        assert len(split.validation) == counts.validation
        assert len(split.test) == counts.test

    def test_repetitions_resample_participants(self):
        data = make_data(participants=5, videos=3, windows=8)
        plan = ExperimentPlan(kind="across", participants=2, repetitions=6, seed=0)
        subsets = {split.participants for _, split in monte_carlo(plan, data, z=2)}
        assert len(subsets) > 1  # different repetitions draw different pairs
        assert all(len(s) == 2 for s in subsets)

    def test_deterministic_given_seed_and_repetition(self):
        data = make_data(participants=4, videos=3, windows=8)
        plan = ExperimentPlan(kind="across", participants=2, seed=9)
        a = assemble(plan, data, repetition=3, z=2)
        b = assemble(plan, data, repetition=3, z=2)
        assert a.participants == b.participants
        assert [s.video_id for s in a.train] == [s.video_id for s in b.train]

    def test_insufficient_participants(self):
        data = make_data(participants=2, videos=3, windows=8)
        plan = ExperimentPlan(kind="across", participants=5, seed=0)
        with pytest.raises(ValidationError, match="participants"):
            assemble(plan, data, z=2)

    def test_mode_mixing_is_hard_error(self):
        data = make_data(participants=2, videos=3, windows=8)
        data["p01"]["v01"] = TrialData(maps=dummy_stack(8), rates=dummy_rates(8), mode="sum")
        plan = ExperimentPlan(kind="across", participants=2, seed=0)
        with pytest.raises(ValidationError, match="mix"):
            assemble(plan, data, z=2)

    def test_within_plan_requires_one_participant(self):
        with pytest.raises(ValidationError, match="within"):
            ExperimentPlan(kind="within", participants=3)


class TestDatasetFile:
    def test_round_trip(self, tmp_path):
        data = make_data(participants=1, videos=3, windows=8)
        plan = ExperimentPlan(kind="within", participants=1, seed=0)
        split = assemble(plan, data, repetition=0, z=2)
        path = tmp_path / "train.dset"
        write_dataset(path, split.train)
        loaded, mode = read_dataset(path)
        assert mode == "mean"
        assert len(loaded) == len(split.train)
        for a, b in zip(loaded, split.train):
            assert a.participant_id == b.participant_id
            assert a.video_id == b.video_id
            assert a.start_window == b.start_window
            assert np.array_equal(a.inputs, b.inputs.astype(np.float32).astype(np.float64))
            assert a.target == np.float32(b.target)

    def test_empty_dataset_rejected(self, tmp_path):
        with pytest.raises(ValidationError, match="empty"):
            write_dataset(tmp_path / "x.dset", [])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.dset"
        path.write_bytes(b"WRNG" + b"\x00" * 30)
        with pytest.raises(FormatError, match="magic"):
            read_dataset(path)

    def test_truncated_record(self, tmp_path):
        data = make_data(participants=1, videos=3, windows=8)
        split = assemble(ExperimentPlan(kind="within", participants=1, seed=0), data, z=2)
        path = tmp_path / "x.dset"
        write_dataset(path, split.train)
        path.write_bytes(path.read_bytes()[:-2])
        with pytest.raises(FormatError, match="truncated|trailing"):
            read_dataset(path)
