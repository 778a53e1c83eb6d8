"""Self-supervised sequence assembly: sliding sequences of head-map tensors
targeting the following window's brain rate, video-level splits, and the
within/across-subject experiment plans with Monte Carlo repetition.

Counting functions are kept separate from tensor assembly so plan arithmetic
(489 windows -> 482 sequences per video, 19280 per participant, 28/6/6 video
splits) can be verified without materializing any data.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Literal, Mapping, Sequence

import numpy as np

from .errors import FormatError, ValidationError
from .spectral import BrainRate
from .topomap import TopoMap

DATASET_MAGIC = b"DSET"
DATASET_VERSION = 1
_DATASET_HEADER = struct.Struct("<4sHHHHBQ")  # magic, version, z, grid, bands, mode, count

_MODE_CODES = {"sum": 0, "mean": 1}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}

ModelKind = Literal["within", "across"]
DEFAULT_REPETITIONS = {"within": 2, "across": 10}

# Published experiment-plan sizes (total, training, validation, test) per
# participant count. The 9-person row is internally inconsistent with
# participants x 482 x 40 arithmetic; see `table1_discrepancies`.
TABLE1_ROWS = {
    1: (19280, 13496, 2892, 2892),
    3: (57840, 40488, 8676, 8676),
    5: (96400, 67480, 14460, 14460),
    7: (134960, 94472, 20244, 20244),
    9: (177570, 125514, 26028, 26028),
}


@dataclass(frozen=True)
class SequenceSample:
    """z consecutive tensors plus the brain rate of the window after them.

    ``inputs`` is a view into the per-trial tensor stack; the target window
    index is ``start_window + z``.
    """

    participant_id: str
    video_id: str
    start_window: int
    inputs: np.ndarray  # (z, grid, grid, bands)
    target: float
    target_mode: str

    @property
    def z(self) -> int:
        return self.inputs.shape[0]


def build_sequences(
    maps: Sequence[TopoMap] | np.ndarray,
    rates: Sequence[BrainRate] | np.ndarray,
    z: int = 7,
    participant_id: str = "",
    video_id: str | None = None,
    mode: str | None = None,
) -> list[SequenceSample]:
    """One sample per valid start index; count = window_count - z.

    ``maps``/``rates`` may be the domain objects produced by the upstream
    stages or plain aligned arrays (``(W, G, G, B)`` tensors and ``(W,)``
    rates, in which case ``video_id`` and ``mode`` must be given).
    """
    if z < 1:
        raise ValidationError(f"sequence length must be >= 1, got {z}")

    if isinstance(maps, np.ndarray):
        stack = np.asarray(maps, dtype=np.float64)
        if video_id is None:
            raise ValidationError("video_id is required when passing a raw tensor stack")
    else:
        if not maps:
            raise ValidationError("no tensors given")
        trial_ids = {m.trial_id for m in maps}
        if len(trial_ids) != 1:
            raise ValidationError(f"tensors from multiple trials: {sorted(trial_ids)}")
        starts = [m.start_index for m in maps]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValidationError("tensors are not in increasing window order")
        if video_id is None:
            video_id = maps[0].trial_id
        stack = np.stack([m.grid for m in maps])

    if isinstance(rates, np.ndarray):
        values = np.asarray(rates, dtype=np.float64)
        if mode is None:
            raise ValidationError("mode is required when passing raw rate values")
    else:
        modes = {r.mode for r in rates}
        if len(modes) > 1:
            raise ValidationError(f"rates mix aggregation modes: {sorted(modes)}")
        rate_mode = modes.pop() if modes else None
        if mode is not None and rate_mode is not None and mode != rate_mode:
            raise ValidationError(f"mode argument {mode!r} contradicts rate mode {rate_mode!r}")
        mode = rate_mode if mode is None else mode
        values = np.array([r.value for r in rates], dtype=np.float64)
    if mode not in _MODE_CODES:
        raise ValidationError(f"unknown aggregation mode {mode!r}")

    if stack.ndim != 4:
        raise ValidationError(f"tensor stack must be 4D (W, G, G, B), got {stack.shape}")
    if len(values) != len(stack):
        raise ValidationError(f"{len(stack)} tensors but {len(values)} rates")
    if len(stack) < z + 1:
        raise ValidationError(
            f"need at least z+1={z + 1} windows to form one sequence, got {len(stack)}"
        )

    return [
        SequenceSample(
            participant_id=participant_id,
            video_id=video_id,
            start_window=s,
            inputs=stack[s : s + z],
            target=float(values[s + z]),
            target_mode=mode,
        )
        for s in range(len(stack) - z)
    ]


@dataclass(frozen=True)
class VideoSplit:
    """Disjoint video-id sets covering all of one participant's videos."""

    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]

    def __post_init__(self) -> None:
        all_ids = self.train + self.validation + self.test
        if len(set(all_ids)) != len(all_ids):
            raise ValidationError("video split sets are not disjoint")


def split_videos(video_ids: Sequence[str], seed: int) -> VideoSplit:
    """Deterministic 70/15/15 split by whole videos (28/6/6 for 40 videos).

    Validation and test each get ``max(1, round(0.15 * n))`` videos so no set
    is ever empty; training takes the rest.
    """
    ids = list(video_ids)
    if len(set(ids)) != len(ids):
        raise ValidationError("video ids must be unique")
    n = len(ids)
    if n < 3:
        raise ValidationError(f"need at least 3 videos to split, got {n}")
    n_val = max(1, round(0.15 * n))
    n_test = max(1, round(0.15 * n))
    perm = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in perm]
    train = tuple(shuffled[: n - n_val - n_test])
    validation = tuple(shuffled[n - n_val - n_test : n - n_test])
    test = tuple(shuffled[n - n_test :])
    return VideoSplit(train=train, validation=validation, test=test)


@dataclass(frozen=True)
class SplitPlan:
    """Per-participant video splits plus the seed that generated them."""

    seed: int
    splits: Mapping[str, VideoSplit]


@dataclass(frozen=True)
class ExperimentPlan:
    """A within- or across-subject training configuration."""

    kind: ModelKind
    participants: int
    repetitions: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("within", "across"):
            raise ValidationError(f"unknown model kind {self.kind!r}")
        if self.kind == "within" and self.participants != 1:
            raise ValidationError("within-subject plans use exactly one participant")
        if self.participants < 1:
            raise ValidationError("participant count must be >= 1")
        if self.repetitions is None:
            object.__setattr__(self, "repetitions", DEFAULT_REPETITIONS[self.kind])
        elif self.repetitions < 1:
            raise ValidationError("repetitions must be >= 1")


@dataclass(frozen=True)
class TrialData:
    """Tensor stack and aligned brain rates for one (participant, video)."""

    maps: np.ndarray  # (W, grid, grid, bands)
    rates: np.ndarray  # (W,)
    mode: str


@dataclass
class DatasetSplit:
    """Assembled train/validation/test sequence sets for one repetition."""

    train: list[SequenceSample]
    validation: list[SequenceSample]
    test: list[SequenceSample]
    mode: str
    participants: tuple[str, ...]
    plan: SplitPlan | None = field(default=None, repr=False)

    def check_video_leakage(self) -> None:
        """No test sequence may share a (participant, video) pair with training."""
        train_pairs = {(s.participant_id, s.video_id) for s in self.train}
        for s in self.test:
            if (s.participant_id, s.video_id) in train_pairs:
                raise ValidationError(
                    f"test sequence from ({s.participant_id}, {s.video_id}) also appears in training"
                )


def assemble(
    plan: ExperimentPlan,
    data: Mapping[str, Mapping[str, TrialData]],
    repetition: int = 0,
    z: int = 7,
) -> DatasetSplit:
    """Concatenate per-participant video-level splits for one repetition.

    Participants are drawn without replacement using a generator derived from
    ``(plan.seed, repetition)``; each participant's videos are split with a
    seed derived from the same tuple plus the participant label.
    """
    available = sorted(data)
    if plan.participants > len(available):
        raise ValidationError(
            f"plan needs {plan.participants} participants but only {len(available)} are available"
        )
    rng = np.random.default_rng(np.random.SeedSequence((plan.seed, repetition)))
    chosen = sorted(rng.choice(available, size=plan.participants, replace=False).tolist())

    modes = {trial.mode for p in chosen for trial in data[p].values()}
    if len(modes) != 1:
        raise ValidationError(f"trials mix brain-rate aggregation modes: {sorted(modes)}")
    mode = modes.pop()

    splits: dict[str, VideoSplit] = {}
    out: dict[str, list[SequenceSample]] = {"train": [], "validation": [], "test": []}
    for index, participant in enumerate(chosen):
        videos = sorted(data[participant])
        sub_seed = int(
            np.random.SeedSequence((plan.seed, repetition, index)).generate_state(1)[0]
        )
        split = split_videos(videos, seed=sub_seed)
        splits[participant] = split
        for part, vid_set in (("train", split.train), ("validation", split.validation), ("test", split.test)):
            for vid in vid_set:
                trial = data[participant][vid]
                out[part].extend(
                    build_sequences(
                        trial.maps,
                        trial.rates,
                        z=z,
                        participant_id=participant,
                        video_id=vid,
                        mode=trial.mode,
                    )
                )

    result = DatasetSplit(
        train=out["train"],
        validation=out["validation"],
        test=out["test"],
        mode=mode,
        participants=tuple(chosen),
        plan=SplitPlan(seed=plan.seed, splits=splits),
    )
    result.check_video_leakage()
    return result


def monte_carlo(
    plan: ExperimentPlan, data: Mapping[str, Mapping[str, TrialData]], z: int = 7
) -> Iterator[tuple[int, DatasetSplit]]:
    """All Monte Carlo repetitions of a plan, in order."""
    for rep in range(plan.repetitions):
        yield rep, assemble(plan, data, repetition=rep, z=z)


# -- plan arithmetic -------------------------------------------------------------


def sequences_per_trial(window_count: int, z: int = 7) -> int:
    if window_count < z + 1:
        raise ValidationError(f"{window_count} windows cannot form a sequence of length {z}")
    return window_count - z


@dataclass(frozen=True)
class PlanCounts:
    participants: int
    total: int
    train: int
    validation: int
    test: int


def plan_counts(
    participants: int,
    videos_per_participant: int = 40,
    windows_per_video: int = 489,
    z: int = 7,
) -> PlanCounts:
    """Exact sequence counts implied by the split rules (no data required)."""
    per_video = sequences_per_trial(windows_per_video, z)
    n = videos_per_participant
    n_val = max(1, round(0.15 * n))
    n_test = max(1, round(0.15 * n))
    n_train = n - n_val - n_test
    return PlanCounts(
        participants=participants,
        total=participants * n * per_video,
        train=participants * n_train * per_video,
        validation=participants * n_val * per_video,
        test=participants * n_test * per_video,
    )


def table1_discrepancies(
    videos_per_participant: int = 40, windows_per_video: int = 489, z: int = 7
) -> list[str]:
    """Compare formula-derived counts against the published table.

    Returns one message per mismatching field; with the default geometry the
    9-person row disagrees in its total and training counts (177570/125514
    published vs 173520/121464 = 9 x per-participant arithmetic).
    """
    problems = []
    for participants, (total, train, val, test) in sorted(TABLE1_ROWS.items()):
        counts = plan_counts(participants, videos_per_participant, windows_per_video, z)
        for name, computed, published in (
            ("total", counts.total, total),
            ("train", counts.train, train),
            ("validation", counts.validation, val),
            ("test", counts.test, test),
        ):
            if computed != published:
                problems.append(
                    f"{participants}-person {name}: computed {computed} != published {published}"
                )
    return problems


# -- on-disk container -----------------------------------------------------------


def write_dataset(path: str | Path, samples: Sequence[SequenceSample]) -> None:
    """Write sequence records with provenance: header, then per record the
    participant and video ids (NUL-terminated), start window, z tensors, target."""
    if not samples:
        raise ValidationError("refusing to write an empty dataset")
    z, grid, grid2, bands = samples[0].inputs.shape
    modes = {s.target_mode for s in samples}
    if len(modes) != 1:
        raise ValidationError(f"samples mix aggregation modes: {sorted(modes)}")
    mode = modes.pop()
    with open(path, "wb") as fh:
        fh.write(
            _DATASET_HEADER.pack(
                DATASET_MAGIC, DATASET_VERSION, z, grid, bands, _MODE_CODES[mode], len(samples)
            )
        )
        for s in samples:
            if s.inputs.shape != (z, grid, grid2, bands):
                raise ValidationError(
                    f"inconsistent tensor shape {s.inputs.shape}, expected {(z, grid, grid2, bands)}"
                )
            fh.write(s.participant_id.encode("utf-8") + b"\x00")
            fh.write(s.video_id.encode("utf-8") + b"\x00")
            fh.write(struct.pack("<Q", s.start_window))
            fh.write(np.ascontiguousarray(s.inputs, dtype="<f4").tobytes())
            fh.write(struct.pack("<f", s.target))


def read_dataset(path: str | Path) -> tuple[list[SequenceSample], str]:
    """Read a dataset file back into samples; returns (samples, mode)."""
    raw = Path(path).read_bytes()
    if len(raw) < _DATASET_HEADER.size:
        raise FormatError(f"{path}: file too short for a dataset header")
    magic, version, z, grid, bands, mode_code, count = _DATASET_HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    if mode_code not in _MODE_NAMES:
        raise FormatError(f"{path}: unknown aggregation-mode code {mode_code}")
    mode = _MODE_NAMES[mode_code]
    tensor_bytes = z * grid * grid * bands * 4
    offset = _DATASET_HEADER.size
    samples = []
    for _ in range(count):
        end = raw.find(b"\x00", offset)
        if end < 0:
            raise FormatError(f"{path}: truncated participant id")
        participant = raw[offset:end].decode("utf-8")
        offset = end + 1
        end = raw.find(b"\x00", offset)
        if end < 0:
            raise FormatError(f"{path}: truncated video id")
        video = raw[offset:end].decode("utf-8")
        offset = end + 1
        if offset + 8 + tensor_bytes + 4 > len(raw):
            raise FormatError(f"{path}: truncated record body")
        (start,) = struct.unpack_from("<Q", raw, offset)
        offset += 8
        tensors = (
            np.frombuffer(raw, dtype="<f4", count=tensor_bytes // 4, offset=offset)
            .reshape(z, grid, grid, bands)
            .astype(np.float64)
        )
        offset += tensor_bytes
        (target,) = struct.unpack_from("<f", raw, offset)
        offset += 4
        samples.append(
            SequenceSample(
                participant_id=participant,
                video_id=video,
                start_window=start,
                inputs=tensors,
                target=float(target),
                target_mode=mode,
            )
        )
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after {count} records")
    return samples, mode
