"""Recording and montage I/O plus the deterministic synthetic-signal generator.

Recordings live in a small self-describing binary container (magic ``EEGR``)
so the toolkit has no external dataset dependency; montages are plain text.
``synthesize`` builds recordings from exact sinusoid sums and is the source of
every analytic spectral oracle used in the test suite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import FormatError, ValidationError

RECORDING_MAGIC = b"EEGR"
RECORDING_VERSION = 1

_HEADER = struct.Struct("<4sHdIQ")  # magic, version, sample_rate, channels, samples


@dataclass(frozen=True)
class EegRecording:
    """Multi-channel EEG time series in microvolts.

    ``samples`` has shape ``(n_channels, n_samples)`` and is frozen after
    construction so recordings can be shared across threads.
    """

    sample_rate: float
    channel_names: tuple[str, ...]
    samples: np.ndarray
    participant_id: str = ""
    trial_id: str = ""

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise ValidationError(f"samples must be 2D (channel x time), got shape {samples.shape}")
        if samples.shape[0] != len(self.channel_names):
            raise ValidationError(
                f"{samples.shape[0]} sample rows but {len(self.channel_names)} channel names"
            )
        if samples.shape[1] < 1:
            raise ValidationError("each channel needs at least one sample")
        if len(set(self.channel_names)) != len(self.channel_names):
            raise ValidationError("channel names must be unique")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass(frozen=True)
class Montage:
    """Electrode labels mapped to unit-sphere positions.

    Frame: +z through the vertex, +x through the nasion, +y toward the left
    ear. Every position is normalized to unit length on construction.
    """

    labels: tuple[str, ...]
    positions: np.ndarray  # (n, 3), unit norm
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(set(self.labels)) != len(self.labels):
            dupes = sorted({l for l in self.labels if self.labels.count(l) > 1})
            raise ValidationError(f"duplicate electrode labels: {dupes}")
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.shape != (len(self.labels), 3):
            raise ValidationError(f"positions shape {pos.shape} does not match {len(self.labels)} labels")
        norms = np.linalg.norm(pos, axis=1)
        if np.any(norms == 0):
            bad = [self.labels[i] for i in np.flatnonzero(norms == 0)]
            raise ValidationError(f"zero-length electrode coordinates: {bad}")
        pos = pos / norms[:, None]
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "_index", {l: i for i, l in enumerate(self.labels)})

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def position(self, label: str) -> np.ndarray:
        try:
            return self.positions[self._index[label]]
        except KeyError:
            raise ValidationError(f"unknown electrode label {label!r}") from None

    def subset(self, labels: Sequence[str]) -> "Montage":
        """Montage restricted to ``labels``, in the given order."""
        return Montage(tuple(labels), np.array([self.position(l) for l in labels]))


class Sinusoid(NamedTuple):
    freq_hz: float
    amp_uv: float
    phase_rad: float


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic recording: per-channel sinusoid sums plus noise.

    ``components[i]`` lists the sinusoids of channel ``i``. With
    ``noise_std == 0`` the output matches the closed-form sum exactly, which
    is what makes synthetic recordings usable as spectral oracles.
    """

    duration_s: float
    sample_rate: float
    channel_names: tuple[str, ...]
    components: tuple[tuple[Sinusoid, ...], ...]
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        object.__setattr__(
            self, "components", tuple(tuple(Sinusoid(*c) for c in comps) for comps in self.components)
        )
        if len(self.components) != len(self.channel_names):
            raise ValidationError(
                f"{len(self.components)} component lists for {len(self.channel_names)} channels"
            )
        n = self.duration_s * self.sample_rate
        if abs(n - round(n)) > 1e-9 or n < 1:
            raise ValidationError(
                f"duration x sample_rate must be a positive integer, got {n}"
            )
        nyquist = self.sample_rate / 2
        for ch, comps in zip(self.channel_names, self.components):
            for c in comps:
                if c.freq_hz >= nyquist:
                    raise ValidationError(
                        f"channel {ch!r}: component at {c.freq_hz} Hz is at or above "
                        f"the Nyquist frequency {nyquist} Hz"
                    )
        if self.noise_std < 0:
            raise ValidationError("noise_std must be non-negative")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate))


def synthesize(spec: SynthSpec, participant_id: str = "synthetic", trial_id: str = "trial-0") -> EegRecording:
    """Render a :class:`SynthSpec` into a recording. Deterministic given the seed."""
    t = np.arange(spec.n_samples, dtype=np.float64) / spec.sample_rate
    rng = np.random.default_rng(spec.seed)
    rows = np.zeros((len(spec.channel_names), spec.n_samples))
    for i, comps in enumerate(spec.components):
        for freq, amp, phase in comps:
            rows[i] += amp * np.sin(2 * np.pi * freq * t + phase)
    if spec.noise_std > 0:
        rows += rng.normal(0.0, spec.noise_std, size=rows.shape)
    return EegRecording(
        sample_rate=spec.sample_rate,
        channel_names=spec.channel_names,
        samples=rows,
        participant_id=participant_id,
        trial_id=trial_id,
    )


def save_recording(recording: EegRecording, path: str | Path) -> None:
    """Write the ``EEGR`` container: header, null-terminated labels, f32 samples."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                RECORDING_MAGIC,
                RECORDING_VERSION,
                recording.sample_rate,
                recording.n_channels,
                recording.n_samples,
            )
        )
        for label in recording.channel_names:
            fh.write(label.encode("ascii") + b"\x00")
        fh.write(np.ascontiguousarray(recording.samples, dtype="<f4").tobytes())


def load_recording(
    path: str | Path,
    expected_rate: float | None = None,
    participant_id: str = "",
    trial_id: str | None = None,
    montage: Montage | None = None,
) -> EegRecording:
    """Load an ``EEGR`` file, validating the header against the payload.

    ``trial_id`` defaults to the file stem (the container itself carries no
    identifiers). Passing ``montage`` additionally checks that every channel
    label exists in it.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file too short for a recording header ({len(raw)} bytes)")
    magic, version, rate, n_channels, n_samples = _HEADER.unpack_from(raw)
    if magic != RECORDING_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {RECORDING_MAGIC!r}")
    if version != RECORDING_VERSION:
        raise FormatError(f"{path}: unsupported recording version {version}")
    if rate <= 0 or n_channels == 0 or n_samples == 0:
        raise FormatError(f"{path}: degenerate header (rate={rate}, ch={n_channels}, n={n_samples})")

    offset = _HEADER.size
    labels = []
    for _ in range(n_channels):
        end = raw.find(b"\x00", offset)
        if end < 0:
            raise FormatError(f"{path}: truncated channel-label table")
        try:
            labels.append(raw[offset:end].decode("ascii"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: non-ASCII channel label") from exc
        offset = end + 1
    if any(not l for l in labels):
        raise FormatError(f"{path}: empty channel label")

    expected_bytes = n_channels * n_samples * 4
    payload = raw[offset:]
    if len(payload) != expected_bytes:
        raise FormatError(
            f"{path}: sample payload is {len(payload)} bytes, header implies {expected_bytes} "
            f"({n_channels} channels x {n_samples} samples)"
        )
    samples = np.frombuffer(payload, dtype="<f4").reshape(n_channels, n_samples).astype(np.float64)

    if expected_rate is not None and abs(rate - expected_rate) > 1e-9:
        raise ValidationError(f"{path}: sample rate {rate} Hz does not match expected {expected_rate} Hz")
    if montage is not None:
        unknown = [l for l in labels if l not in montage]
        if unknown:
            raise ValidationError(f"{path}: channels not present in montage: {unknown}")

    return EegRecording(
        sample_rate=rate,
        channel_names=tuple(labels),
        samples=samples,
        participant_id=participant_id,
        trial_id=path.stem if trial_id is None else trial_id,
    )


def load_montage(path: str | Path) -> Montage:
    """Parse a plain-text montage: one ``LABEL x y z`` line per electrode."""
    labels: list[str] = []
    coords: list[list[float]] = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 'LABEL x y z', got {line!r}")
        try:
            xyz = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: non-numeric coordinate in {line!r}") from exc
        if parts[0] in labels:
            raise ValidationError(f"{path}:{lineno}: duplicate electrode label {parts[0]!r}")
        labels.append(parts[0])
        coords.append(xyz)
    if not labels:
        raise FormatError(f"{path}: montage file contains no electrodes")
    return Montage(tuple(labels), np.array(coords))


def default_montage() -> Montage:
    """The packaged 32-electrode 10-20 montage."""
    ref = resources.files("neurorate.assets").joinpath("default_1020.montage")
    with resources.as_file(ref) as path:
        return load_montage(path)
