"""End-to-end orchestration: configuration, staged artifact production, and
the run manifest.

Stages communicate through files under the output directory (recordings ->
brain-rate table -> tensor stacks -> dataset files -> models/reports), so any
stage can be re-run or inspected in isolation. Every stage records its
artifacts' checksums in ``manifest.json`` together with the configuration
hash and seed, which is enough to reproduce a run.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    ExperimentPlan,
    TrialData,
    assemble,
    read_dataset,
    write_dataset,
)
from .errors import NeurorateError, ValidationError
from .neuralnet.models import FullModelConfig, EncoderConfig, load_model, save_model
from .signal_io import (
    Montage,
    SynthSpec,
    default_montage,
    load_montage,
    load_recording,
    save_recording,
    synthesize,
)
from .spectral import Band, BandScheme, window_brain_rate
from .topomap import TopoMapBuilder, read_tensor_file, save_band_images, write_tensor_file
from .training import TrainConfig, mape, mse, pearson, prediction_rows, train_two_stage
from .windowing import WindowConfig, segment

log = logging.getLogger("neurorate")

_DEFAULTS = {
    "run": {"seed": "0", "threads": "1", "out": "runs/default"},
    "paths": {"montage": "builtin"},
    "synth": {
        "participants": "1",
        "videos": "40",
        "duration_s": "63",
        "sample_rate": "128",
        "noise_std": "0.1",
        "amp_low": "0.5",
        "amp_high": "3.0",
    },
    "window": {"length_s": "2", "shift_ms": "125", "taper": "rect"},
    "bands": {"delta": "0.5:4", "theta": "4:8", "alpha": "8:12", "beta": "12:30", "gamma": "30:45"},
    "topomap": {"grid": "32", "emit_png": "false"},
    "sequence": {"z": "7"},
    "brainrate": {"mode": "mean"},
    "experiment": {"kind": "within", "participants": "1", "repetitions": "", "repetition": "0"},
    "train": {
        "batch_size": "32",
        "sgd_lr": "1e-3",
        "adam_lr": "1e-4",
        "beta1": "0.9",
        "beta2": "0.999",
        "epsilon": "1e-8",
        "patience": "6",
        "max_epochs": "60",
        "freeze_encoder": "false",
    },
    "model": {
        "lstm_hidden": "128",
        "variation_filters": "64",
        "variation_kernel": "3",
        "head_units": "512",
        "dropout": "0.5",
    },
}


@dataclass
class RunConfig:
    """Typed view of one run's configuration; defaults reproduce the canonical
    pipeline (2 s windows shifted 125 ms, 32x32 grids, z=7, batch 32,
    patience 6)."""

    out: Path
    seed: int
    threads: int
    montage_path: str
    synth: dict
    window: WindowConfig
    taper: str
    scheme: BandScheme
    grid: int
    emit_png: bool
    z: int
    mode: str
    experiment: ExperimentPlan
    repetition: int
    train: TrainConfig
    model: dict
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()

    def montage(self) -> Montage:
        if self.montage_path == "builtin":
            return default_montage()
        return load_montage(self.montage_path)

    def full_model_config(self, n_bands: int) -> FullModelConfig:
        return FullModelConfig(
            encoder=EncoderConfig(grid=self.grid, in_bands=n_bands),
            seq_len=self.z,
            lstm_hidden=int(self.model["lstm_hidden"]),
            variation_filters=int(self.model["variation_filters"]),
            variation_kernel=int(self.model["variation_kernel"]),
            head_units=int(self.model["head_units"]),
            dropout=float(self.model["dropout"]),
        )


def load_config(
    path: str | Path | None = None,
    seed: int | None = None,
    threads: int | None = None,
    out: str | None = None,
) -> RunConfig:
    """Parse the INI-style run configuration; every key has a paper default."""
    parser = configparser.ConfigParser()
    parser.read_dict(_DEFAULTS)
    if path is not None:
        if not Path(path).exists():
            raise ValidationError(f"config file {path} does not exist")
        read = parser.read(path)
        if not read:
            raise ValidationError(f"config file {path} could not be parsed")
    for section in parser.sections():
        if section not in _DEFAULTS:
            raise ValidationError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _DEFAULTS[section]:
                raise ValidationError(f"unknown config key {key!r} in section [{section}]")

    def get(section: str, key: str) -> str:
        return parser.get(section, key)

    try:
        run_seed = seed if seed is not None else parser.getint("run", "seed")
        run_threads = threads if threads is not None else parser.getint("run", "threads")
        run_out = Path(out if out is not None else get("run", "out"))

        bands = []
        for name, spec_str in parser["bands"].items():
            low, _, high = spec_str.partition(":")
            bands.append(Band(name, float(low), float(high)))
        scheme = BandScheme(tuple(bands))

        kind = get("experiment", "kind")
        reps_raw = get("experiment", "repetitions")
        plan = ExperimentPlan(
            kind=kind,  # type: ignore[arg-type]
            participants=parser.getint("experiment", "participants"),
            repetitions=int(reps_raw) if reps_raw else None,
            seed=run_seed,
        )
        train = TrainConfig(
            batch_size=parser.getint("train", "batch_size"),
            sgd_lr=parser.getfloat("train", "sgd_lr"),
            adam_lr=parser.getfloat("train", "adam_lr"),
            beta1=parser.getfloat("train", "beta1"),
            beta2=parser.getfloat("train", "beta2"),
            epsilon=parser.getfloat("train", "epsilon"),
            patience=parser.getint("train", "patience"),
            max_epochs=parser.getint("train", "max_epochs"),
            seed=run_seed,
            freeze_encoder=parser.getboolean("train", "freeze_encoder"),
        )
        cfg = RunConfig(
            out=run_out,
            seed=run_seed,
            threads=max(1, run_threads),
            montage_path=get("paths", "montage"),
            synth={
                "participants": parser.getint("synth", "participants"),
                "videos": parser.getint("synth", "videos"),
                "duration_s": parser.getfloat("synth", "duration_s"),
                "sample_rate": parser.getfloat("synth", "sample_rate"),
                "noise_std": parser.getfloat("synth", "noise_std"),
                "amp_low": parser.getfloat("synth", "amp_low"),
                "amp_high": parser.getfloat("synth", "amp_high"),
            },
            window=WindowConfig(
                length_s=parser.getfloat("window", "length_s"),
                shift_ms=parser.getfloat("window", "shift_ms"),
            ),
            taper=get("window", "taper"),
            scheme=scheme,
            grid=parser.getint("topomap", "grid"),
            emit_png=parser.getboolean("topomap", "emit_png"),
            z=parser.getint("sequence", "z"),
            mode=get("brainrate", "mode"),
            experiment=plan,
            repetition=parser.getint("experiment", "repetition"),
            train=train,
            model=dict(parser["model"]),
            raw={s: dict(parser[s]) for s in parser.sections()},
        )
    except (ValueError, configparser.Error) as exc:
        raise ValidationError(f"invalid configuration: {exc}") from exc
    if cfg.mode not in ("sum", "mean"):
        raise ValidationError(f"unknown brain-rate mode {cfg.mode!r}")
    if cfg.taper not in ("rect", "hann"):
        raise ValidationError(f"unknown spectral taper {cfg.taper!r}")
    if cfg.z < 1:
        raise ValidationError("sequence length z must be >= 1")
    cfg.raw["run"]["seed"] = str(cfg.seed)
    return cfg


# -- manifest ---------------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def update_manifest(cfg: RunConfig, stage: str, artifacts: list[Path]) -> None:
    """Record (or refresh) one stage's artifact checksums in manifest.json."""
    manifest_path = cfg.out / "manifest.json"
    manifest = {}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
    manifest.setdefault("config_sha256", cfg.config_hash)
    manifest["seed"] = cfg.seed
    manifest["versions"] = {"neurorate": __version__, "numpy": np.__version__}
    stages = manifest.setdefault("stages", {})
    stages[stage] = {
        "completed_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "artifacts": {str(p.relative_to(cfg.out)): _sha256(p) for p in sorted(artifacts)},
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# -- id helpers ---------------------------------------------------------------------


def participant_ids(cfg: RunConfig) -> list[str]:
    return [f"p{i:02d}" for i in range(cfg.synth["participants"])]


def video_ids(cfg: RunConfig) -> list[str]:
    return [f"v{i:02d}" for i in range(cfg.synth["videos"])]


def _trial_id(participant: str, video: str) -> str:
    return f"{participant}-{video}"


def _recording_path(cfg: RunConfig, participant: str, video: str) -> Path:
    return cfg.out / "recordings" / participant / f"{video}.eegr"


def _tensor_path(cfg: RunConfig, participant: str, video: str) -> Path:
    return cfg.out / "tensors" / participant / f"{video}.topo"


# -- stage: synth ---------------------------------------------------------------------


def _band_frequency(band: Band, spacing: float, nyquist: float) -> float:
    """Bin-aligned frequency near the band center, strictly inside the band."""
    f = round(band.mean_hz / spacing) * spacing
    if not band.low_hz <= f < band.high_hz:
        f = np.ceil(band.low_hz / spacing) * spacing
    if f >= nyquist:
        raise ValidationError(f"band {band.name!r} lies above the Nyquist frequency")
    return float(f)


def make_synth_spec(cfg: RunConfig, montage: Montage, participant: str, video: str) -> SynthSpec:
    """One video's recording recipe: per band, a bin-aligned sinusoid whose
    video-level amplitude mix determines the brain rate, with a smooth
    front-to-back spatial profile across channels."""
    rng = np.random.default_rng(
        np.random.SeedSequence((cfg.seed, 5, int(participant[1:]), int(video[1:])))
    )
    rate = cfg.synth["sample_rate"]
    spacing = 1.0 / cfg.window.length_s
    x = montage.positions[:, 0]
    span = x.max() - x.min()
    profile = 1.0 + 0.6 * ((x - x.min()) / span - 0.5) if span > 0 else np.ones(len(montage))
    base = rng.uniform(cfg.synth["amp_low"], cfg.synth["amp_high"], size=cfg.scheme.n_bands)
    components = []
    for i in range(len(montage)):
        jitter = rng.uniform(0.9, 1.1, size=cfg.scheme.n_bands)
        per_channel = []
        for b, band in enumerate(cfg.scheme.bands):
            freq = _band_frequency(band, spacing, rate / 2)
            per_channel.append((freq, base[b] * profile[i] * jitter[b], rng.uniform(0, 2 * np.pi)))
        components.append(tuple(per_channel))
    return SynthSpec(
        duration_s=cfg.synth["duration_s"],
        sample_rate=rate,
        channel_names=montage.labels,
        components=tuple(components),
        noise_std=cfg.synth["noise_std"],
        seed=int(rng.integers(0, 2**31)),
    )


def run_synth(cfg: RunConfig) -> list[Path]:
    montage = cfg.montage()
    written = []
    for participant in participant_ids(cfg):
        for video in video_ids(cfg):
            spec = make_synth_spec(cfg, montage, participant, video)
            rec = synthesize(spec, participant_id=participant, trial_id=_trial_id(participant, video))
            path = _recording_path(cfg, participant, video)
            path.parent.mkdir(parents=True, exist_ok=True)
            save_recording(rec, path)
            written.append(path)
    log.info("synth: wrote %d recordings", len(written))
    update_manifest(cfg, "synth", written)
    return written


# -- stage: brainrate -------------------------------------------------------------------


def run_brainrate(cfg: RunConfig) -> Path:
    montage = cfg.montage()
    out_path = cfg.out / "brainrates.csv"
    lines = [f"# mode={cfg.mode}"]
    for participant in participant_ids(cfg):
        for video in video_ids(cfg):
            rec_path = _recording_path(cfg, participant, video)
            if not rec_path.exists():
                raise ValidationError(f"brainrate stage: missing recording {rec_path}; run synth first")
            rec = load_recording(
                rec_path, participant_id=participant, trial_id=_trial_id(participant, video), montage=montage
            )
            for win in segment(rec, cfg.window):
                br = window_brain_rate(win, rec.sample_rate, cfg.scheme, cfg.mode, taper=cfg.taper)
                lines.append(f"{win.trial_id},{win.start_index},{br.value:.17g}")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(lines) + "\n")
    log.info("brainrate: wrote %s (%d windows)", out_path, len(lines) - 1)
    update_manifest(cfg, "brainrate", [out_path])
    return out_path


def read_brainrates(path: Path) -> tuple[dict[str, np.ndarray], str]:
    """Parse the brain-rate table back into per-trial arrays (time order)."""
    per_trial: dict[str, list[float]] = {}
    mode = "mean"
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            if "mode=" in line:
                mode = line.split("mode=")[1].strip()
            continue
        trial, _, value = line.split(",")
        per_trial.setdefault(trial, []).append(float(value))
    return {k: np.array(v) for k, v in per_trial.items()}, mode


# -- stage: topomap -------------------------------------------------------------------


def run_topomap(cfg: RunConfig) -> list[Path]:
    montage = cfg.montage()
    written = []
    builder: TopoMapBuilder | None = None
    for participant in participant_ids(cfg):
        for video in video_ids(cfg):
            rec_path = _recording_path(cfg, participant, video)
            if not rec_path.exists():
                raise ValidationError(f"topomap stage: missing recording {rec_path}; run synth first")
            rec = load_recording(
                rec_path, participant_id=participant, trial_id=_trial_id(participant, video), montage=montage
            )
            if builder is None or builder.channel_names != rec.channel_names:
                builder = TopoMapBuilder(montage, rec.channel_names, cfg.scheme, cfg.grid)
            windows = segment(rec, cfg.window)
            if cfg.threads > 1:
                with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                    maps = list(pool.map(lambda w: builder.build(w, rec.sample_rate, taper=cfg.taper), windows))
            else:
                maps = [builder.build(w, rec.sample_rate, taper=cfg.taper) for w in windows]
            stack = np.stack([m.grid for m in maps])
            path = _tensor_path(cfg, participant, video)
            path.parent.mkdir(parents=True, exist_ok=True)
            write_tensor_file(path, stack)
            written.append(path)
            if cfg.emit_png:
                written.extend(save_band_images(maps[0], cfg.out / "images", prefix=f"{participant}_"))
    log.info("topomap: wrote %d tensor files", len(written))
    update_manifest(cfg, "topomap", written)
    return written


# -- stage: dataset -------------------------------------------------------------------


def _load_trial_data(cfg: RunConfig) -> dict[str, dict[str, TrialData]]:
    rates_path = cfg.out / "brainrates.csv"
    if not rates_path.exists():
        raise ValidationError(f"dataset stage: missing {rates_path}; run brainrate first")
    per_trial, mode = read_brainrates(rates_path)
    if mode != cfg.mode:
        raise ValidationError(
            f"brain-rate table was computed with mode={mode!r} but config asks for {cfg.mode!r}"
        )
    data: dict[str, dict[str, TrialData]] = {}
    for participant in participant_ids(cfg):
        videos = {}
        for video in video_ids(cfg):
            tensor_path = _tensor_path(cfg, participant, video)
            if not tensor_path.exists():
                raise ValidationError(f"dataset stage: missing {tensor_path}; run topomap first")
            maps = read_tensor_file(tensor_path)
            trial = _trial_id(participant, video)
            if trial not in per_trial:
                raise ValidationError(f"dataset stage: no brain rates for trial {trial}")
            rates = per_trial[trial]
            if len(rates) != len(maps):
                raise ValidationError(
                    f"trial {trial}: {len(maps)} tensors but {len(rates)} brain rates"
                )
            videos[video] = TrialData(maps=maps, rates=rates, mode=mode)
        data[participant] = videos
    return data


def run_dataset(cfg: RunConfig) -> list[Path]:
    data = _load_trial_data(cfg)
    written = []
    out_dir = cfg.out / "datasets"
    out_dir.mkdir(parents=True, exist_ok=True)
    for rep in range(cfg.experiment.repetitions):
        split = assemble(cfg.experiment, data, repetition=rep, z=cfg.z)
        for name, samples in (("train", split.train), ("validation", split.validation), ("test", split.test)):
            path = out_dir / f"rep{rep:02d}_{name}.dset"
            write_dataset(path, samples)
            written.append(path)
    log.info("dataset: wrote %d files", len(written))
    update_manifest(cfg, "dataset", written)
    return written


# -- stage: train -------------------------------------------------------------------


def _dataset_paths(cfg: RunConfig, rep: int) -> dict[str, Path]:
    out_dir = cfg.out / "datasets"
    return {name: out_dir / f"rep{rep:02d}_{name}.dset" for name in ("train", "validation", "test")}


def run_train(cfg: RunConfig) -> list[Path]:
    rep = cfg.repetition
    paths = _dataset_paths(cfg, rep)
    for name, p in paths.items():
        if not p.exists():
            raise ValidationError(f"train stage: missing {name} dataset {p}; run dataset first")
    train_s, _ = read_dataset(paths["train"])
    val_s, _ = read_dataset(paths["validation"])
    test_s, _ = read_dataset(paths["test"])

    n_bands = train_s[0].inputs.shape[-1]
    full_cfg = cfg.full_model_config(n_bands)
    result = train_two_stage(train_s, val_s, test_s, full_cfg, cfg.train)

    models_dir = cfg.out / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for tag, bundle, report in (
        ("cnn", result.cnn, result.cnn_report),
        ("full", result.full, result.full_report),
    ):
        model_path = models_dir / f"rep{rep:02d}_{tag}.nrmd"
        save_model(model_path, bundle)
        written.append(model_path)
        csv_path = models_dir / f"rep{rep:02d}_{tag}_report.csv"
        csv_path.write_text(report.to_csv())
        written.append(csv_path)
        txt_path = models_dir / f"rep{rep:02d}_{tag}_summary.txt"
        txt_path.write_text(report.summary())
        written.append(txt_path)

    rows = prediction_rows(test_s, result.cnn_test_pred, result.full_test_pred)
    pred_path = models_dir / f"rep{rep:02d}_predictions.csv"
    pred_path.write_text(
        "video_id,window_index,y,y_cnn,y_cnnlstm\n"
        + "\n".join(f"{v},{w},{y:.17g},{c:.17g},{f:.17g}" for v, w, y, c, f in rows)
        + "\n"
    )
    written.append(pred_path)
    log.info("train: rep %d done (cnn MAPE %.3f%%, full MAPE %.3f%%)", rep,
             result.cnn_report.test_mape, result.full_report.test_mape)
    update_manifest(cfg, "train", written)
    return written


# -- stage: eval -------------------------------------------------------------------


def run_eval(cfg: RunConfig) -> Path:
    rep = cfg.repetition
    test_path = _dataset_paths(cfg, rep)["test"]
    if not test_path.exists():
        raise ValidationError(f"eval stage: missing test dataset {test_path}")
    test_s, _ = read_dataset(test_path)
    targets = np.array([s.target for s in test_s])
    videos = np.array([f"{s.participant_id}/{s.video_id}" for s in test_s])

    lines = []
    models_dir = cfg.out / "models"
    for tag, stage in (("cnn", "cnn"), ("full", "full")):
        model_path = models_dir / f"rep{rep:02d}_{tag}.nrmd"
        if not model_path.exists():
            raise ValidationError(f"eval stage: missing model {model_path}; run train first")
        bundle = load_model(model_path)
        inputs = (
            np.stack([s.inputs[-1] for s in test_s])
            if bundle.kind == "cnn"
            else np.stack([s.inputs for s in test_s])
        )
        # match the training loop's batching so the forward pass is bit-identical
        pred = bundle.predict(inputs, batch_size=cfg.train.batch_size)
        lines.append(f"[{tag}]")
        lines.append(f"test_mse={mse(targets, pred):.17g}")
        lines.append(f"test_mape={mape(targets, pred):.17g}%")
        for vid in np.unique(videos):
            sel = videos == vid
            if sel.sum() >= 2 and np.std(targets[sel]) > 0 and np.std(pred[sel]) > 0:
                lines.append(f"pearson[{vid}]={pearson(targets[sel], pred[sel]):.10g}")
        lines.append("")
    out_path = cfg.out / "eval.txt"
    out_path.write_text("\n".join(lines))
    update_manifest(cfg, "eval", [out_path])
    return out_path


# -- stage: report -------------------------------------------------------------------


def run_report(cfg: RunConfig) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rep = cfg.repetition
    pred_path = cfg.out / "models" / f"rep{rep:02d}_predictions.csv"
    if not pred_path.exists():
        raise ValidationError(f"report stage: missing predictions {pred_path}; run train first")
    rows = []
    for line in pred_path.read_text().splitlines()[1:]:
        vid, w, y, yc, yf = line.split(",")
        rows.append((vid, int(w), float(y), float(yc), float(yf)))

    report_dir = cfg.out / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    written = []

    by_video: dict[str, list] = {}
    for row in rows:
        by_video.setdefault(row[0], []).append(row)
    mape_cnn, mape_full = [], []
    for vid, vrows in sorted(by_video.items()):
        vrows.sort(key=lambda r: r[1])
        w = [r[1] for r in vrows]
        y = np.array([r[2] for r in vrows])
        yc = np.array([r[3] for r in vrows])
        yf = np.array([r[4] for r in vrows])
        mape_cnn.append(mape(y, yc))
        mape_full.append(mape(y, yf))
        fig, ax = plt.subplots(figsize=(8, 3))
        ax.plot(w, y, label="brain rate", color="tab:green")
        ax.plot(w, yc, label="CNN", color="tab:red", alpha=0.8)
        ax.plot(w, yf, label="CNN+LSTM", color="tab:blue", alpha=0.8)
        ax.set_xlabel("window start index")
        ax.set_ylabel("rate (Hz)")
        ax.legend(loc="best", fontsize=8)
        safe = vid.replace("/", "_")
        fig.tight_layout()
        trace_path = report_dir / f"trace_{safe}.png"
        fig.savefig(trace_path, dpi=110)
        plt.close(fig)
        written.append(trace_path)

    fig, ax = plt.subplots(figsize=(5, 3))
    ax.hist([mape_cnn, mape_full], label=["CNN", "CNN+LSTM"], bins=10)
    ax.set_xlabel("per-video test MAPE (%)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    dist_path = report_dir / "mape_distribution.png"
    fig.savefig(dist_path, dpi=110)
    plt.close(fig)
    written.append(dist_path)

    summary = report_dir / "mape_summary.txt"
    summary.write_text(
        "model,videos,mape_mean,mape_std\n"
        f"cnn,{len(mape_cnn)},{np.mean(mape_cnn):.6g},{np.std(mape_cnn):.6g}\n"
        f"cnn_lstm,{len(mape_full)},{np.mean(mape_full):.6g},{np.std(mape_full):.6g}\n"
    )
    written.append(summary)
    update_manifest(cfg, "report", written)
    return written


STAGES = {
    "synth": run_synth,
    "brainrate": run_brainrate,
    "topomap": run_topomap,
    "dataset": run_dataset,
    "train": run_train,
    "eval": run_eval,
    "report": run_report,
}


def run_stage(name: str, cfg: RunConfig):
    """Dispatch one pipeline stage, wrapping failures with stage context."""
    if name not in STAGES:
        raise ValidationError(f"unknown subcommand {name!r}; expected one of {sorted(STAGES)}")
    cfg.out.mkdir(parents=True, exist_ok=True)
    try:
        return STAGES[name](cfg)
    except NeurorateError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc
