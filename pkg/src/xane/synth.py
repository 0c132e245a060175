"""Labeled dataset synthesis.

Pipeline per utterance: reverberate clean speech (image-method RIR), mix an
overlapping talker reverberated through the same room at the target SIR, add
typed noise at the target SNR, run the codec round trip, set the peak level.
No intermediate stage clips; the one quantization to float32 happens right
before labels are computed so re-deriving labels from the written files
reproduces the manifest exactly.

The training set is organized into six groups: {uncompressed, opus_music,
opus_speech} x {single talker, overlap}.
"""
from __future__ import annotations

import dataclasses
import glob
import math
import os
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from xane import SAMPLE_RATE, SEGMENT_SAMPLES
from xane.audio import (Waveform, apply_peak_dbfs, convolve, mix_at_snr,
                        read_wav, segment_1s, write_wav)
from xane.data import VAD_GATE_THRESHOLD
from xane.errors import ConfigError, NumericsError, XaneError
from xane.estoi import estoi
from xane.manifest import ManifestEntry, write_manifest
from xane.metrics import (CODEC_TYPES, NOISE_TYPES, AcousticLabels,
                          SegmentLabels, clarity, drr, edc, energy_vad,
                          segment_snr, t60_from_edc, vad_fraction)
from xane.rir import Rir, RoomSpec, simulate_rir, save_rir

WALL_MARGIN_M = 0.3
MIN_SRC_MIC_DIST_M = 0.3
CODEC_LENGTH_TOLERANCE = int(0.1 * SAMPLE_RATE)  # 100 ms

GROUP_KEYS = tuple(f"{c}_overlap" if o else c
                   for c in CODEC_TYPES for o in (False, True))


@dataclass
class CodecSpec:
    codec_type: str
    bitrate_kbps: float | tuple[float, float] | None = None
    external_command: str | None = None

    def __post_init__(self):
        if self.codec_type not in CODEC_TYPES:
            raise ConfigError(f"unknown codec type {self.codec_type!r}")
        compressed = self.codec_type != "uncompressed"
        if (self.bitrate_kbps is not None) != compressed:
            raise ConfigError("bitrate_kbps required exactly for compressed codecs")
        if compressed:
            br = self.bitrate_kbps
            lo, hi = (br, br) if np.isscalar(br) else (br[0], br[1])
            if not (8.0 <= lo <= hi <= 64.0):
                raise ConfigError(f"bitrate must lie in [8, 64] kbps, got {br}")
            if not np.isscalar(br):
                self.bitrate_kbps = (float(lo), float(hi))
            if self.external_command is None:
                raise ConfigError(f"codec {self.codec_type} needs an external_command")


def _ordered(name: str, r) -> tuple[float, float]:
    lo, hi = float(r[0]), float(r[1])
    if lo > hi:
        raise ConfigError(f"{name} range not ordered: {r}")
    return lo, hi


@dataclass
class SynthConfig:
    clean_dirs: list[str]
    counts: dict[str, int]
    codecs: list[CodecSpec] = field(default_factory=list)
    noise_types: list[str] = field(default_factory=lambda: ["white"])
    noise_dirs: dict[str, str] = field(default_factory=dict)
    snr_range_db: tuple[float, float] = (0.0, 30.0)
    overlap_sir_range_db: tuple[float, float] = (3.0, 12.0)
    level_range_dbfs: tuple[float, float] = (-10.0, -0.1)
    room_dims_min: tuple[float, float, float] = (3.0, 3.0, 2.2)
    room_dims_max: tuple[float, float, float] = (10.0, 8.0, 4.5)
    beta_ranges: list[tuple[float, float]] = field(
        default_factory=lambda: [(0.2, 0.9)])
    max_order: int | None = None
    rng_seed: int = 0
    val_ratio: float = 0.05
    pesq_csv: str | None = None

    def __post_init__(self):
        if not self.clean_dirs:
            raise ConfigError("at least one clean corpus directory is required")
        for key, n in self.counts.items():
            if key not in GROUP_KEYS:
                raise ConfigError(f"unknown group {key!r}; valid: {GROUP_KEYS}")
            if int(n) < 0:
                raise ConfigError(f"negative count for group {key!r}")
        self.counts = {k: int(self.counts.get(k, 0)) for k in GROUP_KEYS}
        self.snr_range_db = _ordered("snr", self.snr_range_db)
        self.overlap_sir_range_db = _ordered("sir", self.overlap_sir_range_db)
        self.level_range_dbfs = _ordered("level", self.level_range_dbfs)
        if self.level_range_dbfs[1] >= 0.0:
            raise ConfigError("peak level must stay below 0 dBFS")
        dmin = tuple(float(v) for v in self.room_dims_min)
        dmax = tuple(float(v) for v in self.room_dims_max)
        if any(a > b for a, b in zip(dmin, dmax)) or min(dmin) <= 2 * WALL_MARGIN_M:
            raise ConfigError(f"bad room dimension ranges {dmin}..{dmax}")
        self.room_dims_min, self.room_dims_max = dmin, dmax
        if not self.beta_ranges:
            raise ConfigError("beta_ranges must not be empty")
        self.beta_ranges = [_ordered("beta", r) for r in self.beta_ranges]
        for lo, hi in self.beta_ranges:
            if not (0.0 <= lo and hi < 1.0):
                raise ConfigError(f"beta range [{lo}, {hi}] outside [0, 1)")
        for t in self.noise_types:
            if t not in NOISE_TYPES:
                raise ConfigError(f"unknown noise type {t!r}; valid: {NOISE_TYPES}")
        if not (0.0 <= self.val_ratio < 1.0):
            raise ConfigError(f"val_ratio must be in [0, 1), got {self.val_ratio}")
        for ct in ("opus_music", "opus_speech"):
            needed = self.counts[ct] + self.counts[ct + "_overlap"]
            if needed > 0 and not any(c.codec_type == ct for c in self.codecs):
                raise ConfigError(f"group {ct} requested but no codec spec for it")


def apply_codec(w: Waveform, codec: CodecSpec, workdir: str | os.PathLike) -> Waveform:
    """Round-trip the waveform through the codec's external command.

    Uncompressed is an exact passthrough. The command template is tokenized
    before substitution so paths with spaces survive; output is re-read and
    trimmed/padded to the input length (deviation beyond 100 ms is an error).
    """
    if codec.codec_type == "uncompressed":
        return w
    in_path = os.path.join(workdir, "codec_in.wav")
    out_path = os.path.join(workdir, "codec_out.wav")
    write_wav(in_path, w, fmt="float32")
    mapping = {"in": in_path, "out": out_path,
               "bitrate": f"{codec.bitrate_kbps:g}"}
    try:
        cmd = [tok.format_map(mapping) for tok in shlex.split(codec.external_command)]
    except KeyError as exc:
        raise ConfigError(f"unknown placeholder {exc} in codec command") from exc
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise XaneError(f"codec command failed (exit {proc.returncode}): "
                        f"{proc.stderr.strip()}")
    out = read_wav(out_path)
    if abs(len(out) - len(w)) > CODEC_LENGTH_TOLERANCE:
        raise XaneError(f"codec changed length by {abs(len(out) - len(w))} "
                        f"samples (> {CODEC_LENGTH_TOLERANCE})")
    samples = out.samples[: len(w)]
    if len(samples) < len(w):
        samples = np.concatenate([samples, np.zeros(len(w) - len(samples))])
    return Waveform(samples)


def _loop_to_length(x: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Tile to cover n samples, starting from a random phase offset."""
    if len(x) == 0:
        raise XaneError("empty source signal")
    offset = int(rng.integers(len(x)))
    reps = math.ceil((n + offset) / len(x))
    return np.tile(x, reps)[offset : offset + n]


def _sample_point(dims, rng: np.random.Generator) -> tuple[float, float, float]:
    return tuple(float(rng.uniform(WALL_MARGIN_M, d - WALL_MARGIN_M)) for d in dims)


def _interferer_spec(spec: RoomSpec, rng: np.random.Generator) -> RoomSpec:
    """Same room and mic, independent source position."""
    src = np.asarray(spec.src)
    mic = np.asarray(spec.mic)
    for _ in range(100):
        pos = _sample_point(spec.dims, rng)
        p = np.asarray(pos)
        if (np.linalg.norm(p - src) >= MIN_SRC_MIC_DIST_M
                and np.linalg.norm(p - mic) >= MIN_SRC_MIC_DIST_M):
            return dataclasses.replace(spec, src=pos)
    raise XaneError("could not place an interferer source in the room")


def _quantize_f32(w: Waveform) -> Waveform:
    return Waveform(w.samples.astype(np.float32).astype(np.float64))


def _reverb_labels(rir: Rir) -> dict:
    try:
        t60 = t60_from_edc(edc(rir))
    except NumericsError:
        t60 = 0.0  # near-anechoic response: no measurable decay
    return {"c50_db": clarity(rir, 50.0), "c5_db": clarity(rir, 5.0),
            "t60_ms": t60, "drr_db": drr(rir),
            "rvol_m3": rir.spec.volume_m3, "refc": rir.spec.beta}


def synth_utterance(clean: Waveform, overlap_src: Waveform | None,
                    spec: RoomSpec, noise: Waveform | None, noise_type: str,
                    codec: CodecSpec, snr_db: float, sir_db: float,
                    peak_dbfs: float, rng: np.random.Generator,
                    workdir: str | os.PathLike,
                    ) -> tuple[Waveform, AcousticLabels, Rir]:
    """Degrade one utterance and compute its exact labels.

    Returns (degraded, labels, target RIR); the RIR samples are already
    float32-quantized so a saved sidecar reproduces the labels bit-exactly.
    """
    vad_frames = energy_vad(clean)
    segs = segment_1s(clean)
    if not segs:
        raise XaneError("clean utterance shorter than one 1 s segment")
    fractions = [vad_fraction(vad_frames, s) for s in segs]
    if max(fractions) < VAD_GATE_THRESHOLD:
        raise XaneError("clean utterance has no active speech segment")

    rir_t = simulate_rir(spec)
    rir_t.samples = rir_t.samples.astype(np.float32).astype(np.float64)
    if not np.any(rir_t.samples):
        raise XaneError("degenerate RIR: all-zero response")
    signal = convolve(clean, rir_t)

    if overlap_src is not None:
        rir_i = simulate_rir(_interferer_spec(spec, rng))
        looped = Waveform(_loop_to_length(overlap_src.samples, len(clean), rng))
        interferer = convolve(looped, rir_i)
        signal, _ = mix_at_snr(signal, interferer, sir_db)

    scaled_noise = None
    if noise is not None:
        prepared = Waveform(_loop_to_length(noise.samples, len(clean), rng))
        noisy, scaled_noise = mix_at_snr(signal, prepared, snr_db)
    else:
        noisy = signal

    degraded = apply_peak_dbfs(apply_codec(noisy, codec, workdir), peak_dbfs)
    degraded = _quantize_f32(degraded)

    segments = []
    for s, frac in zip(segs, fractions):
        seg_snr = segment_snr(signal, scaled_noise, s) if scaled_noise else None
        segments.append(SegmentLabels(start_ms=s.start_ms, vad_fraction=frac,
                                      snr_db=seg_snr))
    compressed = codec.codec_type != "uncompressed"
    labels = AcousticLabels(
        snr_db=snr_db if noise is not None else 0.0,
        estoi=estoi(clean, degraded),
        noise_type=noise_type,
        codec_type=codec.codec_type,
        overlap=overlap_src is not None,
        bitrate_kbps=float(codec.bitrate_kbps) if compressed else None,
        segments=segments,
        **_reverb_labels(rir_t),
    )
    return degraded, labels, rir_t


def _speaker_of(path: str) -> str:
    """Speaker id convention: stem prefix before the first underscore."""
    stem = os.path.splitext(os.path.basename(path))[0]
    return stem.split("_")[0]


def _list_wavs(dirs) -> list[str]:
    files = []
    for d in dirs:
        files.extend(sorted(glob.glob(os.path.join(d, "*.wav"))))
    return files


@dataclass
class BuildResult:
    train_manifest: str
    val_manifest: str
    n_utterances: int
    group_counts: dict[str, int]


def _read_pesq_csv(path: str) -> dict[str, float]:
    scores = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != 2:
                continue
            try:
                scores[parts[0]] = float(parts[1])
            except ValueError:
                continue  # header row
    return scores


def build_dataset(config: SynthConfig, out_dir: str | os.PathLike,
                  threads: int = 1) -> BuildResult:
    """Synthesize all groups, write audio + RIR sidecars, and emit
    manifest_train.jsonl / manifest_val.jsonl with paths relative to them.

    Each utterance is an independent job seeded by its own SeedSequence
    child, so results are identical for any thread count.
    """
    out_dir = str(out_dir)
    clean_files = _list_wavs(config.clean_dirs)
    if not clean_files:
        raise ConfigError(f"empty clean corpus: {config.clean_dirs}")
    speakers = [_speaker_of(p) for p in clean_files]

    n_overlap = sum(config.counts[k] for k in GROUP_KEYS if k.endswith("_overlap"))
    if n_overlap > 0 and len(set(speakers)) < 2:
        raise ConfigError("insufficient distinct speakers for overlap pairing")

    noise_files: dict[str, list[str]] = {}
    for t in config.noise_types:
        files = _list_wavs([config.noise_dirs[t]]) if t in config.noise_dirs else []
        if not files and t != "white":  # white may be procedural
            raise ConfigError(f"no noise files for requested type {t!r}")
        noise_files[t] = files

    jobs = []  # (id, group_codec, group_overlap)
    for codec_type in CODEC_TYPES:
        for overlap in (False, True):
            key = f"{codec_type}_overlap" if overlap else codec_type
            for i in range(config.counts[key]):
                jobs.append((f"{key}_{i:04d}", codec_type, overlap))
    if not jobs:
        raise ConfigError("all group counts are zero")

    children = np.random.SeedSequence(config.rng_seed).spawn(len(jobs) + 1)
    split_rng = np.random.default_rng(children[-1])
    pesq_map = _read_pesq_csv(config.pesq_csv) if config.pesq_csv else {}

    audio_dir = os.path.join(out_dir, "audio")
    rir_dir = os.path.join(out_dir, "rir")
    os.makedirs(audio_dir, exist_ok=True)
    os.makedirs(rir_dir, exist_ok=True)

    def run_job(args) -> ManifestEntry:
        (utt_id, codec_type, overlap), seed = args
        rng = np.random.default_rng(seed)

        clean_path = clean_files[int(rng.integers(len(clean_files)))]
        clean = read_wav(clean_path)
        overlap_src = None
        if overlap:
            spk = _speaker_of(clean_path)
            partners = [p for p, s in zip(clean_files, speakers) if s != spk]
            overlap_src = read_wav(partners[int(rng.integers(len(partners)))])

        dims = tuple(float(rng.uniform(a, b)) for a, b in
                     zip(config.room_dims_min, config.room_dims_max))
        beta_lo, beta_hi = config.beta_ranges[int(rng.integers(len(config.beta_ranges)))]
        beta = float(rng.uniform(beta_lo, beta_hi))
        src = _sample_point(dims, rng)
        for _ in range(100):
            mic = _sample_point(dims, rng)
            if np.linalg.norm(np.asarray(mic) - np.asarray(src)) >= MIN_SRC_MIC_DIST_M:
                break
        else:
            raise XaneError("could not place source and microphone")
        spec = RoomSpec(dims=dims, beta=beta, src=src, mic=mic,
                        max_order=config.max_order)

        if codec_type == "uncompressed":
            codec = CodecSpec("uncompressed")
        else:
            options = [c for c in config.codecs if c.codec_type == codec_type]
            codec = options[int(rng.integers(len(options)))]
            br = codec.bitrate_kbps
            if not np.isscalar(br):
                br = float(np.round(rng.uniform(br[0], br[1])))
            codec = dataclasses.replace(codec, bitrate_kbps=float(br))

        noise_type = config.noise_types[int(rng.integers(len(config.noise_types)))]
        if noise_files[noise_type]:
            nfiles = noise_files[noise_type]
            noise = read_wav(nfiles[int(rng.integers(len(nfiles)))])
        else:
            noise = Waveform(rng.standard_normal(len(clean)))

        snr = float(rng.uniform(*config.snr_range_db))
        sir = float(rng.uniform(*config.overlap_sir_range_db))
        peak = float(rng.uniform(*config.level_range_dbfs))

        with tempfile.TemporaryDirectory(prefix=utt_id, dir=out_dir) as workdir:
            degraded, labels, rir = synth_utterance(
                clean, overlap_src, spec, noise, noise_type, codec,
                snr, sir, peak, rng, workdir)
        if utt_id in pesq_map:
            labels.pesq = pesq_map[utt_id]

        degraded_path = os.path.join(audio_dir, f"{utt_id}.wav")
        write_wav(degraded_path, degraded, fmt="float32")
        rir_path = os.path.join(rir_dir, f"{utt_id}.wav")
        save_rir(rir, rir_path)
        return ManifestEntry(
            id=utt_id,
            degraded=os.path.relpath(degraded_path, out_dir),
            clean=os.path.relpath(clean_path, out_dir),
            rir=os.path.relpath(rir_path, out_dir),
            group_codec=codec_type,
            group_overlap=overlap,
            labels=labels,
        )

    work = list(zip(jobs, children[:-1]))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(run_job, work))
    else:
        entries = [run_job(w) for w in work]
    entries.sort(key=lambda e: e.id)

    ids = [e.id for e in entries]
    n_val = max(1, round(len(ids) * config.val_ratio)) if config.val_ratio > 0 else 0
    val_ids = set(np.asarray(ids)[split_rng.permutation(len(ids))[:n_val]])
    train_path = os.path.join(out_dir, "manifest_train.jsonl")
    val_path = os.path.join(out_dir, "manifest_val.jsonl")
    write_manifest([e for e in entries if e.id not in val_ids], train_path)
    write_manifest([e for e in entries if e.id in val_ids], val_path)

    group_counts = {k: n for k, n in config.counts.items() if n > 0}
    return BuildResult(train_manifest=train_path, val_manifest=val_path,
                       n_utterances=len(entries), group_counts=group_counts)
