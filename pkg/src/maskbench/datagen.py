"""Synthetic stand-in for two/three-speaker mixture corpora.

Each "speaker" role owns a disjoint frequency band.  A source is either a
harmonic tone complex whose partials fall inside that band or band-passed
white noise, under a slow random amplitude envelope.  Sources are mixed at a
random relative SNR in [-5, 5] dB and written as 16-bit WAV files with a
JSON manifest.
"""
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError
from .frontend import Waveform, quantize, read_wav, write_wav

MANIFEST_VERSION = 1
FAMILIES = ("harmonic", "bandnoise")
SPLITS = ("train", "valid", "test")
PEAK = 0.7
MIX_PEAK = 0.9


@dataclass
class SourceSpec:
    family: str = "harmonic"
    identity_index: int = 0
    duration_s: float = 1.0
    sample_rate: int = 8000
    num_identities: int = 2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown source family {self.family!r}")
        if not 0 <= self.identity_index < self.num_identities:
            raise ConfigError(f"identity_index {self.identity_index} outside [0, {self.num_identities})")
        if self.duration_s <= 0 or self.sample_rate <= 0:
            raise ConfigError("duration and sample_rate must be positive")


def identity_band(index, num_identities, sample_rate=8000):
    """(low, high) Hz of an identity's band; bands are disjoint with 25% gaps."""
    lo, hi = 100.0, 0.475 * sample_rate
    width = (hi - lo) / num_identities
    start = lo + index * width
    return start, start + 0.75 * width


def _envelope(n, sample_rate, rng):
    t = np.arange(n) / sample_rate
    env = np.full(n, 0.6)
    for _ in range(2):
        rate = rng.uniform(0.5, 4.0)
        env += rng.uniform(0.1, 0.2) * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
    return np.clip(env, 0.1, None)


def _harmonic(n, sample_rate, band, rng):
    lo, hi = band
    bw = hi - lo
    f0 = rng.uniform(bw / 6.0, bw / 4.5)
    first = math.ceil(lo / f0)
    available = [m * f0 for m in range(first, first + 8) if lo <= m * f0 <= hi]
    count = min(int(rng.integers(3, 6)), len(available))
    t = np.arange(n) / sample_rate
    x = np.zeros(n)
    for f in available[:count]:
        x += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    return x


def _bandnoise(n, sample_rate, band, rng):
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec[(freqs < band[0]) | (freqs > band[1])] = 0
    return np.fft.irfft(spec, n)


def gen_source(spec, rng):
    """Draw one source waveform for ``spec``, peak-normalised to 0.7."""
    n = int(round(spec.duration_s * spec.sample_rate))
    band = identity_band(spec.identity_index, spec.num_identities, spec.sample_rate)
    if spec.family == "harmonic":
        x = _harmonic(n, spec.sample_rate, band, rng)
    else:
        x = _bandnoise(n, spec.sample_rate, band, rng)
    x = x * _envelope(n, spec.sample_rate, rng)
    peak = np.max(np.abs(x))
    return Waveform(x * (PEAK / peak) if peak > 0 else x, spec.sample_rate)


@dataclass
class MixtureRecord:
    mixture: Waveform
    sources: list
    snr_db: list
    seed: int = 0


def mix(sources, snrs_db, rng=None, snr_range=(-5.0, 5.0), quantized=True):
    """Scale sources 2..C to their SNR relative to source 1 and sum them.

    ``snrs_db[k-1]`` is 10 log10(P_k / P_1).  The whole set is then scaled
    so the mixture peak stays below 0.9.  With ``quantized`` the stored
    sources are rounded to the 16-bit grid first, so the mixture equals
    their sum exactly both in memory and after a WAV round trip.
    """
    waves = [s if isinstance(s, Waveform) else Waveform(s) for s in sources]
    if len({len(w) for w in waves}) != 1:
        raise InputError("all sources must have the same length")
    if len(snrs_db) != len(waves) - 1:
        raise InputError(f"need {len(waves) - 1} relative SNRs, got {len(snrs_db)}")
    for s in snrs_db:
        if not snr_range[0] <= s <= snr_range[1]:
            raise InputError(f"relative SNR {s} dB outside [{snr_range[0]}, {snr_range[1]}]")
    ref_power = np.mean(waves[0].samples ** 2)
    scaled = [waves[0].samples]
    for w, s in zip(waves[1:], snrs_db):
        power = np.mean(w.samples ** 2)
        scaled.append(w.samples * math.sqrt(ref_power / power * 10.0 ** (s / 10.0)))
    scaled = np.array(scaled)
    peak = np.max(np.abs(scaled.sum(axis=0)))
    if peak > MIX_PEAK:
        scaled *= MIX_PEAK / peak
    if quantized:
        scaled = quantize(scaled).astype(np.float64) / 32768.0
    rate = waves[0].sample_rate
    return MixtureRecord(
        mixture=Waveform(scaled.sum(axis=0), rate),
        sources=[Waveform(s, rate) for s in scaled],
        snr_db=[0.0] + [float(s) for s in snrs_db],
    )


@dataclass
class DataConfig:
    n_train: int = 500
    n_valid: int = 50
    n_test: int = 50
    num_sources: int = 2
    duration: float = 1.0
    sample_rate: int = 8000
    family: str = "mixed"
    snr_range: list = field(default_factory=lambda: [-5.0, 5.0])
    seed: int = 0
    manifest: str = None

    def __post_init__(self):
        if self.num_sources < 2:
            raise ConfigError("separation needs at least two sources (num_sources >= 2)")
        if min(self.n_train, self.n_valid, self.n_test) < 0:
            raise ConfigError("split sizes must be non-negative")
        if self.family not in FAMILIES + ("mixed",):
            raise ConfigError(f"unknown family {self.family!r}")
        if len(self.snr_range) != 2 or self.snr_range[0] > self.snr_range[1]:
            raise ConfigError("snr_range must be [low, high]")

    def split_sizes(self):
        return {"train": self.n_train, "valid": self.n_valid, "test": self.n_test}


def record_seed(seed, split, index):
    return int(np.random.SeedSequence([seed, SPLITS.index(split), index]).generate_state(1)[0])


def gen_record(config, split, index):
    seed = record_seed(config.seed, split, index)
    rng = np.random.default_rng(seed)
    sources = []
    for k in range(config.num_sources):
        family = config.family if config.family != "mixed" else FAMILIES[int(rng.integers(2))]
        spec = SourceSpec(family, k, config.duration, config.sample_rate, config.num_sources)
        sources.append(gen_source(spec, rng))
    lo, hi = config.snr_range
    snrs = rng.uniform(lo, hi, size=config.num_sources - 1)
    rec = mix(sources, list(snrs), rng, snr_range=(lo, hi))
    rec.seed = seed
    return rec


def make_dataset(config, out_dir):
    """Write every split to ``out_dir`` and return the manifest dict."""
    out = Path(out_dir)
    records = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for split, count in config.split_sizes().items():
            (out / split).mkdir(exist_ok=True)
            for i in range(count):
                rec = gen_record(config, split, i)
                mix_path = f"{split}/mixture_{i}.wav"
                write_wav(out / mix_path, rec.mixture)
                src_paths = []
                for k, s in enumerate(rec.sources, start=1):
                    src_paths.append(f"{split}/s{k}_{i}.wav")
                    write_wav(out / src_paths[-1], s)
                records.append({"id": f"{split}_{i}", "split": split, "mixture": mix_path,
                                "sources": src_paths, "snrs": rec.snr_db, "seed": rec.seed})
        cfg = asdict(config)
        cfg.pop("manifest", None)
        manifest = {"version": MANIFEST_VERSION, "config": cfg, "records": records}
        path = out / "manifest.json"
        path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"writing dataset under {out}: {exc}") from exc
    manifest["path"] = str(path)
    return manifest


def load_manifest(path):
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    if data.get("version") != MANIFEST_VERSION:
        raise InputError(f"{path}: unsupported manifest version {data.get('version')!r}")
    data["root"] = str(path.parent)
    return data


def load_split(manifest, split):
    """Arrays for one split: (ids, mixtures (n, L), sources (n, C, L))."""
    if not isinstance(manifest, dict):
        manifest = load_manifest(manifest)
    root = Path(manifest["root"])
    ids, mixes, srcs = [], [], []
    for rec in manifest["records"]:
        if rec["split"] != split:
            continue
        ids.append(rec["id"])
        mixes.append(read_wav(root / rec["mixture"]).samples)
        srcs.append([read_wav(root / p).samples for p in rec["sources"]])
    if not ids:
        return ids, np.zeros((0, 0)), np.zeros((0, 0, 0))
    return ids, np.array(mixes), np.array(srcs)
