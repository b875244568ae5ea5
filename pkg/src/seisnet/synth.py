"""Synthetic continuous traces with geyser-like events and look-alike transients.

Each event is an emergence phase (an amplitude-ramped oscillation at the
emergence frequency under a wobbling envelope) followed directly by one or
more impulsive bursts at the impulsive frequency, each with a sharp onset
and exponential decay. Background noise is white Gaussian plus a 1-10 Hz
band-limited component. Confounders are broadband chirps or noise bursts
that share the amplitude range of events but not their two-phase shape;
they are recorded as hand-picked negatives, never as events.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from scipy import signal

from .data import DAY_SAMPLES, SAMPLE_RATE, LabelSet, Trace

MINI_DAY_SAMPLES = 1_728_000
MAX_EVENT_SPAN = 12_000


@dataclass(frozen=True)
class SynthConfig:
    days: int = 1
    day_length: int = DAY_SAMPLES
    sample_rate: float = SAMPLE_RATE
    events_min: int = 0
    events_max: int = 2
    span_min: int = 4000
    span_max: int = 12000
    emergence_freq: float = 30.0
    impulsive_freq: float = 60.0
    freq_jitter: float = 0.5
    peaks_min: int = 1
    peaks_max: int = 4
    snr_min: float = 2.0
    snr_max: float = 6.0
    noise_std: float = 1.0
    colored_ratio: float = 1.0
    colored_low: float = 1.0
    colored_high: float = 10.0
    confounders_per_day: float = 2.0
    confounder_low: float = 5.0
    confounder_high: float = 80.0
    guard: int = 18000
    seed: int = 0
    station: str = "SYN"

    def __post_init__(self):
        nyquist = self.sample_rate / 2
        for name in ("emergence_freq", "impulsive_freq", "colored_high", "confounder_high"):
            if not 0 < getattr(self, name) + (self.freq_jitter if name.endswith("_freq") else 0) < nyquist:
                raise ValueError(f"{name}={getattr(self, name)} must lie below the Nyquist frequency {nyquist}")
        if not 0 <= self.events_min <= self.events_max:
            raise ValueError("need 0 <= events_min <= events_max")
        if not 1 <= self.span_min <= self.span_max <= MAX_EVENT_SPAN:
            raise ValueError(f"event spans must satisfy 1 <= min <= max <= {MAX_EVENT_SPAN}")
        if not 1 <= self.peaks_min <= self.peaks_max:
            raise ValueError("need 1 <= peaks_min <= peaks_max")
        if not 0 < self.snr_min <= self.snr_max:
            raise ValueError("need 0 < snr_min <= snr_max")
        if self.days < 0 or self.day_length < 1 or self.confounders_per_day < 0 or self.guard < 0:
            raise ValueError("days, guard and confounder rate must be non-negative, day_length positive")

    @classmethod
    def day(cls, **kw) -> "SynthConfig":
        """Full-length days (17,280,001 samples) with 4,000-12,000-sample events."""
        return cls(**kw)

    @classmethod
    def mini_day(cls, **kw) -> "SynthConfig":
        """1,728,000-sample days scaled to 4,500-sample windows: events of 1,000-3,000 samples."""
        base = dict(day_length=MINI_DAY_SAMPLES, span_min=1000, span_max=3000, guard=4500)
        base.update(kw)
        return cls(**base)

    @classmethod
    def from_config(cls, parser: configparser.ConfigParser, section="synth", **overrides) -> "SynthConfig":
        preset = parser.get(section, "preset", fallback="day") if parser.has_section(section) else "day"
        if preset not in ("day", "mini_day"):
            raise ValueError(f"[{section}] unknown preset {preset!r}")
        base = getattr(cls, preset)()
        kw = {}
        types = {f.name: type(getattr(base, f.name)) for f in fields(cls)}
        if parser.has_section(section):
            for key, raw in parser[section].items():
                if key == "preset":
                    continue
                if key not in types:
                    raise ValueError(f"[{section}] unknown key {key!r}")
                kw[key] = types[key](raw)
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return replace(base, **kw)

    def to_config(self, parser=None, section="synth"):
        parser = parser or configparser.ConfigParser()
        parser[section] = {k: str(v) for k, v in asdict(self).items()}
        return parser


def _smooth_noise(rng, n, width):
    raw = rng.standard_normal(n + width)
    kern = np.hanning(max(width, 3))
    sm = np.convolve(raw, kern / kern.sum(), mode="same")[:n]
    sd = sm.std()
    return sm / sd if sd > 0 else sm


def synth_event(rng, span: int, cfg: SynthConfig) -> tuple[np.ndarray, int, int]:
    """Clean event waveform of ``span`` samples at unit RMS.

    Returns ``(waveform, emergence_length, impulsive_peak_count)``.
    """
    fs = cfg.sample_rate
    e_len = int(span * rng.uniform(0.45, 0.65))
    i_len = span - e_len
    f1 = cfg.emergence_freq + rng.uniform(-cfg.freq_jitter, cfg.freq_jitter)
    f2 = cfg.impulsive_freq + rng.uniform(-cfg.freq_jitter, cfg.freq_jitter)

    t = np.arange(e_len)
    ramp = (t / max(e_len - 1, 1)) ** rng.uniform(1.0, 2.0)
    wobble = _smooth_noise(rng, e_len, int(0.25 * fs))
    env = np.clip(ramp * (1.0 + 0.3 * wobble), 0.0, None)
    emergence = env * np.sin(2 * np.pi * f1 * t / fs + rng.uniform(0, 2 * np.pi))

    peaks = int(rng.integers(cfg.peaks_min, cfg.peaks_max + 1))
    impulsive = np.zeros(i_len)
    for k in range(peaks):
        onset = int(i_len * (k + rng.uniform(0.0, 0.4)) / peaks)
        seg = np.arange(i_len - onset)
        tau = rng.uniform(0.05, 0.2) * fs
        amp = rng.uniform(1.5, 3.0)
        impulsive[onset:] += amp * np.exp(-seg / tau) * np.sin(2 * np.pi * f2 * seg / fs + rng.uniform(0, 2 * np.pi))
    # fade the tail so the waveform ends inside its labelled span
    fade = max(int(0.05 * i_len), 1)
    impulsive[-fade:] *= np.cos(np.linspace(0, np.pi / 2, fade)) ** 2

    wave = np.concatenate([emergence, impulsive])
    rms = np.sqrt(np.mean(wave * wave))
    return wave / rms, e_len, peaks


def synth_confounder(rng, span: int, cfg: SynthConfig) -> np.ndarray:
    """Broadband transient at unit RMS: a swept chirp or an enveloped noise burst."""
    fs = cfg.sample_rate
    lo, hi = cfg.confounder_low, cfg.confounder_high
    t = np.arange(span) / fs
    if rng.random() < 0.5:
        f_a = rng.uniform(lo, lo + 0.2 * (hi - lo))
        f_b = rng.uniform(hi - 0.2 * (hi - lo), hi)
        if rng.random() < 0.5:
            f_a, f_b = f_b, f_a
        wave = signal.chirp(t, f0=f_a, t1=t[-1], f1=f_b, method="linear", phi=rng.uniform(0, 360))
        env = np.hanning(span)
    else:
        sos = signal.butter(4, [lo, hi], btype="bandpass", fs=fs, output="sos")
        wave = signal.sosfilt(sos, rng.standard_normal(span + 200))[200:]
        attack = max(int(span * rng.uniform(0.05, 0.3)), 1)
        env = np.ones(span)
        env[:attack] = np.linspace(0, 1, attack)
        env[attack:] = np.exp(-np.arange(span - attack) / (span * rng.uniform(0.2, 0.5)))
    wave = wave * env
    return wave / np.sqrt(np.mean(wave * wave))


def background_noise(rng, n: int, cfg: SynthConfig) -> np.ndarray:
    noise = rng.normal(0.0, cfg.noise_std, n)
    if cfg.colored_ratio > 0:
        sos = signal.butter(4, [cfg.colored_low, cfg.colored_high], btype="bandpass",
                            fs=cfg.sample_rate, output="sos")
        pad = int(4 * cfg.sample_rate)
        colored = signal.sosfilt(sos, rng.standard_normal(n + pad))[pad:]
        colored *= cfg.colored_ratio * cfg.noise_std / colored.std()
        noise += colored
    return noise


def _place(rng, spans: list[int], n: int, guard: int, max_tries: int = 10_000) -> list[int]:
    if sum(spans) + guard * max(len(spans) - 1, 0) > n:
        raise ValueError(f"cannot place {len(spans)} transients totalling {sum(spans)} samples "
                         f"with guard {guard} in a trace of {n} samples")
    placed: list[tuple[int, int]] = []
    starts = []
    for span in spans:
        for _ in range(max_tries):
            s = int(rng.integers(0, n - span + 1))
            if all(s + span + guard <= a or b + guard <= s for a, b in placed):
                placed.append((s, s + span))
                starts.append(s)
                break
        else:
            raise ValueError(f"infeasible placement: no room for a {span}-sample transient after {max_tries} tries")
    return starts


def generate_day(rng, cfg: SynthConfig, index: int = 0) -> tuple[Trace, LabelSet]:
    n = cfg.day_length
    n_events = int(rng.integers(cfg.events_min, cfg.events_max + 1))
    n_conf = int(rng.poisson(cfg.confounders_per_day))
    spans = [int(rng.integers(cfg.span_min, cfg.span_max + 1)) for _ in range(n_events + n_conf)]
    starts = _place(rng, spans, n, cfg.guard)
    x = background_noise(rng, n, cfg)
    events = []
    negatives = []
    for k, (s, span) in enumerate(zip(starts, spans)):
        if k < n_events:
            wave = synth_event(rng, span, cfg)[0]
            events.append((s, s + span))
        else:
            wave = synth_confounder(rng, span, cfg)
            negatives.append((s, s + span))
        seg = x[s:s + span]
        noise_rms = np.sqrt(np.mean(seg * seg))
        x[s:s + span] += rng.uniform(cfg.snr_min, cfg.snr_max) * noise_rms * wave
    trace = Trace(x.astype(np.float32), cfg.sample_rate, 86400.0 * index, cfg.station,
                  f"{cfg.station}.day{index:03d}")
    return trace, LabelSet(events, n, negatives)


def generate_synthetic(cfg: SynthConfig) -> tuple[list[Trace], list[LabelSet]]:
    """``cfg.days`` independent traces and their labels; bit-identical per seed."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.days)
    traces, labels = [], []
    for i, ss in enumerate(seeds):
        tr, ls = generate_day(np.random.default_rng(ss), cfg, i)
        traces.append(tr)
        labels.append(ls)
    return traces, labels
