"""End-to-end runs: excerpt and gap layout, retrieval, reconstruction, report."""

from __future__ import annotations

import contextlib
import json
import time
from dataclasses import replace

import numpy as np

from . import _kernels
from .baselines import ar_inpaint, gap_metrics, sim_inpaint
from .config import RunConfig
from .diffusion import heun_stochastic_sample, log_schedule
from .dsp import resample
from .errors import InvalidIntervalError, SimDPSError
from .external import ExternalDenoiser
from .guidance import GuidanceState, PosteriorScore
from .priors import fit_gaussian_demo, fit_gmm_demo
from .search import build_corpus, search
from .signal import AudioSignal, GapMask, apply_mask

__all__ = [
    "REPORT_VERSION",
    "Layout",
    "RunResult",
    "layout_for",
    "make_denoiser",
    "run_inpaint",
    "report_json",
    "synth_demo_track",
]

REPORT_VERSION = 1


@contextlib.contextmanager
def stage(name):
    """Tag library errors with the pipeline stage they came from."""
    try:
        yield
    except SimDPSError as exc:
        if getattr(exc, "stage", None) is None:
            exc.stage = name
        raise


class Layout:
    """Excerpt position in the input and gap position in the excerpt, in samples."""

    def __init__(self, cfg, n_input):
        rate = cfg.working_rate
        n_ex = min(int(round(cfg.excerpt_len * rate)), n_input)
        if cfg.excerpt_start is None:
            start = (n_input - n_ex) // 2
        else:
            start = int(round(cfg.excerpt_start * rate))
        if start < 0 or start + n_ex > n_input:
            raise InvalidIntervalError(
                f"excerpt [{start}, {start + n_ex}) does not fit an input of {n_input} samples"
            )
        g = int(round(cfg.gap_duration * rate))
        t_s = (n_ex - g) // 2 if cfg.gap_start is None else int(round(cfg.gap_start * rate))
        self.excerpt_start = start
        self.excerpt_stop = start + n_ex
        self.mask = GapMask(n_ex, t_s, t_s + g - 1)

    def to_dict(self):
        return {
            "excerpt_start": self.excerpt_start,
            "excerpt_stop": self.excerpt_stop,
            "n": self.mask.n,
            "t_s": self.mask.t_s,
            "t_e": self.mask.t_e,
        }


def layout_for(cfg, n_input):
    with stage("layout"):
        return Layout(cfg, n_input)


def _at_rate(signal, rate):
    return signal if signal.sample_rate == rate else resample(signal, rate)


def _prior_training_audio(track, layout):
    """The input track with the excerpt's gap cut out."""
    x = track.samples
    a = layout.excerpt_start + layout.mask.t_s
    b = layout.excerpt_start + layout.mask.t_e + 1
    return [AudioSignal(p, track.sample_rate) for p in (x[:a], x[b:]) if p.size]


def make_denoiser(cfg, training):
    """Build the configured denoiser; external sessions must be closed by the caller."""
    if cfg.denoiser == "gaussian-demo":
        return fit_gaussian_demo(training)
    if cfg.denoiser == "gmm-demo":
        return fit_gmm_demo(
            training,
            frame=int(cfg.gmm["frame"]),
            components=int(cfg.gmm["components"]),
            seed=cfg.seed,
        )
    return ExternalDenoiser(cfg.denoiser, timeout=cfg.denoiser_timeout)


class RunResult:
    def __init__(self, output, report, observation, guide=None):
        self.output = output
        self.report = report
        self.observation = observation
        self.guide = guide


def run_inpaint(cfg: RunConfig, track: AudioSignal, corpus=None, reference=None):
    """Reconstruct the gap of ``track``'s excerpt with ``cfg.method``.

    Without ``corpus`` the retrieval corpus is the input track outside the
    excerpt. Metrics are computed against ``reference`` (the clean excerpt)
    when given, otherwise against the input excerpt when its gap is not
    silent.
    """
    timing = {}
    t0 = time.perf_counter()
    rate = cfg.working_rate
    with stage("load"):
        track = _at_rate(track, rate)
        corpus = None if corpus is None else [_at_rate(c, rate) for c in corpus]
        reference = None if reference is None else _at_rate(reference, rate)
    layout = layout_for(cfg, len(track))
    mask = layout.mask
    excerpt = track.samples[layout.excerpt_start:layout.excerpt_stop]
    obs = apply_mask(AudioSignal(excerpt, rate), mask)

    match = None
    if cfg.uses_search:
        t = time.perf_counter()
        with stage("search"):
            if corpus is None:
                corpus = build_corpus(track, layout.excerpt_start, layout.excerpt_stop)
            match = search(corpus, obs, cfg.search)
        timing["search_s"] = time.perf_counter() - t

    trace = []
    t = time.perf_counter()
    guide = None if match is None else match.guide
    if cfg.method == "lpc":
        with stage("lpc"):
            out = ar_inpaint(obs, order=cfg.ar_order)
    elif cfg.method == "sim":
        with stage("sim"):
            out = sim_inpaint(obs, guide, fade_ms=cfg.fade_ms)
    else:
        out = _diffuse(cfg, obs, track, layout, guide, trace)
    timing["reconstruct_s"] = time.perf_counter() - t
    timing["total_s"] = time.perf_counter() - t0

    ref = None
    if reference is not None:
        ref = reference.samples
        if layout.mask.n != ref.size:
            ref = ref[layout.excerpt_start:layout.excerpt_stop]
    elif np.any(excerpt[mask.gap]):
        ref = excerpt
    metrics = None
    if ref is not None:
        with stage("evaluate"):
            metrics = gap_metrics(out, ref, mask)
            if guide is not None:
                d = out.samples[mask.gap] - guide.samples[mask.gap]
                metrics["gap_rmse_to_guide"] = float(np.sqrt(np.mean(d * d)))

    report = {
        "report_version": REPORT_VERSION,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "layout": layout.to_dict(),
        "candidate": None if match is None else match.summary(),
        "sigma_trace": trace,
        "metrics": metrics,
        "backend": _kernels.BACKEND,
        "timing": timing,
    }
    return RunResult(out, report, obs, guide)


def _diffuse(cfg, obs, track, layout, guide, trace):
    gcfg = cfg.resolved_guidance()
    external = cfg.denoiser not in ("gaussian-demo", "gmm-demo")
    if external and gcfg.grad_mode == "exact_vjp":
        gcfg = replace(gcfg, grad_mode="identity_jacobian")
    with stage("denoiser"):
        den = make_denoiser(cfg, _prior_training_audio(track, layout))
    try:
        sched = log_schedule(
            int(cfg.schedule["steps"]),
            float(cfg.schedule["sigma_min"]),
            float(cfg.schedule["sigma_max"]),
        )
        state = GuidanceState(obs, den, guide if gcfg.omega_aux > 0 else None)
        score = PosteriorScore(state, gcfg)

        def record(i, sigma_hat, sigma_next, x):
            trace.append([float(sigma_hat), float(sigma_next)])

        with stage("sample"):
            x = heun_stochastic_sample(
                score, sched, cfg.sampler_config(), n=obs.mask.n, callback=record
            )
    finally:
        if external:
            den.close()
    out = np.array(obs.y.samples, copy=True)
    out[obs.mask.gap] = x[obs.mask.gap]
    return AudioSignal(out, obs.sample_rate)


def report_json(report):
    return json.dumps(report, indent=2, sort_keys=False, allow_nan=False) + "\n"


def synth_demo_track(rate=44100.0, seconds=20.0, period=2.0, seed=0):
    """Repetitive piano-like phrase: decaying harmonic notes, slightly varied per repeat."""
    rng = np.random.default_rng(seed)
    n = int(round(seconds * rate))
    x = np.zeros(n)
    midi = np.array([60, 64, 67, 72, 71, 67, 64, 62])
    step = period / midi.size
    note_len = int(round(1.5 * step * rate))
    t = np.arange(note_len) / rate
    harmonics = np.arange(1, 7)
    amps = 0.6 ** (harmonics - 1)
    for rep in range(int(np.ceil(seconds / period))):
        for k, m in enumerate(midi):
            start = int(round((rep * period + k * step) * rate))
            if start >= n:
                break
            f0 = 440.0 * 2.0 ** ((m - 69) / 12.0)
            vel = 0.2 * (1.0 + 0.05 * rng.standard_normal())
            decay = np.exp(-t * (3.0 + 0.5 * harmonics[:, None]))
            partials = amps[:, None] * decay * np.sin(2 * np.pi * f0 * harmonics[:, None] * t)
            note = vel * partials.sum(axis=0) * np.minimum(1.0, t / 0.003)
            stop = min(n, start + note_len)
            x[start:stop] += note[: stop - start]
    x += 1e-3 * rng.standard_normal(n)
    return AudioSignal(x, rate)
