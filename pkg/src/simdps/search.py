"""Context-similarity retrieval of a guide segment from a corpus.

The search runs in two stages. A coarse scan evaluates the weighted
multi-feature context cost at every feature-frame offset of every corpus
source (at the search rate). A fine stage then aligns the winner sample by
sample using boundary continuity, first at the search rate and again at
the working rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .dsp import StftConfig, chromagram, resample, resampler_halfwidth, stft_magnitude
from .errors import AlignmentError, ConfigError, EmptyCorpusError, NoCandidateError
from .signal import AudioSignal, Observation, as_samples

__all__ = [
    "FeatureSpec",
    "SearchConfig",
    "ContextLayout",
    "CandidateMatch",
    "CoarseResult",
    "IndexedSource",
    "build_corpus",
    "index_corpus",
    "compute_features",
    "similarity_cost",
    "coarse_search",
    "refine_offset",
    "extract_guide",
    "search",
]

FEATURE_KINDS = ("stft_mag", "chroma")


@dataclass(frozen=True, eq=False)
class FeatureSpec:
    """One feature space in the cost: what to extract, its weight, its ramp.

    ``ramp_seconds`` is the distance from the gap boundary at which the frame
    weight reaches zero (``None`` means the full context length).
    ``frame_weights`` is filled in by :meth:`bind` for a concrete layout, or
    can be given directly.
    """

    kind: str
    alpha: float = 1.0
    ramp_seconds: float | None = None
    frame_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ConfigError(f"unknown feature kind {self.kind!r}")
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise ConfigError(f"alpha must be finite and >= 0, got {self.alpha}")
        if self.frame_weights is not None:
            w = np.asarray(self.frame_weights, dtype=np.float64)
            if w.ndim != 1 or np.any(w < 0) or np.any(w > 1):
                raise ConfigError("frame weights must be a 1-D array in [0, 1]")
            object.__setattr__(self, "frame_weights", w)

    def bind(self, layout):
        return replace(self, frame_weights=layout.ramp_weights(self.ramp_seconds))

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha, "ramp_seconds": self.ramp_seconds}


def default_specs():
    return (
        FeatureSpec("stft_mag", alpha=1.0, ramp_seconds=0.75),
        FeatureSpec("chroma", alpha=1.0, ramp_seconds=None),
    )


@dataclass(frozen=True)
class SearchConfig:
    search_rate: float = 12000.0
    context_len: float = 3.0
    coarse_hop: int = 256
    specs: tuple = field(default_factory=default_specs)
    stft: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        if self.coarse_hop < 1:
            raise ConfigError("coarse_hop must be >= 1")
        if self.coarse_hop % self.stft.hop:
            raise ConfigError(
                f"coarse_hop ({self.coarse_hop}) must be a multiple of the feature hop "
                f"({self.stft.hop})"
            )
        if not self.context_len > 0:
            raise ConfigError("context_len must be positive")
        if not self.search_rate > 0:
            raise ConfigError("search_rate must be positive")
        if not self.specs:
            raise ConfigError("at least one feature spec is required")
        object.__setattr__(self, "specs", tuple(self.specs))

    def to_dict(self):
        return {
            "search_rate": self.search_rate,
            "context_len": self.context_len,
            "coarse_hop": self.coarse_hop,
            "specs": [s.to_dict() for s in self.specs],
            "stft": {
                "window_len": self.stft.window_len,
                "fft_size": self.stft.fft_size,
                "hop": self.stft.hop,
                "window": self.stft.window,
            },
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "specs" in d:
            d["specs"] = tuple(FeatureSpec(**s) for s in d["specs"])
        if "stft" in d:
            d["stft"] = StftConfig(**d["stft"])
        return cls(**d)


@dataclass(frozen=True)
class ContextLayout:
    """Frame grid of an ``n``-sample window and each frame's role in the cost.

    A frame takes part only if it lies wholly inside one of the two context
    regions and keeps ``guard`` samples clear of the gap (the guard absorbs
    resampler ringing off the zeroed gap). ``distance`` is the frame-centre
    distance to the nearest gap boundary in seconds.
    """

    n: int
    t_s: int
    t_e: int
    rate: float
    context: int
    guard: int
    stft: StftConfig

    @property
    def n_frames(self):
        return self.stft.n_frames(self.n)

    def frame_distances(self):
        win, hop = self.stft.window_len, self.stft.hop
        q = np.arange(self.n_frames)
        first = q * hop
        last = first + win - 1
        centre = first + win / 2.0
        before = (last <= self.t_s - 1 - self.guard) & (first >= self.t_s - self.context)
        after = (first >= self.t_e + 1 + self.guard) & (last <= self.t_e + self.context)
        dist = np.full(q.size, np.inf)
        dist[before] = (self.t_s - centre[before]) / self.rate
        dist[after] = (centre[after] - (self.t_e + 1)) / self.rate
        return dist

    def ramp_weights(self, ramp_seconds=None):
        ramp = self.context / self.rate if ramp_seconds is None else ramp_seconds
        d = self.frame_distances()
        w = np.zeros(d.size)
        ok = np.isfinite(d)
        w[ok] = np.clip(1.0 - d[ok] / ramp, 0.0, 1.0)
        return w


def compute_features(x, cfg, kinds=FEATURE_KINDS):
    """STFT magnitudes and (optionally) chroma sharing one framing."""
    stft = stft_magnitude(x, cfg.stft)
    out = {"stft_mag": stft}
    if "chroma" in kinds:
        out["chroma"] = chromagram(stft, cfg.search_rate)
    return out


def similarity_cost(obs_features, cand_features, specs):
    """Weighted Euclidean context distance summed over feature spaces.

    ``obs_features`` / ``cand_features`` map feature kind to a
    :class:`FeatureMatrix` (or a plain frames x bins array) on the same frame
    grid; each spec must carry ``frame_weights`` for that grid.
    """
    total = 0.0
    for spec in specs:
        if spec.frame_weights is None:
            raise AlignmentError(f"spec {spec.kind!r} has no frame weights bound")
        a = _frames_of(obs_features[spec.kind])
        b = _frames_of(cand_features[spec.kind])
        w = spec.frame_weights
        if a.shape != b.shape or a.shape[0] != w.size:
            raise AlignmentError(
                f"{spec.kind}: frame grids differ ({a.shape} vs {b.shape}, {w.size} weights)"
            )
        if spec.alpha == 0:
            continue
        total += spec.alpha * _kernels.sliding_cost(a, b, w, 1)[0]
    return float(total)


def _frames_of(f):
    return f.frames if hasattr(f, "frames") else np.asarray(f, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class IndexedSource:
    """A corpus item at both rates plus its search-rate features."""

    source_id: int
    working: AudioSignal
    searched: AudioSignal
    features: dict


def index_corpus(corpus, cfg):
    """Resample every source to the search rate and extract its features once."""
    if not corpus:
        raise EmptyCorpusError("corpus is empty")
    if isinstance(corpus[0], IndexedSource):
        return list(corpus)
    kinds = {s.kind for s in cfg.specs}
    out = []
    for i, src in enumerate(corpus):
        low = resample(src, cfg.search_rate)
        feats = compute_features(low, cfg, kinds) if len(low) >= cfg.stft.window_len else None
        out.append(IndexedSource(i, src, low, feats))
    return out


def build_corpus(track, excerpt_start, excerpt_stop):
    """Split ``track`` around ``[excerpt_start, excerpt_stop)`` into the two remainders."""
    x = track.samples
    if not (0 <= excerpt_start < excerpt_stop <= x.size):
        raise EmptyCorpusError(
            f"excerpt [{excerpt_start}, {excerpt_stop}) is not inside a track of {x.size} samples"
        )
    parts = [x[:excerpt_start], x[excerpt_stop:]]
    corpus = [AudioSignal(p, track.sample_rate) for p in parts if p.size]
    if not corpus:
        raise EmptyCorpusError("track has no remainder outside the excerpt")
    return corpus


@dataclass(frozen=True)
class CoarseResult:
    source_id: int
    start: int
    cost: float


def _observation_layout(obs, cfg):
    """Search-rate view of the observation: signal, layout and bound specs."""
    y = obs.y
    mask = obs.mask
    if y.sample_rate != cfg.search_rate:
        ratio = cfg.search_rate / y.sample_rate
        y = resample(y, cfg.search_rate)
        mask = mask.scaled(ratio)
        if mask.n != len(y):
            mask = type(mask)(len(y), min(mask.t_s, len(y) - 1), min(mask.t_e, len(y) - 1))
        guard = resampler_halfwidth(obs.y.sample_rate, cfg.search_rate)
    else:
        guard = 0
    layout = ContextLayout(
        n=len(y),
        t_s=mask.t_s,
        t_e=mask.t_e,
        rate=cfg.search_rate,
        context=int(round(cfg.context_len * cfg.search_rate)),
        guard=guard,
        stft=cfg.stft,
    )
    specs = tuple(s.bind(layout) for s in cfg.specs)
    return y, mask, layout, specs


def coarse_search(corpus, obs, cfg=None):
    """Minimise the context cost over sources and coarse-grid start offsets.

    Returns the first minimiser in (source_id, start) order. ``start`` is in
    search-rate samples.
    """
    cfg = cfg or SearchConfig()
    sources = index_corpus(corpus, cfg)
    y, _, layout, specs = _observation_layout(obs, cfg)
    if layout.n_frames == 0:
        raise NoCandidateError("observation is shorter than one feature frame")
    obs_feats = compute_features(y, cfg, {s.kind for s in specs})
    weighted = np.zeros(layout.n_frames, dtype=bool)
    for s in specs:
        if s.alpha > 0:
            weighted |= s.frame_weights > 0
    if not weighted.any():
        raise NoCandidateError("no context frames carry weight")
    last = int(np.flatnonzero(weighted)[-1])
    step = cfg.coarse_hop // cfg.stft.hop

    best = None
    for src in sources:
        if src.features is None:
            continue
        n_src = src.features["stft_mag"].n_frames
        n_pos = n_src - last
        if n_pos <= 0:
            continue
        costs = np.zeros(n_pos)
        for s in specs:
            if s.alpha == 0:
                continue
            a = obs_feats[s.kind].frames
            b = src.features[s.kind].frames
            costs += s.alpha * _kernels.sliding_cost(a, b, s.frame_weights, n_pos)
        grid = costs[::step]
        j = int(np.argmin(grid))
        if best is None or grid[j] < best.cost:
            best = CoarseResult(src.source_id, j * cfg.coarse_hop, float(grid[j]))
    if best is None:
        raise NoCandidateError("no corpus source is long enough to hold the context")
    return best


def _offset_order(half):
    o = np.arange(-half, half + 1)
    return o[np.lexsort((o, np.abs(o)))]


def refine_offset(obs, source, t_hat, mask, hop, guard=0):
    """Sample-accurate shift minimising the boundary mismatch.

    Compares the last observed sample before the gap and the first one after
    it (moved ``guard`` samples outward) with the source samples at the same
    positions of the candidate shifted by ``o``; ``o`` ranges over
    ``[-hop // 2, hop // 2]``, clipped to the source. Ties go to the smallest
    ``|o|``, then to the negative side. With no sample on one side of the gap
    the refinement is skipped and 0 returned.
    """
    y = as_samples(obs.y if isinstance(obs, Observation) else obs)
    s = as_samples(source)
    left = mask.t_s - 1 - guard
    right = mask.t_e + 1 + guard
    if left < 0 or right >= mask.n:
        return 0
    offsets = _offset_order(hop // 2)
    il = t_hat + left + offsets
    ir = t_hat + right + offsets
    ok = (il >= 0) & (ir < s.size)
    if not ok.any():
        return 0
    offsets, il, ir = offsets[ok], il[ok], ir[ok]
    resid = np.abs(y[left] - s[il]) + np.abs(y[right] - s[ir])
    return int(offsets[int(np.argmin(resid))])


def to_working_index(index, search_rate, working_rate):
    return int(round(index * working_rate / search_rate))


def extract_guide(source, start, n, start_rate=None):
    """``n`` samples of ``source`` from ``start``; out-of-range samples are zero.

    If ``start_rate`` differs from the source rate, ``start`` is first mapped
    to the source rate by rounding.
    """
    if start_rate is not None and start_rate != source.sample_rate:
        start = to_working_index(start, start_rate, source.sample_rate)
    s = source.samples
    out = np.zeros(n)
    lo, hi = max(start, 0), min(start + n, s.size)
    if hi > lo:
        out[lo - start:hi - start] = s[lo:hi]
    return AudioSignal(out, source.sample_rate)


@dataclass(frozen=True, eq=False)
class CandidateMatch:
    """Search result: ``coarse_start`` and ``offset`` are in search-rate samples,
    ``start`` and ``fine_offset`` in working-rate samples."""

    source_id: int
    coarse_start: int
    offset: int
    cost: float
    start: int
    fine_offset: int
    guide: AudioSignal

    def summary(self):
        return {
            "source_id": self.source_id,
            "coarse_start": self.coarse_start,
            "offset": self.offset,
            "cost": self.cost,
            "start": self.start,
            "fine_offset": self.fine_offset,
        }


def search(corpus, obs, cfg=None):
    """Coarse grid scan, boundary refinement at both rates, guide extraction."""
    cfg = cfg or SearchConfig()
    sources = index_corpus(corpus, cfg)
    coarse = coarse_search(sources, obs, cfg)
    src = sources[coarse.source_id]
    y_low, mask_low, layout, _ = _observation_layout(obs, cfg)
    o1 = refine_offset(y_low, src.searched, coarse.start, mask_low, cfg.coarse_hop, layout.guard)

    working = obs.y.sample_rate
    ratio = working / cfg.search_rate
    start = to_working_index(coarse.start + o1, cfg.search_rate, working)
    o2 = 0
    if ratio != 1:
        o2 = refine_offset(obs.y, src.working, start, obs.mask, 2 * math.ceil(ratio))
    start += o2
    guide = extract_guide(src.working, start, obs.mask.n)
    return CandidateMatch(coarse.source_id, coarse.start, o1, coarse.cost, start, o2, guide)
