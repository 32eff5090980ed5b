"""Run configuration: a JSON file with documented keys plus ``key=value`` overrides.

Keys (nested sections use dotted paths on the command line)::

    method            dps | simdps-l | simdps-h | sim | lpc
    denoiser          gaussian-demo | gmm-demo | stdio:<cmd> | tcp:host:port
    seed              integer seed for the sampler and the demo prior fit
    working_rate      Hz; input and corpus audio are resampled to it
    excerpt_len       seconds of the input processed (clipped to the input)
    excerpt_start     seconds; null centres the excerpt in the input
    gap_start         seconds from the excerpt start; null centres the gap
    gap_duration      seconds
    ar_order          AR order of the lpc method
    fade_ms           fade length of the sim method
    output_format     pcm16 | float32
    denoiser_timeout  seconds per external denoiser request
    gmm.frame, gmm.components
    schedule.steps, schedule.sigma_min, schedule.sigma_max
    sampler.s_churn
    guidance.omega_y, guidance.omega_aux, guidance.grad_mode, guidance.variance_norm
    search.search_rate, search.context_len, search.coarse_hop, search.specs, search.stft

Guidance keys that are not set come from the method's preset. A report's
``config`` section is a complete RunConfig and can be fed back unchanged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace

from .diffusion import SIGMA_MAX, SIGMA_MIN, STEPS, SamplerConfig
from .errors import ConfigError
from .guidance import PRESETS, GuidanceConfig
from .search import SearchConfig

__all__ = ["METHODS", "RunConfig", "load_config", "apply_overrides"]

METHODS = ("dps", "simdps-l", "simdps-h", "sim", "lpc")
DIFFUSION_METHODS = ("dps", "simdps-l", "simdps-h")
SEARCH_METHODS = ("sim", "simdps-l", "simdps-h")
BUILTIN_DENOISERS = ("gaussian-demo", "gmm-demo")
GUIDANCE_KEYS = ("omega_y", "omega_aux", "grad_mode", "variance_norm")


@dataclass(frozen=True)
class RunConfig:
    method: str = "simdps-l"
    denoiser: str = "gmm-demo"
    seed: int = 0
    working_rate: float = 44100.0
    excerpt_len: float = 6.0
    excerpt_start: float | None = None
    gap_start: float | None = None
    gap_duration: float = 2.0
    ar_order: int = 256
    fade_ms: float = 10.0
    output_format: str = "float32"
    denoiser_timeout: float = 30.0
    gmm: dict = field(default_factory=lambda: {"frame": 64, "components": 32})
    schedule: dict = field(
        default_factory=lambda: {"steps": STEPS, "sigma_min": SIGMA_MIN, "sigma_max": SIGMA_MAX}
    )
    sampler: dict = field(default_factory=lambda: {"s_churn": 10.0})
    guidance: dict = field(default_factory=dict)
    search: SearchConfig = field(default_factory=SearchConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        d = self.denoiser
        if d not in BUILTIN_DENOISERS and not d.startswith(("stdio:", "tcp:")):
            raise ConfigError(f"denoiser must be one of {BUILTIN_DENOISERS} or a stdio:/tcp: URI")
        for name in ("working_rate", "excerpt_len", "gap_duration", "denoiser_timeout"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.ar_order < 1:
            raise ConfigError("ar_order must be >= 1")
        if self.fade_ms < 0:
            raise ConfigError("fade_ms must be >= 0")
        if self.output_format not in ("pcm16", "float32"):
            raise ConfigError("output_format must be pcm16 or float32")
        if self.gap_duration >= self.excerpt_len:
            raise ConfigError("gap must be shorter than the excerpt")
        if self.gap_start is not None and (
            self.gap_start <= 0 or self.gap_start + self.gap_duration >= self.excerpt_len
        ):
            raise ConfigError("gap must lie strictly inside the excerpt")
        unknown = set(self.guidance) - set(GUIDANCE_KEYS)
        if unknown:
            raise ConfigError(f"unknown guidance keys: {sorted(unknown)}")
        _check_keys("schedule", self.schedule, ("steps", "sigma_min", "sigma_max"))
        _check_keys("sampler", self.sampler, ("s_churn",))
        _check_keys("gmm", self.gmm, ("frame", "components"))
        self.resolved_guidance()
        self.sampler_config()

    def resolved_guidance(self):
        base = PRESETS.get(self.method, PRESETS["dps"])
        return replace(base, **self.guidance)

    def sampler_config(self):
        return SamplerConfig(s_churn=float(self.sampler["s_churn"]), seed=int(self.seed))

    @property
    def uses_diffusion(self):
        return self.method in DIFFUSION_METHODS

    @property
    def uses_search(self):
        return self.method in SEARCH_METHODS

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "search":
                v = v.to_dict()
            elif f.name == "guidance":
                v = self.resolved_guidance().to_dict()
            elif isinstance(v, dict):
                v = dict(v)
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        defaults = cls()
        for name in ("gmm", "schedule", "sampler"):
            if name in d:
                d[name] = {**getattr(defaults, name), **d[name]}
        if "search" in d:
            try:
                d["search"] = SearchConfig.from_dict(d["search"])
            except TypeError as exc:
                raise ConfigError(f"bad search section: {exc}") from None
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def _check_keys(section, d, allowed):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")
    for k, v in d.items():
        if isinstance(v, float) and not math.isfinite(v):
            raise ConfigError(f"{section}.{k} must be finite")


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(d, overrides):
    """Apply ``key=value`` strings (dotted keys, JSON values) to a config dict."""
    d = json.loads(json.dumps(d))
    for item in overrides:
        key, sep, text = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not key=value")
        parts = key.split(".")
        node = d
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r}: {p!r} is not a section")
        node[parts[-1]] = _parse_value(text)
    return d


def load_config(path=None, overrides=()):
    """Read a config file (or a run report) and apply overrides; ``None`` means defaults."""
    d = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be an object")
        if "report_version" in d:
            d = d["config"]
    return RunConfig.from_dict(apply_overrides(d, overrides))
