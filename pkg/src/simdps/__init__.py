"""Similarity-guided diffusion posterior sampling for long audio gaps.

Retrieve a segment resembling the missing audio from a corpus, then steer a
diffusion posterior sampler toward both the observed context and that
segment. Analytic Gaussian and Gaussian-mixture denoisers stand in for a
trained network; any other denoiser can be attached over a small binary
protocol (see :mod:`simdps.external`).
"""

from .baselines import ArModel, ar_extrapolate, ar_fit, ar_inpaint, gap_metrics, sim_inpaint
from .config import RunConfig, load_config
from .diffusion import (
    Denoiser,
    DiffusionSchedule,
    SamplerConfig,
    heun_stochastic_sample,
    log_schedule,
)
from .dsp import FeatureMatrix, StftConfig, chromagram, resample, stft_magnitude
from .errors import (
    CapabilityError,
    DataError,
    DivergenceError,
    ExternalDenoiserError,
    SimDPSError,
)
from .external import ExternalDenoiser, external_denoise
from .guidance import (
    GuidanceConfig,
    GuidanceState,
    PosteriorScore,
    dps_likelihood_score,
    posterior_score,
    simdps_likelihood_score,
)
from .pipeline import run_inpaint, synth_demo_track
from .priors import (
    FramedDenoiser,
    GaussianPrior,
    GmmPrior,
    analytic_inpainting_posterior,
    gaussian_denoise,
    gmm_denoise,
)
from .search import (
    CandidateMatch,
    FeatureSpec,
    SearchConfig,
    coarse_search,
    extract_guide,
    refine_offset,
    search,
    similarity_cost,
)
from .signal import (
    AudioSignal,
    GapMask,
    Observation,
    apply_mask,
    mask_from_interval,
    null_project,
    synthetic_measurement,
)
from .wavio import load_wav, save_wav

__version__ = "0.1.0"
