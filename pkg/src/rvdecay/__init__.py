"""Decay rates of perturbed mean-reverting ODEs and SDEs with regularly varying drift."""

__version__ = "0.1.0"

from .classify import LimitClassification, Tolerances, Verdict, classify
from .criteria import (
    CriterionReport,
    check_det_conditions,
    compute_mu,
    delta_integral_test,
    noise_report,
    psi,
    sum_Sf,
)
from .decay_scale import DecayScale, Mode, asymptotic_F_inv, eval_F, eval_F_inv, eval_fF_inv
from .deterministic import StepPolicy, Trajectory, diagnostics, integrate_internal, integrate_ode
from .errors import (
    ConfigError,
    DomainError,
    IntegrationError,
    NotSquareIntegrableError,
    SimulationError,
    TailUndefinedError,
)
from .nonlinearity import Family, NonlinearityModel, eval_f, slowly_varying_ell
from .perturbations import (
    CompactNoise,
    GammaSpec,
    Oscillating,
    PowerBase,
    PowerDecay,
    PowerDecayNoise,
    RateBase,
    Sampled,
    SampledNoise,
    ScaledDerivativeRate,
    SpikeConstruction,
    Spiked,
    SpikedSquare,
    ZeroForcing,
    ZeroLimitSynthetic,
    ZeroNoise,
    build_spiked,
    eval_g,
    tail_integral_g,
    varsigma,
)
from .stochastic import (
    EnsembleConfig,
    EnsembleSummary,
    SdePath,
    run_ensemble,
    scaled_increment,
    simulate_path,
    tail_martingale,
)
