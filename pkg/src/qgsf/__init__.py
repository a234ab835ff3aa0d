"""Bayesian state estimation for linear MIMO systems with quantized outputs.

The measurement likelihood is built by approximating the indicator function
of each quantizer region with an unnormalized Gaussian mixture (a scaled,
tensor-producted copy of a GMM trained offline on the uniform density over
[0,1]), which turns the Bayes recursion into a tailored Gaussian sum filter.
"""

from .exceptions import (
    ConfigError,
    ContractError,
    DegenerateUpdateError,
    DegenerateWeightsError,
    FactorizationError,
    GridTooSmallError,
    ModelFileError,
    UnsupportedConfigError,
)
from .gmm import (
    GaussianComponent,
    GaussianMixture,
    gaussian_logpdf,
    merge_moment_preserving,
    mixture_moments,
    mixture_sample,
    reduce_runnalls,
)
from .indicator import (
    IndicatorGMM,
    UnitIntervalGMM,
    em_fit_unit,
    indicator_for_output,
    load_model,
    regularize,
    save_model,
    scale_to_interval,
    tensor_product,
    train_unit_gmm,
)
from .system import (
    InputSpec,
    StateSpaceModel,
    Trajectory,
    UniformQuantizer,
    exact_region_loglik,
    quantize,
    region_bounds,
    simulate,
)
from .filters import (
    BootstrapParticleFilter,
    GaussianSumFilter,
    GridFilter,
    QuantizedNoiseKalmanFilter,
    UnscentedKalmanFilter,
    gsf_correct,
    gsf_estimate,
    gsf_predict,
)

__version__ = "0.1.0"
