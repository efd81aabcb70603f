"""Sequential change-point detection with one-sample-update estimators."""
from .errors import ConfigError, IdentityNotApplicable, InvalidParameterError, NumericDomainError
from .expfam import (
    BernoulliProduct,
    GammaFixedShape,
    GaussianIdentity,
    bregman_dual,
    kl_divergence,
    log_density_ratio,
    model_from_spec,
)
from .projection import FullSpace, IntervalClamp, L1Ball, bregman_project, project_l1
from .estimators import StepSchedule, batch_mle, omd_init, omd_step, regret_bregman, regret_direct
from .detectors import Alarm, Detector, DetectorSpec

__version__ = "0.1.0"
