"""Exact spacing and t-spacing tests for the mean of Gaussian random fields on manifolds."""

from .conditional import (ConditionalField, OmegaMatrix, conditional_covariance, conditional_value,
                          helix_limit, omega)
from .errors import *  # noqa: F401,F403
from .manifold import (CircleStiefel, ManifoldPoint, Sphere, TangentFrame, Torus2, exp_map,
                       geodesic_distance, normalized_sphere_distance, random_point, tangent_frame)
from .models import (FieldModel, Observation, SphereTensorModel, SuperResolutionModel, TwoSpikedModel,
                     kl_order, make_model, sr_covariance, synthesize_observation, tensor_euclid_gradient,
                     tensor_euclid_hessian, tensor_field_value, tensor_lambda2, twospiked_lambda2,
                     twospiked_riemannian_hessian)
from .montecarlo import (ExperimentConfig, ReplicaResult, ks_statistic, power_curve, run_experiment,
                         sigma_diagnostics)
from .optimize import MaximaRecord, find_global_max, find_maxima, find_second_max
from .stattest import (G_functional, H_functional, SigmaEstimate, TestReport, estimate_sigma,
                       gaussian_partial_moments, run_test, spacing_pvalue, t_spacing_pvalue)
from .tensors import SymmetricTensor, sample_noise_tensor

__version__ = "0.1.0"
