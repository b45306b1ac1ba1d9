"""Numerical laboratory for local mild-solution semiflows of semilinear
evolution equations: derivative jets, invariance and tangency certificates,
flow-composition charts and generator-domain probes."""

from .errors import (BlowUpError, CapabilityError, ConfigError,
                     ConvergenceError, DegenerateFieldError, DomainError,
                     EmbeddingError, HorizonError, InvalidStateError,
                     OffManifoldError, RankError, SemiflowLabError,
                     ShapeError, SingularityError)
from .manifold import (ChartParametrization, LifetimeReport, TangencyReport,
                       TangentFrame, chart_project, jacobian,
                       lifetime_estimate, linear_chart, nagumo_check,
                       off_manifold_distance, tangent_basis)
from .mild_solver import (GronwallCertificate, Nonlinearity, SolveReport,
                          estimate_lipschitz, estimate_semigroup_norm,
                          gronwall_certificate, semiflow_defect, solve,
                          truncate, validate_nonlinearity)
from .models import (ModelInstance, default_curve_grid, instantiate,
                     model_chart, perturbed_chart)
from .realization import (CertifyThresholds, RegularityReport, VectorFieldSet,
                          build_alpha, certify, independence_check,
                          sigma_flow)
from .semigroup import (DomainOrderEstimate, SemigroupSpec, apply,
                        diagonal_semigroup, domain_order_estimate,
                        generator_apply, remaining_horizon, shift_semigroup)
from .sensitivity import (FdCheckReport, JetSequence, SensitivityJet,
                          backward_embed, fd_check, propagate_jet,
                          restricted_differential_invertibility,
                          time_derivative_reconstruct,
                          time_derivative_residual)
from .state_space import (Direction, Grid, StateVector, axpy, interpolate,
                          norm, read_state_csv, state_from_function,
                          uniform_grid, write_state_csv, zeros_like)

__version__ = "0.1.0"
