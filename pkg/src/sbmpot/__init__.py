"""Potential theory of subordinate Brownian motions: kernels, exit sampling,
L-harmonic functions and Martin boundary numerics."""
from ._backend import NAME as BACKEND
from .bernstein import BernsteinSpec, RelativisticStable, Stable, StableSum, check_scaling, check_transience
from .errors import SbmError
from .geometry import Domain, ball_domain, default_exhaustion, parse_domain
from .kernels import (ProcessModel, ball_expected_exit, ball_green, ball_martin_kernel, ball_poisson,
                      comparability_radius, jumping_kernel)
from .martin import BoundaryMeasure, INFINITY, boundary_trace, classify_accessible, martin_integral, martin_kernel
from .potential import (Estimate, OuterCharge, ball_poisson_integral, expected_exit_time, green_potential,
                        operator_L_apply, poisson_integral, poisson_kernel_est, weak_L_pairing)
from .simulate import RngStream, exit_sample_timestep, exit_sample_wos, harmonic_measure

__version__ = "0.1.0"
