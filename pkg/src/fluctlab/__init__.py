"""Equilibrium fluctuations of a nongradient energy-exchange chain.

Velocities p_x on a ring exchange energy through random rotations of
neighbouring pairs at rate a(p_x, p_{x+1}).  The package simulates the
chain exactly on its energy spheres, computes the variational diffusion
coefficient, measures equilibrium fluctuation fields and checks the
sphere identities and spectral-gap scaling behind the hydrodynamic limit.
"""

from .coupling import CouplingSpec, constant, gaussian_bump
from .dynamics import IntegratorConfig, StabilityError, Trajectory, evolve
from .model import ModelParams, Observable, apply_generator, current, sample_equilibrium
from .polynomial import LocalFunction
from .spheres import SphereSpec, moment_closed_form, sample_sphere
from .stats import StatSeries
from .variational import (DiffusionResult, check_Hy_conditions, cyclic_gradient,
                          gradient_type_variance, minimize_diffusion_coefficient, monomial_basis)

__all__ = [
    "CouplingSpec", "constant", "gaussian_bump",
    "IntegratorConfig", "StabilityError", "Trajectory", "evolve",
    "ModelParams", "Observable", "apply_generator", "current", "sample_equilibrium",
    "LocalFunction",
    "SphereSpec", "moment_closed_form", "sample_sphere",
    "StatSeries",
    "DiffusionResult", "check_Hy_conditions", "cyclic_gradient", "gradient_type_variance",
    "minimize_diffusion_coefficient", "monomial_basis",
]
