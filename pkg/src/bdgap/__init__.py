"""Becker-Doring cluster kinetics: equilibria, spectral gap and decay rates."""
from .coeffs import (CoefficientModel, Kind, critical_mass,
                     critical_monomer_density, delta_condition,
                     eval_coefficients, log_detailed_balance)
from .equilibrium import (EquilibriumProfile, equilibrium_profile, mass_of_z,
                          z_of_mass)
from .spectral import (LinearizedMatrix, SpectralReport, apply_linearized,
                       build_linearized, critical_sweep, dirichlet_form,
                       gap_bounds, hardy_bracket, lambda_m_estimate,
                       numerical_gap, quantity_B, spectral_report)
from .dynamics import (StateVector, Trajectory, bd_rhs, dissipation,
                       exp_moment, fit_decay_rate, flux, fluctuation_split,
                       free_energy, gamma_term, integrate,
                       integrate_linearized, weighted_l1_distance)

__version__ = "0.1.0"

__all__ = [
    "apply_linearized", "bd_rhs", "build_linearized", "CoefficientModel",
    "critical_mass", "critical_monomer_density", "critical_sweep",
    "delta_condition", "dirichlet_form", "dissipation", "equilibrium_profile",
    "EquilibriumProfile", "eval_coefficients", "exp_moment", "fit_decay_rate",
    "fluctuation_split", "flux", "free_energy", "gamma_term", "gap_bounds",
    "hardy_bracket", "integrate", "integrate_linearized", "Kind",
    "lambda_m_estimate", "LinearizedMatrix", "log_detailed_balance",
    "mass_of_z", "numerical_gap", "quantity_B", "spectral_report",
    "SpectralReport", "StateVector", "Trajectory", "weighted_l1_distance",
    "z_of_mass",
]
