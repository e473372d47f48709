"""Nonparametric alpha-divergence variational inference on the sphere of square-root densities."""

from .grid import DomainMap, GridFn, gram_schmidt, inner, integrate, norm, to_unit, from_unit
from .sphere import (Srd, StepTooLargeError, TangentVec, exp_map, geodesic_distance, inv_exp_map,
                     parallel_transport, pdf_from_srd, srd_from_pdf)
from .basis import OrthonormalBasis, build_uniform_basis, transport_basis
from .engine import (Bounds, EnergySettings, FactorizedApprox, ModelSpec, OptimReport, conditional_means,
                     energy_alpha, fit, gradient_coordinate, kld_objective, line_search, log_energy_alpha,
                     marginal_bounds)

__version__ = "0.1.0"
