"""Concrete models: normal-gamma, linear and logistic regression, spline density estimation."""

from .data import LabeledData, load_index_file, load_ionosphere, load_labeled_csv
from .lgp import LgpDensityModel, bspline_basis, density_from_coefficients
from .linreg import LinRegModel, linreg_exact, simulate_linreg
from .logreg import LogRegModel, log_sigmoid, sigmoid
from .normal_gamma import NormalGammaModel, kld_vb_normal_gamma, normal_gamma_exact
