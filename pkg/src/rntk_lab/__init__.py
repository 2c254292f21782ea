"""Residual-network tangent kernel lab.

Analytic kernel evaluation on the unit sphere, finite-width mirrored
residual networks with exact training dynamics, closed-form kernel
gradient-flow regression with early stopping, sphere-harmonic spectra,
and a reproducible experiment harness with a CLI front end.
"""

__version__ = "0.1.0"

from .errors import DivergedError, InvalidStateError, NumericalError
from .kernel import (KernelConfig, KernelTrace, kappa0, kappa1, rntk_eval,
                     rntk_gram, rntk_value, zonal_value)
from .sphere import (RKHSTarget, SphereDataset, corrupt_labels, make_octant_dataset,
                     make_octant_target, make_rkhs_regression_set, octant_labels,
                     sample_uniform_sphere)
from .resnet import (ForwardCache, GradientBundle, MirroredNet, ProbeSpec, TrainRecord,
                     TrainResult, backward, empirical_rnk, empirical_rnk_matrix,
                     forward, init_mirrored, network_function_snapshot, train_gd)
from .flow import (FlowRegressor, GramEig, RiskEstimate, early_stop_time,
                   excess_risk_mc, flow_gd_oracle, flow_predict, make_flow_regressor,
                   sym_eig)
from .spectral import (DecayFit, SpectralProfile, fit_decay, flatten_spectrum,
                       funk_hecke_mu, gegenbauer_table, multiplicity, nystrom_check)
from .harness import (ExperimentConfig, config_from_sources, emit_plotdata,
                      run_convergence, run_corruption, run_rates, run_spectrum)
