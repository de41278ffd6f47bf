"""mspde: spectral-Galerkin laboratory for slow-fast stochastic PDEs.

Builds the averaged dynamics of a fully coupled slow-fast system, the
Feynman-Kac correctors of the associated cell problem, and the Gaussian
deviation limit, and measures the strong and weak convergence rates at desk
scale.  See README.md for the layout and demos/ for narrative walkthroughs.
"""

from ._version import __version__
from .averaging import (
    ErgodicBudget,
    ErgodicEstimate,
    ErgodicFbarProvider,
    MixingReport,
    TrackingFbarProvider,
    delta_F,
    estimate_DxFbar,
    estimate_Fbar,
    estimate_mixing_rate,
    fbar_provider,
)
from .deviation import (
    PHI_BUILTINS,
    SigmaBudget,
    SigmaEstimate,
    WeakErrorReport,
    compute_Z_path,
    estimate_sigma,
    fluctuation_integral,
    fluctuation_scaling,
    simulate_Zbar,
    simulate_Zbar_ensemble,
    weak_error,
)
from .experiments import (
    RateReport,
    SimConfig,
    emit_outputs,
    parse_rates_csv,
    recompute_fits,
    run_assumption_check,
    run_fluctuation_scaling,
    run_galerkin_convergence,
    run_strong_rate,
    run_weak_rate,
)
from .integrators import (
    CoupledState,
    Ensemble,
    PathBundle,
    SimOptions,
    default_dt,
    simulate_bundle,
    step_averaged,
    step_frozen,
    step_slow_fast,
)
from .models import (
    ModelSpec,
    ReactionMap,
    build_model,
    holder_bench,
    linear_bench,
    nemytskii_bench,
)
from .poisson import (
    PoissonBudget,
    PoissonProblem,
    PoissonSolution,
    PoissonSolver,
    check_centering,
    estimate_DyPsi,
    mc_psi,
    poisson_residual,
    solve_poisson,
    solve_poisson_vector,
)
from .spectral import (
    NoiseSpectrum,
    OperatorSpectrum,
    SpectralField,
    apply_fractional_power,
    apply_semigroup,
    check_trace_conditions,
    exact_ou_step,
    graph_norm,
    power_law_noise,
    power_law_operator,
    reference_spectra,
    sample_qwiener_increment,
)
