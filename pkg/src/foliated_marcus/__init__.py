"""Monte Carlo toolkit for Marcus SDEs on foliated spaces with Lévy noise."""

from .averaging import (
    AveragingRecord,
    AveragingReport,
    EtaEstimate,
    PartitionScheme,
    averaged_drift_mc,
    averaging_error,
    calibrate_c,
    estimate_eta,
    integrate_averaged,
    make_partition,
)
from .circle import CircleExample, analytic_eta_bounds, analytic_Q, exact_fast_path, radial_K
from .flow import VectorFieldSpec, jump_flow, second_order_defect, marcus_jump_correction
from .levy import (
    DensityLevyMeasure,
    DiscreteLevyMeasure,
    JumpPath,
    LevyMeasureSpec,
    TruncatedStableLevyMeasure,
    characteristic_exponent,
    moment,
    sample_jump_path,
)
from .marcus import FoliatedSystem, MarcusPath, integrate_perturbed, integrate_unperturbed, perturbation_gap
from .rng import rng_stream

__version__ = "0.1.0"
