"""Two-way time-transfer simulation and robust offset estimation.

The toolkit simulates timestamp exchanges over switch cascades with
injectable delay attacks, classifies attacked links with an EM
algorithm over Gamma-mixture delay models, and fuses the clean links
with the minimax-optimal shift-invariant estimator, benchmarked against
genie bounds and classical baselines.
"""

from .baselines import (
    LWeights,
    fta_estimate,
    l_estimate,
    l_weights,
    link_sample_mean,
    median_estimate,
)
from .delaysim import (
    TM1_MIX,
    TM2_MIX,
    DelayEmpirics,
    OrderStatMoments,
    TrafficScenario,
    order_statistic_moments,
    simulate_cascade,
)
from .em import (
    EMResult,
    NewtonOptions,
    Psi,
    Responsibilities,
    ThetaPi,
    classify_links,
    e_step,
    initialize,
    log_likelihood,
    m_step_closed,
    m_step_psi,
    run_em,
)
from .exchange import (
    GroundTruth,
    ObservationSet,
    draw_attack_magnitudes,
    synthesize,
)
from .fusion import (
    FusionProblem,
    build_fusion_problem,
    fuse_estimate,
    genie_bound,
    log_omega,
)
from .gammamix import (
    GammaComponent,
    GammaMixture,
    gamma_pdf,
    moment_match_init,
    shifted_mixture_pdf,
)
from .harness import (
    ExperimentConfig,
    ResultRow,
    ResultTable,
    emit_table,
    run_experiment,
)

__version__ = "0.1.0"
