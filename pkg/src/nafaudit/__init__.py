"""Near access-freeness toolkit: protected decoding, exact divergence oracles, Monte Carlo audits."""

__version__ = "0.1.0"

from .core import (
    AllZeroWeights,
    NafError,
    RandomSource,
    ValidationError,
    Vocabulary,
    normalize,
    sample_token,
    sequence_logprob,
)
from .models import (
    Corpus,
    FormatError,
    GenerativeModel,
    SafeModelSet,
    TableModel,
    greedy_sequence,
    load_model,
    randomized_response_wrap,
    read_corpus,
    sample_sequence,
    save_model,
    temperature_wrap,
    top_p_wrap,
    train_ngram,
)
from .divergence import (
    BoundInfinite,
    DivergenceKind,
    EnumerationTooLarge,
    cp_delta_bound,
    naf_check_exact,
    sequence_divergence_exact,
    token_divergence,
)
from .protect import (
    ProtectionCertificate,
    RejectionExhausted,
    cp_delta_combine,
    cp_delta_model,
    cp_delta_rejection_sample,
    cp_kappa_induced_exact,
    cp_kappa_sample,
    estimate_nu,
)
from .audit import (
    FloorViolated,
    NafEstimate,
    alpha_floor_top_p,
    bernstein_half_width,
    dpg_check,
    mc_naf_estimate,
    sweep,
)
from .memorization import (
    edit_distance,
    normalized_edit_distance,
    run_memorization_experiment,
)
