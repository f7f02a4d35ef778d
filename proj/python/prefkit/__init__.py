"""prefkit: RL-free preference alignment over tabular policies.

Thin re-export of the compiled core. Sequences are lists of token ids.
"""

from ._core import (  # noqa: F401
    Demo,
    Error,
    FormatError,
    InvalidArgument,
    KtoLabel,
    KtoRecord,
    NGramPolicy,
    PreferencePair,
    SyntheticWorld,
    TrainConfig,
    Vocab,
    align_train,
    bleu,
    build_world,
    gradcheck,
    greedy_decode,
    init_policy,
    judge,
    lcs_length,
    loss,
    lr_at_step,
    next_token_dist,
    pairs_to_kto,
    pp_sweep,
    preference_accuracy,
    rouge_l,
    sample_completion,
    scenario_a,
    scenario_b,
    sequence_logprob,
    sft_train,
    summarize,
)

__version__ = "0.1.0"
