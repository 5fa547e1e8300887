"""Preference alignment of text-conditioned motion diffusion models on a synthetic skeleton domain."""

from ._mdpo import (
    FEATURES,
    VOCAB_SIZE,
    Action,
    BuildError,
    ConfigError,
    ContractError,
    DomainError,
    Error,
    Generator,
    IntegrityError,
    NoiseSchedule,
    NumericError,
    PipelineError,
    PromptSpec,
    StalenessError,
    TrainingError,
    checkpoint_hash,
    default_config,
    family_motion,
    fid,
    fid_from_samples,
    generate_ground_truth,
    load_pam,
    make_schedule,
    oracle_features,
    oracle_judge,
    oracle_score,
    pair_count,
    q_sample,
    render_tokens,
    run_pipeline,
    run_stage,
    select_pair,
    stage_names,
    token_text,
)

__all__ = [name for name in dir() if not name.startswith("_")]
