"""Transformer target, single-layer fused-input draft, and checkpoint io."""

from padrec.model.config import DraftConfig, TargetConfig, heavy_target_config
from padrec.model.draft import (
    ABLATIONS,
    CandidateTree,
    DraftModel,
    DraftSession,
    init_draft,
)
from padrec.model.layers import KvCache
from padrec.model.target import GenOut, StepOut, TargetModel, init_target, probs_f64, sample_token
from padrec.model.checkpoint import (
    load_draft,
    load_target,
    load_tensors,
    save_draft,
    save_target,
    save_tensors,
)

__all__ = [
    "ABLATIONS",
    "CandidateTree",
    "DraftConfig",
    "DraftModel",
    "DraftSession",
    "GenOut",
    "KvCache",
    "StepOut",
    "TargetConfig",
    "TargetModel",
    "heavy_target_config",
    "init_draft",
    "init_target",
    "load_draft",
    "load_target",
    "load_tensors",
    "probs_f64",
    "sample_token",
    "save_draft",
    "save_target",
    "save_tensors",
]
