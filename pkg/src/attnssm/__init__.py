"""Attentive state-space restoration in numpy.

Selective scans with prompt-augmented readout, semantic reordering of tokens,
window attention, a small restoration network with hand-written gradients,
and tooling to train, analyze and cost it.
"""
from .tensor import (
    ConfigError, DimensionError, DomainError, FormatError, NumericError, RngState, StateError,
    load_checkpoint, load_tensor, save_checkpoint, save_tensor,
)
from .ssm import SsmParams, DiscreteSsm, discretize, selective_scan, unrolled_scan, decay_profile
from .attention import (
    QkvTriple, causal_linear_attention_direct, causal_linear_attention_recurrent,
    common_form_report, window_mhsa,
)
from .ase import PromptPool, Router, route, attentive_scan, ase_forward, ase_backward
from .sgn import SemanticPlan, build_plan, sgn_fold, sgn_unfold
from .config import ModelConfig, TrainConfig, preset, load_config
from .model import RestorationNet, count_params
from .train import train, grad_check

__version__ = "0.1.0"
