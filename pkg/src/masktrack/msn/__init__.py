"""Mask selection network: a patch-based discriminator that decides which of
two candidate masks fits the object better."""
from .data import PairSample, PairStats, PairTensors, PerturbConfig, degrade_mask, generate_pairs, pair_input, to_tensors
from .net import (
    ConvSpec,
    MsnArch,
    MsnModel,
    NumericError,
    count_params_flops,
    default_arch,
    desk_arch,
    forward,
    init_model,
    load_model,
    loss_and_grad,
    save_model,
)
from .select import Selection, heuristic_score, heuristic_select, select
from .train import TrainConfig, TrainResult, train

__all__ = [
    "ConvSpec", "MsnArch", "MsnModel", "NumericError", "PairSample", "PairStats", "PairTensors", "PerturbConfig",
    "Selection", "TrainConfig", "TrainResult", "count_params_flops", "default_arch", "degrade_mask", "desk_arch",
    "forward", "generate_pairs", "heuristic_score", "heuristic_select", "init_model", "load_model",
    "loss_and_grad", "pair_input", "save_model", "select", "to_tensors", "train",
]
