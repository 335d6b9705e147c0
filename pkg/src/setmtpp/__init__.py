"""Set-valued marked temporal point processes: models, likelihood training,
thinning samplers and importance-sampled hitting-time queries."""
from .data import Dataset, Event, ItemSet, Sequence, Vocabulary, load_sequences, save_sequences, split_dataset
from .model import Model, ModelConfig
from .likelihood import evaluate, loglik_set, loglik_time, nll
from .training import TrainConfig, TrainingAborted, train
from .sampler import ProposalSpec, SampledPath, sample_proposal, sample_sequence
from .queries import (BatteryConfig, QueryEstimate, QuerySpec, ab_importance, ab_naive, hitting_importance,
                      hitting_naive, query_loglikelihood, relative_efficiency, run_query_battery)

__all__ = [
    "Dataset", "Event", "ItemSet", "Sequence", "Vocabulary", "load_sequences", "save_sequences", "split_dataset",
    "Model", "ModelConfig", "evaluate", "loglik_set", "loglik_time", "nll", "TrainConfig", "TrainingAborted",
    "train", "ProposalSpec", "SampledPath", "sample_proposal", "sample_sequence", "BatteryConfig",
    "QueryEstimate", "QuerySpec", "ab_importance", "ab_naive", "hitting_importance", "hitting_naive",
    "query_loglikelihood", "relative_efficiency", "run_query_battery",
]
