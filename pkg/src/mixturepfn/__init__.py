"""Scalable in-context learning for tabular classification.

Pipeline: preprocess a tabular dataset, fit a sparse mixture of
in-context prompters over it (k-means clusters, bounded per-prompter
contexts, nearest-center routing), serve batched prompts to an in-context
predictor (built-in differentiable reference model or an external process
over an NDJSON protocol), optionally finetune the predictor's adapters on
bootstrap prompts, and score algorithm tournaments with Condorcet voting,
mean ranks, and Wilcoxon tests.
"""

from ._backend import active_backend, set_backend
from .capfn import (BootstrapSample, FinetuneConfig, finetune,
                    grad_adapters, nll_loss, sample_bootstrap_large,
                    sample_bootstrap_small)
from .clustering import Clustering, constrained_kmeans, kmeans
from .data import (FoldSplit, TabularDataset, kfold_split, load_csv,
                   preprocess)
from .evalrank import (CondorcetTally, ResultRecord, condorcet,
                       mean_rank_table, metrics, rank_algorithms,
                       wilcoxon_signed_rank)
from .micp import (MicpModel, Prompt, assemble_batches, fit, knn_prompt_v1,
                   knn_prompt_v2, load_model, num_prompters, overlap,
                   route, save_model)
from .neighbors import NeighborIndex, build_index
from .predictor import (ExternalHandle, ReferenceHandle,
                        ReferencePredictor, ensemble_predict, predict,
                        predict_external)

__version__ = "0.1.0"

__all__ = [
    "active_backend", "set_backend",
    "BootstrapSample", "FinetuneConfig", "finetune", "grad_adapters",
    "nll_loss", "sample_bootstrap_large", "sample_bootstrap_small",
    "Clustering", "constrained_kmeans", "kmeans",
    "FoldSplit", "TabularDataset", "kfold_split", "load_csv", "preprocess",
    "CondorcetTally", "ResultRecord", "condorcet", "mean_rank_table",
    "metrics", "rank_algorithms", "wilcoxon_signed_rank",
    "MicpModel", "Prompt", "assemble_batches", "fit", "knn_prompt_v1",
    "knn_prompt_v2", "load_model", "num_prompters", "overlap", "route",
    "save_model",
    "NeighborIndex", "build_index",
    "ExternalHandle", "ReferenceHandle", "ReferencePredictor",
    "ensemble_predict", "predict", "predict_external",
    "__version__",
]
