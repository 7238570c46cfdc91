"""Clean-label semantic backdoor attacks on graph classifiers.

Library layout: ``datasets`` (corpus ingestion, splits, encodings),
``numerics`` (dense kernels + Adam), ``models`` (GCN / GraphSAGE with
hand-derived backprop), ``attack`` (trigger selection, poisoning, the
random-subgraph baseline), ``harness`` (metrics and experiment cells),
``reporting`` (CSV / markdown / figures), ``cli`` (the ``graphback``
command).
"""

from .attack import (
    AttackConfig,
    PoisonRecord,
    TriggerReport,
    build_attack_testset,
    degree_centrality,
    er_baseline_trigger,
    generate_poisoned_trainset,
    inject_er_subgraph,
    inject_trigger,
    select_semantic_trigger,
)
from .datasets import (
    Dataset,
    DataSplit,
    Graph,
    normalized_adjacency,
    one_hot_features,
    parse_tudataset,
    split_dataset,
)
from .errors import DataError, GraphBackError, NumericalError, UsageError
from .harness import (
    ExperimentConfig,
    MetricsRow,
    compute_asr,
    compute_cad,
    run_baseline_comparison,
    run_cell,
    run_transferability,
    sweep_poisoning_rates,
    sweep_trigger_sizes,
)
from .models import (
    GcnModel,
    TrainConfig,
    TrainHistory,
    accuracy,
    gcn_backward,
    gcn_forward,
    init_model,
    predict,
    sage_backward,
    sage_forward,
    train,
)

__version__ = "0.1.0"
