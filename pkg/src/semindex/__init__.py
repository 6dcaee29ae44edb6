"""Label-partitioned inverted index for image retrieval.

Database items are filed under their most confident classifier labels;
queries reclaim the lists of their own top labels and re-rank the union,
either exactly or through residual product-quantization tables.
"""

from .eval import DatasetBundle, MetricsReport, StrategyConfig, evaluate, sweep
from .index import (
    IndexParams,
    LabelMapping,
    SemanticIndex,
    attach_pq,
    build_index,
    candidate_list,
    cooccurrence_matrix,
    label_similarity,
    merge_labels,
    pruned_candidate_list,
    split_index,
    top_labels,
)
from .io import FeatureSet, FormatError, GroundTruth, GroundTruthEntry, LabelMatrix
from .persist import load_index, save_index
from .synth import SyntheticConfig, synth_dataset

__version__ = "0.1.0"
