"""Learned cluster-tree index for hybrid numeric + vector retrieval.

Pipeline: assemble records into a feature matrix, decorrelate and rescale it
with an invertible linear transform, optionally sharpen cluster structure by
attraction-based point movement, then divide the points into a tree of
density-peak clusters whose leaves store learned rank models over ring
distances. Queries mix numeric equality/range predicates with vector top-k
and radius predicates under intersection or union, in exact or budgeted
approximate mode. The transform can be tuned against a workload and sibling
order rearranged to match access skew."""

from .schema import (Attribute, AttributeSchema, Dataset, DatasetFormatError,
                     FeatureMatrix, NUMERIC, VECTOR, assemble, load_dataset,
                     read_vec_file, save_dataset, vec_file_dataset,
                     write_vec_file)
from .synth import GAUSSMIX, KINDS, SKEWED, SyntheticSpec, UNIFORM, \
    generate_synthetic
from .query import (APPROX, BasicQuery, EXACT, HybridQuery, NE, NR, QueryError,
                    ResultSet, VK, VR, parse_workload, write_workload)
from .oracle import brute_force_query
from .metrics import accuracy, cluster_metrics, recall_at_k, result_metrics
from .transform import Transform, TransformError, init_transform
from .gravity import MoveResult, gravity_move, mean_nn_distance
from .dpc import DPCResult, SingleClusterError, dpc_cluster
from .tree import (BuildConfig, BuildReport, ClusterTree, IndexFormatError,
                   LeafModel, TreeNode, build_index, keys_for_cdf)
from .engine import ExecutionTrace, exec_full_scan, exec_query
from .querylog import QueryLog, QueryLogRow, make_row
from .reorder import ReorderReport, reorder_nodes
from .tuning import (ObjectiveTriple, TuneConfig, TuneResult,
                     optimize_transform)
from .bench import (AblationReport, PipelineConfig, RunSummary, WorkloadGen,
                    ablate, build_pipeline, full_scan_run, run_workload,
                    skewed_workload, tune_transform)
from .scoring import CandidateScore, score_candidates

__version__ = "0.1.0"
