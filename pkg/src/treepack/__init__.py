"""treepack: randomized tree-decomposition toolkit for quasirandom graphs.

Submodules:
    graphs      host graphs, cyclic orders, typicality
    trees       tree analysis, case classification, tree partition
    matching    MATCH(B, Z) switching-chain sampler, rainbow matching
    hypergraph  weighted hypergraph nibble
    embedding   the staged embedding pipeline
    finishers   small-stars / paths / large-stars exact steps
    oracle      verifier, brute-force decomposer, exact solvers
    cli         batch runner
"""

from .config import ParamConfig, config_for_tree
from .errors import (TreepackError, InputError, ConfigError,
                     ClassificationError, PartitionError,
                     InfeasibleMatchingError, StuckError, PipelineAbort,
                     BudgetExceeded)
from .graphs import Graph, CyclicOrder, Digraph
from .trees import Tree, classify_case, tree_partition
from .oracle import Decomposition, verify, brute_decompose

__version__ = "0.1.0"

__all__ = [
    "ParamConfig", "config_for_tree",
    "Graph", "CyclicOrder", "Digraph",
    "Tree", "classify_case", "tree_partition",
    "Decomposition", "verify", "brute_decompose",
    "TreepackError", "InputError", "ConfigError", "ClassificationError",
    "PartitionError", "InfeasibleMatchingError", "StuckError",
    "PipelineAbort", "BudgetExceeded",
    "__version__",
]
