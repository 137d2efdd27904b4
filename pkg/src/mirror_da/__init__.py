"""Mirror-sample domain adaptation on desk-scale synthetic data, in numpy."""
from .alignment import layer_mirror_loss, mirror_loss, relative_position, relative_positions
from .anchors import ClassAnchors, kmeans_pseudo_labels, labeled_anchors, mixed_anchors
from .config import DataConfig, RunConfig
from .errors import ConsistencyError, HiddenLabelError, InvalidArgumentError, NumericalFailure
from .evaluation import TargetMonitor, evaluate
from .mirror import DistanceKind, MirrorConfig, batch_mirrors, build_mirror_set, estimate_mirror
from .network import LrSchedule, forward, init_params, lr_at
from .objective import auxiliary_distribution, total_loss
from .synthgen import (DilemmaSpec, DomainDataset, gen_biased_patterns, gen_dilemma_1d,
                       moment_match_baseline, standardize_by_source)
from .training import train

__version__ = "0.1.0"
