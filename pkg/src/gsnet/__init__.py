"""Channel + spatial self-attention CNN on a synthetic disc/cup staging task,
with an in-repo tensor/autodiff core, served over HTTP with a thin CLI."""

from .tensor import Matrix, Shape4, T4BError, Tensor, read_t4b, write_t4b
from .autodiff import Parameter, Tape, backward, finite_diff_check
from .gsam import GsamParams, gsam_init, run_cam, run_gsam, run_sam
from .network import BackboneConfig, NetworkParams, VARIANTS, network_init, predict
from .training import TrainConfig, fit
from .data import DatasetManifest, SyntheticConfig, generate_synthetic, split_manifest
from .metrics import EvalResult, confusion_matrix, macro_auc_ovr, macro_f1

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig",
    "DatasetManifest",
    "EvalResult",
    "GsamParams",
    "Matrix",
    "NetworkParams",
    "Parameter",
    "Shape4",
    "SyntheticConfig",
    "T4BError",
    "Tape",
    "Tensor",
    "TrainConfig",
    "VARIANTS",
    "backward",
    "confusion_matrix",
    "finite_diff_check",
    "fit",
    "generate_synthetic",
    "gsam_init",
    "macro_auc_ovr",
    "macro_f1",
    "network_init",
    "predict",
    "read_t4b",
    "run_cam",
    "run_gsam",
    "run_sam",
    "split_manifest",
    "write_t4b",
]
