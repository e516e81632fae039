"""Text-conditioned 2D human pose generation toolkit.

A caption is embedded into a 768-d vector, lifted by an MLP and a small
transformer encoder, and decoded into 18 skeleton keypoints with visibility
probabilities. Subpackages cover the autodiff core, model, losses, metrics,
synthetic corpus generation, training/sweep/ablation harnesses, rendering,
and a command-line interface.
"""

from .data import Corpus, load_corpus, save_corpus
from .losses import LossBreakdown, LossWeights
from .metrics import EvalReport
from .model import (AblationFlags, ModelOutput, PoseGenConfig, PoseGenModel,
                    batch_forward, forward, init_model, load_model, save_model)
from .skeleton import (COCO18, JOINT_NAMES, NUM_JOINTS, Pose, PoseSample,
                       VisibilityVector)
from .synthcorpus import SynthSpec, generate_corpus
from .textenc import EMBED_DIM, EmbeddingTable, embed_hashed, load_embedding_table
from .trainer import TrainConfig, ablate, grad_check, sweep, train

__version__ = "0.1.0"

__all__ = [
    "Corpus", "load_corpus", "save_corpus",
    "LossBreakdown", "LossWeights",
    "EvalReport",
    "AblationFlags", "ModelOutput", "PoseGenConfig", "PoseGenModel",
    "batch_forward", "forward", "init_model", "load_model", "save_model",
    "COCO18", "JOINT_NAMES", "NUM_JOINTS", "Pose", "PoseSample",
    "VisibilityVector",
    "SynthSpec", "generate_corpus",
    "EMBED_DIM", "EmbeddingTable", "embed_hashed", "load_embedding_table",
    "TrainConfig", "ablate", "grad_check", "sweep", "train",
    "__version__",
]
