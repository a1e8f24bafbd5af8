"""Multi-task acoustic-to-articulatory inversion toolkit.

Estimates nine vocal-tract variable trajectories from speech audio with
stacked bidirectional GRU networks, optionally trained jointly with a
frame-wise phoneme classification task. Includes an MFCC frontend, a
from-scratch autodiff engine with numba-accelerated recurrent kernels, a
synthetic corpus generator, and a config-driven experiment runner.
"""

__version__ = "0.1.0"

from .corpus import (
    DEFAULT_INVENTORY,
    PhonemeInventory,
    Utterance,
    align_to_frames,
    load_manifest,
    one_hot,
    save_corpus,
    split_speakers,
)
from .errors import SpeechInvError
from .frontend import AudioSegment, featurize_segment, mfcc, segment_audio
from .kernels import active_backend
from .metrics import EvalReport, evaluate_model, evaluate_tvs, phoneme_accuracy, ppmc
from .model import (
    DESK_SCALE,
    PAPER_SCALE,
    Model,
    ModelConfig,
    count_params,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .synth import SynthSpec, generate_synthetic
from .training import (
    TrainConfig,
    adam_step,
    cross_entropy_loss,
    grid_search,
    lr_at,
    mae_loss,
    prepare_examples,
    train,
    train_algorithm1,
    train_algorithm2,
    train_single_task,
)

__all__ = [
    "AudioSegment",
    "DEFAULT_INVENTORY",
    "DESK_SCALE",
    "EvalReport",
    "Model",
    "ModelConfig",
    "PAPER_SCALE",
    "PhonemeInventory",
    "SpeechInvError",
    "SynthSpec",
    "TrainConfig",
    "Utterance",
    "__version__",
    "active_backend",
    "adam_step",
    "align_to_frames",
    "count_params",
    "cross_entropy_loss",
    "evaluate_model",
    "evaluate_tvs",
    "featurize_segment",
    "generate_synthetic",
    "grid_search",
    "init_params",
    "load_checkpoint",
    "load_manifest",
    "lr_at",
    "mae_loss",
    "mfcc",
    "one_hot",
    "phoneme_accuracy",
    "ppmc",
    "prepare_examples",
    "save_checkpoint",
    "save_corpus",
    "segment_audio",
    "split_speakers",
    "train",
    "train_algorithm1",
    "train_algorithm2",
    "train_single_task",
]
