"""Accident anticipation on per-frame feature sequences.

An attention block refines each object's features from the relations to
every other object in the frame, an LSTM integrates the refined frame
descriptors over time, and an exponentially weighted loss pushes the
accident probability up as early as possible. Includes a from-scratch
reverse-mode autodiff substrate, a binary feature-file format with a
synthetic generator, threshold-sweep evaluation (mAP, ATTA), and a CLI.
"""

from . import autodiff, data, fa_block, metrics, model, optim, recurrent
from .autodiff import Tensor, backward, finite_diff_check
from .data import VideoSample, generate_synthetic, read_feature_file, write_feature_file
from .fa_block import FAParams, Variant, fa_forward
from .metrics import VideoScore, average_tta, mean_average_precision, sweep
from .model import (ModelParams, StreamPredictor, anticipation_loss,
                    forward_video, load_checkpoint, save_checkpoint)
from .optim import Adam, TrainConfig, train
from .recurrent import LSTMParams, LSTMState, lstm_step, unroll

__all__ = [
    "Tensor", "backward", "finite_diff_check",
    "VideoSample", "generate_synthetic", "read_feature_file", "write_feature_file",
    "FAParams", "Variant", "fa_forward",
    "VideoScore", "average_tta", "mean_average_precision", "sweep",
    "ModelParams", "StreamPredictor", "anticipation_loss", "forward_video",
    "load_checkpoint", "save_checkpoint",
    "Adam", "TrainConfig", "train",
    "LSTMParams", "LSTMState", "lstm_step", "unroll",
    "autodiff", "data", "fa_block", "metrics", "model", "optim", "recurrent",
]
