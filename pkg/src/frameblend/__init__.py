"""Frame classification with teacher-guided blended training.

Convolutional and bidirectional-LSTM window classifiers over a synthetic
frame-labeling corpus, truncated soft-label stores, a blended soft/hard
training objective, posterior ensembling, and FER / token-error
instrumentation.
"""

from .blending import blended_loss, blended_loss_batch, ensemble_posterior, two_model_ensemble
from .corpus import (Corpus, CorpusConfig, FrameSampler, Utterance, compute_priors,
                     extract_window, generate_corpus, load_corpus, sample_training_frame,
                     save_corpus, validation_set)
from .estimators import (BlstmClassifier, DeepCnnClassifier, EnsembleClassifier,
                         WideCnnClassifier)
from .metrics import (AlignmentCounts, align, analytic_macs, cost_report,
                      decode_proxy, error_overlap, frame_error_rate, wer_proxy,
                      word_error_rate)
from .models import (BLSTMConfig, BLSTMModel, CNNConfig, CNNModel, blstm_config,
                     count_parameters, deep_cnn_config, desk_blstm_config,
                     desk_deep_cnn_config, desk_wide_cnn_config, lstm_cell_step,
                     predict_posteriors, wide_cnn_config)
from .softlabels import (SoftLabelStore, TopCRecord, build_store, load_store,
                         mass_coverage, mass_coverage_curve, retruncate_store,
                         save_store, store_stats, truncate_posterior)
from .tensor import Tensor, backward
from .trainer import (DivergenceError, TrainConfig, sgd_nesterov_step,
                      train_cnn_schedule, train_lstm_schedule, train_model)
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "AlignmentCounts", "BLSTMConfig", "BLSTMModel", "BlstmClassifier", "CNNConfig",
    "CNNModel", "Corpus", "CorpusConfig", "DeepCnnClassifier", "DivergenceError",
    "EnsembleClassifier", "FrameSampler", "SoftLabelStore", "Tensor", "TopCRecord",
    "TrainConfig", "Utterance", "WideCnnClassifier", "align", "analytic_macs",
    "backward", "blended_loss", "blended_loss_batch", "blstm_config", "build_store",
    "compute_priors", "cost_report", "count_parameters", "decode_proxy",
    "deep_cnn_config", "desk_blstm_config", "desk_deep_cnn_config",
    "desk_wide_cnn_config", "ensemble_posterior", "error_overlap", "extract_window",
    "frame_error_rate", "generate_corpus", "load_checkpoint", "load_corpus",
    "load_store", "lstm_cell_step", "mass_coverage", "mass_coverage_curve",
    "predict_posteriors", "retruncate_store", "sample_training_frame", "save_checkpoint",
    "save_corpus", "save_store", "sgd_nesterov_step", "store_stats",
    "train_cnn_schedule", "train_lstm_schedule", "train_model", "truncate_posterior",
    "two_model_ensemble", "validation_set", "wer_proxy", "wide_cnn_config",
    "word_error_rate",
]
