"""Contrastive ECG-report pretraining and zero-shot ECG classification on numpy."""

from .contrastive import batch_loss, cosine_similarity, loss_e_to_t, loss_t_to_e, similarity_matrix
from .encoder import EncoderConfig, ModelParams, build_encoder, embed_ecg, encode
from .kernels import get_backend, set_backend
from .signal_io import EcgRecord, LoaderConfig, RecordHeader, load_dataset, read_record
from .tensor import Tensor, no_grad
from .text_embed import EmbeddingProvider, embed, load_precomputed, render_label_prompt, render_report_prompt
from .trainer import TrainConfig, TrainLog, adam_step, pretrain
from .zeroshot import ClassCatalog, EvalReport, classify, evaluate

__version__ = "0.1.0"

__all__ = [
    "ClassCatalog", "EcgRecord", "EmbeddingProvider", "EncoderConfig", "EvalReport", "LoaderConfig",
    "ModelParams", "RecordHeader", "Tensor", "TrainConfig", "TrainLog", "adam_step", "batch_loss",
    "build_encoder", "classify", "cosine_similarity", "embed", "embed_ecg", "encode", "evaluate",
    "get_backend", "load_dataset", "load_precomputed", "loss_e_to_t", "loss_t_to_e", "no_grad", "pretrain",
    "read_record", "render_label_prompt", "render_report_prompt", "set_backend", "similarity_matrix",
]
