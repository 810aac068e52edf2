"""Desk-scale bilingual contrastive language-image pre-training.

The pipeline runs in two phases: masked-autoencoder pre-training of the
vision encoder, then dual-encoder contrastive fine-tuning with multi-crop
views. Around the core sit a byte-level BPE tokenizer, corpus filtering,
and an evaluation battery (zero-shot classification, cross-modal retrieval,
cross-lingual similarity heatmaps, multimodal feature analogy).

>>> from bilip import generate_toy_dataset, train_bpe
>>> data = generate_toy_dataset(num_concepts=8, samples_per_concept=4, seed=0)
>>> vocab = train_bpe([r.caption for r in data.records], target_vocab=300)
"""

__version__ = "0.1.0"

from .analogy import (AnalogyQuery, GalleryIndex, analogy_query, build_gallery,
                      fuse_query, sweep_weight)
from .bpe import (TokenSequence, TokenizerError, Vocabulary, decode, encode,
                  train_bpe)
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_run_config
from .contrastive import (CropSet, DualEncoderModel, NumericalError,
                          SimilarityMatrix, Temperature, TrainConfig,
                          contrastive_loss, cosine_similarity_matrix, info_nce,
                          make_crops, train, train_step)
from .corpus import (CorpusError, FilterConfig, FilterReason, FilterVerdict,
                     PairRecord, filter_pair, filter_records, read_manifest,
                     resize_for_store, write_filter_report, write_manifest)
from .encoders import (TextEncoder, TextEncoderConfig, VisionEncoder,
                       VisionEncoderConfig, interpolate_pos_embed)
from .evaluation import (HeatmapMatrix, LabelSet, RetrievalResult,
                         crosslingual_heatmap, embed_images, embed_texts,
                         retrieval_eval, zeroshot_classify)
from .mae import MAEConfig, MAEModel, MaskPlan, export_encoder, mae_step, pretrain, sample_mask
from .toydata import ToyDataset, generate_toy_dataset

__all__ = [
    "AnalogyQuery", "GalleryIndex", "analogy_query", "build_gallery",
    "fuse_query", "sweep_weight",
    "TokenSequence", "TokenizerError", "Vocabulary", "decode", "encode", "train_bpe",
    "Checkpoint", "CheckpointError", "load_checkpoint", "save_checkpoint",
    "ConfigError", "RunConfig", "load_run_config",
    "CropSet", "DualEncoderModel", "NumericalError", "SimilarityMatrix",
    "Temperature", "TrainConfig", "contrastive_loss", "cosine_similarity_matrix",
    "info_nce", "make_crops", "train", "train_step",
    "CorpusError", "FilterConfig", "FilterReason", "FilterVerdict", "PairRecord",
    "filter_pair", "filter_records", "read_manifest", "resize_for_store",
    "write_filter_report", "write_manifest",
    "TextEncoder", "TextEncoderConfig", "VisionEncoder", "VisionEncoderConfig",
    "interpolate_pos_embed",
    "HeatmapMatrix", "LabelSet", "RetrievalResult", "crosslingual_heatmap",
    "embed_images", "embed_texts", "retrieval_eval", "zeroshot_classify",
    "MAEConfig", "MAEModel", "MaskPlan", "export_encoder", "mae_step",
    "pretrain", "sample_mask",
    "ToyDataset", "generate_toy_dataset",
    "__version__",
]
