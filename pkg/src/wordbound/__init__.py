"""Word-boundary-aware subword tokenisation and masked language model pretraining."""

from .boundary import BoundaryAnnotation, BoundarySchema, annotate, detokenize_with_boundaries, insert_wb_tokens, remove_wb_tokens
from .encoder import BoundaryEncoder, ModelConfig, expected_param_count, gradient_check, init_params
from .errors import WordBoundError
from .morpho_eval import GoldSegmentation, SegEvalResult, evaluate, evaluate_vocab, macro_average, vocab_redundancy
from .pretrainer import TrainConfig, lr_at, pretrain
from .tokenizer_core import Encoding, MarkerMode, TokenizerConfig, Vocabulary, decode, encode, encode_word, train_wordpiece

__version__ = "0.1.0"

__all__ = [
    "BoundaryAnnotation",
    "BoundaryEncoder",
    "BoundarySchema",
    "Encoding",
    "GoldSegmentation",
    "MarkerMode",
    "ModelConfig",
    "SegEvalResult",
    "TokenizerConfig",
    "TrainConfig",
    "Vocabulary",
    "WordBoundError",
    "annotate",
    "decode",
    "detokenize_with_boundaries",
    "encode",
    "encode_word",
    "evaluate",
    "evaluate_vocab",
    "expected_param_count",
    "gradient_check",
    "init_params",
    "insert_wb_tokens",
    "lr_at",
    "macro_average",
    "pretrain",
    "remove_wb_tokens",
    "train_wordpiece",
    "vocab_redundancy",
]
