"""docrec: end-to-end handwritten document recognition with logical layout.

A self-contained research codebase: markup-based joint text/layout
representation, evaluation metrics, a small numpy autodiff stack, an
encoder-decoder recognition model, synthetic document generation, and the
training procedures tying them together.
"""

__version__ = "0.1.0"

from .grammar import LayoutClass, LayoutGrammar, builtin_grammar, load_grammar
from .metrics import (
    DocumentCounts,
    MetricReport,
    ap_cer_at,
    cer,
    document_counts,
    evaluate_corpus,
    extract_subsequences,
    ged,
    levenshtein,
    loer,
    map_cer,
    pper,
    score_subsequences,
    wer,
)
from .markup import (
    LayoutGraph,
    PostProcessReport,
    build_graph,
    extract_layout,
    parse_markup,
    post_process,
    serialize,
    strip_layout,
    validate,
)
from .tokens import EOT, SOT, Token, TokenKind, TokenSequence, begin, char, end
from .model import (
    ModelConfig,
    RecognitionModel,
    Vocabulary,
    attention_overlay,
    inject_errors,
    load_checkpoint,
    preprocess_image,
    restore_model,
    save_checkpoint,
)
from .ctc import ctc_loss, greedy_ctc_decode, min_frames
from .fonts import GlyphSet, builtin_fonts, default_font, load_font, parse_font
from .synthdoc import (
    EntitySpec,
    LineDataset,
    StyleSheet,
    SynthDocument,
    curriculum_lines,
    generate_document,
    load_stylesheet,
    render_line,
    synth_fraction,
)
from .augment import AugmentConfig, augment
from .train import (
    LineOcrModel,
    TrainConfig,
    curriculum_dropout,
    line_cer,
    pretrain_lines,
    restore_line_model,
    train_documents,
    transfer_weights,
)

__all__ = [
    "EOT",
    "SOT",
    "AugmentConfig",
    "DocumentCounts",
    "EntitySpec",
    "GlyphSet",
    "LayoutClass",
    "LayoutGrammar",
    "LayoutGraph",
    "LineDataset",
    "LineOcrModel",
    "MetricReport",
    "ModelConfig",
    "PostProcessReport",
    "RecognitionModel",
    "StyleSheet",
    "SynthDocument",
    "Token",
    "TokenKind",
    "TokenSequence",
    "TrainConfig",
    "Vocabulary",
    "ap_cer_at",
    "attention_overlay",
    "augment",
    "begin",
    "build_graph",
    "builtin_fonts",
    "builtin_grammar",
    "cer",
    "char",
    "ctc_loss",
    "curriculum_dropout",
    "curriculum_lines",
    "default_font",
    "document_counts",
    "end",
    "evaluate_corpus",
    "extract_layout",
    "extract_subsequences",
    "ged",
    "generate_document",
    "greedy_ctc_decode",
    "inject_errors",
    "levenshtein",
    "line_cer",
    "load_checkpoint",
    "load_font",
    "load_grammar",
    "load_stylesheet",
    "loer",
    "map_cer",
    "min_frames",
    "parse_font",
    "parse_markup",
    "post_process",
    "pper",
    "preprocess_image",
    "pretrain_lines",
    "render_line",
    "restore_line_model",
    "restore_model",
    "save_checkpoint",
    "score_subsequences",
    "serialize",
    "strip_layout",
    "synth_fraction",
    "train_documents",
    "transfer_weights",
    "validate",
    "wer",
]
