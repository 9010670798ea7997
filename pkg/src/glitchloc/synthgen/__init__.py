from .clips import ClipFormatError, FeatureClip, read_clip, render_clip, write_clip
from .generate import (
    CATEGORIES,
    GeneratorConfig,
    build_items,
    clip_path,
    dataset_statistics,
    generate_dataset,
    synthesize_clip,
)
from .transcript import (
    Replacement,
    ReplacementPlan,
    SentimentLexicon,
    Token,
    Transcript,
    best_single_replacement,
    replacement_budget,
    select_replacements,
    sentiment_score,
)
