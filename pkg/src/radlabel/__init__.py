"""Radiology-report labeling: a rule-based teacher distilled into a BiLSTM
student that emits calibrated soft labels."""

from .corpus import (
    BODY_REGIONS,
    EncodedSentence,
    Report,
    Sentence,
    SyntheticSpec,
    Template,
    Token,
    Vocabulary,
    build_vocabulary,
    encode,
    encode_tokens,
    generate_synthetic,
    load_corpus,
    split_sentences,
    tokenize,
)
from .errors import InputError, NumericalError, RadlabelError
from .rules import (
    Finding,
    Lexicon,
    NegationRule,
    RuleLabel,
    classify_report,
    classify_sentence,
    detect_negation,
    label_report,
    load_lexicon,
    load_negation_rules,
    match_findings,
)
from .trainer import (
    Checkpoint,
    LabeledScore,
    TrainConfig,
    TrainHistory,
    label_corpus,
    make_training_set,
    predict_report,
    predict_sentence,
    train,
)

__version__ = "0.1.0"
