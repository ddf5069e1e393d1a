"""Unsupervised self-training for sentiment classification of code-switched text."""

from .backend import BackendConfig, BuiltinModel, Prediction, ProbVector, TrainExample
from .corpus import Corpus, LangTag, SentimentLabel, Utterance, filter_two_class, parse_jsonl, parse_token_tagged, preprocess
from .engine import PseudoLabel, RunConfig, RunResult, RunState, iterate_once, run_to_completion, zero_shot_init
from .selection import Ratio, RatioEstimate, Scheduled, TokenRatioFiltered, Vanilla, estimate_ratio, should_stop
from .synthetic import SyntheticSpec, generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "BackendConfig", "BuiltinModel", "Corpus", "LangTag", "Prediction", "ProbVector", "PseudoLabel",
    "Ratio", "RatioEstimate", "RunConfig", "RunResult", "RunState", "Scheduled", "SentimentLabel",
    "SyntheticSpec", "TokenRatioFiltered", "TrainExample", "Utterance", "Vanilla", "estimate_ratio",
    "filter_two_class", "generate_synthetic", "iterate_once", "parse_jsonl", "parse_token_tagged",
    "preprocess", "run_to_completion", "should_stop", "zero_shot_init",
]
