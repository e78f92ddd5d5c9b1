"""Dictionary exemplification pipeline: corpus loading, candidate scoring,
judge statistics, readability metrics and pipeline runs."""

import json

from ._dictex import (
    DictexError,
    audit,
    fkgl,
    flipped,
    judge_label,
    sense_id,
    syllable_count,
    word_count,
)
from . import _dictex

__all__ = [
    "DictexError",
    "audit",
    "consensus",
    "exemplification_score",
    "fkgl",
    "flipped",
    "judge_label",
    "load_senses",
    "run",
    "sense_id",
    "sentence_metrics",
    "summarize",
    "syllable_count",
    "win_rate",
    "word_count",
]


def sentence_metrics(sentence):
    return json.loads(_dictex._sentence_metrics(sentence))


def summarize(sentences):
    return json.loads(_dictex._summarize(list(sentences)))


def load_senses(dataset, split="validation"):
    """Parsed, deduplicated senses of one split plus its statistics."""
    return json.loads(_dictex._load_senses(str(dataset), split))


def win_rate(records):
    """Win-rate summary over evaluation records (dicts as in evaluations.jsonl)."""
    return json.loads(_dictex._win_rate(json.dumps(list(records))))


def exemplification_score(sentence, word, mlm_script=None):
    """Score a sentence against a scripted masked language model."""
    return json.loads(_dictex._exemplification_score(sentence, word, json.dumps(mlm_script or {})))


def run(config, stages=()):
    """Run the pipeline (all stages, or the named ones) for a config file."""
    return json.loads(_dictex._run(str(config), list(stages)))


def consensus(session_dir):
    return json.loads(_dictex._consensus(str(session_dir)))
