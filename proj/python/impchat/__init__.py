"""Personalized response selection from implicit user profiles.

Thin wrappers over the C++ core in ``impchat._core``.  Samples are plain
dicts: ``{"user_id", "query", "candidates": [{"text", "label"}],
"history": [{"post", "response"}]}``.
"""

import json

from . import _core
from ._core import (
    CheckpointError,
    LexIndex,
    TrainingDiverged,
    Vocab,
    config_hash,
    default_config,
    evaluate,
    mrr,
    ndcg5,
    recall_at_k,
    rp_at_k,
    tokenize,
)

__all__ = [
    "CheckpointError",
    "LexIndex",
    "Model",
    "TrainingDiverged",
    "Vocab",
    "build_synthetic_dataset",
    "config_hash",
    "default_config",
    "evaluate",
    "mrr",
    "ndcg5",
    "rank_candidates",
    "recall_at_k",
    "rp_at_k",
    "run_cli",
    "score_samples",
    "tokenize",
    "train",
]


def _stringify(config):
    out = {}
    for key, value in (config or {}).items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        out[key] = str(value)
    return out


class Model(_core.Model):
    """The matching model.  Config values may be ints, floats or bools."""

    def __init__(self, config, vocab_size, seed=0):
        super().__init__(_stringify(config), vocab_size, seed)


class SyntheticDataset:
    """Splits, vocabulary and personas of a generated corpus."""

    def __init__(self, core, config):
        self._core = core
        self._config = config
        self.vocab = core.vocab
        self.config_hash = core.config_hash

    def split(self, name):
        return json.loads(self._core.split_json(name))

    @property
    def personas(self):
        return json.loads(self._core.personas_json())

    def save(self, directory):
        self._core.save(str(directory), self._config)


def build_synthetic_dataset(config=None, **overrides):
    """Generates a persona corpus and builds train/valid/test samples.

    Keys follow the CLI config file (``synth.users``, ``t``, ``seed``, ...).
    """
    cfg = _stringify(config)
    cfg.update(_stringify(overrides))
    return SyntheticDataset(_core.build_synthetic_dataset(cfg), cfg)


def score_samples(model, samples, vocab):
    """Candidate probabilities, one list per sample."""
    return model.score_json(json.dumps(list(samples)), vocab)


def train(model, train_samples, valid_samples, vocab, seed=0):
    """Trains in place and returns the per-epoch log."""
    return model.train_json(json.dumps(list(train_samples)), json.dumps(list(valid_samples)), vocab, seed)


def rank_candidates(model, vocab, query, history, candidates):
    """Returns (index, text, score) sorted by descending score, ties in input order."""
    sample = {
        "user_id": "request",
        "query": query,
        "history": [{"post": p, "response": r} for p, r in history],
        "candidates": [{"text": c, "label": 0} for c in candidates],
    }
    scores = score_samples(model, [sample], vocab)[0]
    order = sorted(range(len(candidates)), key=lambda i: -scores[i])
    return [(i, candidates[i], scores[i]) for i in order]


def run_cli(*args):
    """Runs an ``impchat`` subcommand in-process; returns (exit_code, stdout, stderr)."""
    return _core.run_cli([str(a) for a in args])
