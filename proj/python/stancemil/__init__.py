"""Joint claim veracity and post stance prediction from conversation trees."""

from __future__ import annotations

import json
import os
from typing import Any, Iterable, Sequence

from . import _core
from ._core import PreparedData, StancemilError

__all__ = [
    "Model",
    "PreparedData",
    "StancemilError",
    "aggregation_claim_loss",
    "binarize",
    "binary_auc",
    "binary_loss",
    "generate_synthetic",
    "run_ablations",
    "target_pairs",
]

DEFAULT_VERACITY = ("N", "T", "F", "U")
DEFAULT_STANCE = ("S", "D", "Q", "C")


def generate_synthetic(trees: int = 500, seed: int = 0, **options: Any) -> list[dict]:
    """Planted-rule corpus as a list of canonical tree records."""
    return json.loads(_core.generate_synthetic(json.dumps({"trees": trees, **options}), seed))


def target_pairs(veracity: Sequence[str] = DEFAULT_VERACITY,
                 stance: Sequence[str] = DEFAULT_STANCE) -> list[tuple[str, str]]:
    return [tuple(p) for p in _core.target_pairs(list(veracity), list(stance))]


def binarize(gold: str, veracity: Sequence[str] = DEFAULT_VERACITY,
             stance: Sequence[str] = DEFAULT_STANCE) -> list[int]:
    """Bag label of every classifier for a claim with this gold veracity."""
    return _core.binarize(gold, list(veracity), list(stance))


def binary_loss(predictions: Iterable[tuple[float, int]]) -> float:
    return _core.binary_loss([(float(p), int(y)) for p, y in predictions])


def aggregation_claim_loss(scores: Sequence[float], gold: int) -> float:
    return _core.aggregation_claim_loss([float(s) for s in scores], gold)


def binary_auc(scores: Sequence[float], positive: Sequence[int]) -> float:
    return _core.binary_auc([float(s) for s in scores], [int(y) for y in positive])


def run_ablations(config: dict, codes: Sequence[str], train: list[dict], test: list[dict]) -> dict:
    """Metrics per variant code, using mock explanations."""
    return json.loads(_core.run_ablations(json.dumps(config), list(codes), json.dumps(train), json.dumps(test)))


class Model:
    """K binary classifiers plus the classifier aggregator.

    provider is "mock" (offline), "config" (the provider section of the
    config; an HTTP provider reads its key from the environment) or "none"
    (cache only).
    """

    def __init__(self, config: dict | None = None, provider: str = "mock",
                 cache_dir: str | os.PathLike = "", *, _native: Any = None):
        self._m = _native or _core.Model(json.dumps(config or {}), provider, os.fspath(cache_dir))

    @classmethod
    def from_run(cls, run_dir: str | os.PathLike, provider: str = "mock",
                 cache_dir: str | os.PathLike = "") -> "Model":
        return cls(_native=_core.Model.from_run(os.fspath(run_dir), provider, os.fspath(cache_dir)))

    @property
    def config(self) -> dict:
        return json.loads(self._m.config())

    def prepare(self, trees: list[dict], require_labels: bool = False) -> PreparedData:
        return self._m.prepare(json.dumps(trees), require_labels)

    def train_stage1(self, train: PreparedData) -> list[list[float]]:
        """Per-classifier epoch losses."""
        return json.loads(self._m.train_stage1(train))

    def train_stage2(self, train: PreparedData) -> list[float]:
        return json.loads(self._m.train_stage2(train))[0]

    def fit(self, train: PreparedData) -> "Model":
        self.train_stage1(train)
        self.train_stage2(train)
        return self

    def predict(self, data: PreparedData) -> list[dict]:
        return json.loads(self._m.predict(data))

    def evaluate(self, data: PreparedData) -> dict:
        return json.loads(self._m.evaluate(data))

    def run(self, train: PreparedData, test: PreparedData, run_dir: str | os.PathLike = "") -> dict:
        """Both stages, then evaluation; writes artifacts when run_dir is given."""
        return json.loads(self._m.run(train, test, os.fspath(run_dir)))

    def attention(self, data: PreparedData, claim_id: str) -> dict:
        return json.loads(self._m.attention(data, claim_id))

    def classifier_digests(self) -> list[str]:
        return self._m.classifier_digests()

    def aggregator_digest(self) -> str:
        return self._m.aggregator_digest()

    def save(self, run_dir: str | os.PathLike) -> None:
        self._m.save(os.fspath(run_dir))
