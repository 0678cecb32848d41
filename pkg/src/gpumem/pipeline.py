"""Glue between records and models: one fitted-model type for all six kinds."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import (DataError, DatasetSplits, Encoded, FeatureSpec, Scaler, TaskRecord, apply_scaler,
                   fit_scaler, tree_matrix)
from .numerics import ConfigError
from .regressor import FORWARD, HybridConfig, ModelParams, init_params
from .training import TrainConfig, TrainHistory, train
from . import trees

log = logging.getLogger(__name__)

NEURAL_KINDS = ("hybrid", "transformer")
TREE_KINDS = trees.TREE_KINDS
ALL_KINDS = TREE_KINDS + NEURAL_KINDS

LABELS = {
    "cart": "Decision tree",
    "rf": "Random forest",
    "adaboost": "Adaboost",
    "gbt": "XGBoost",
    "hybrid": "BiGRU-Transformer",
    "transformer": "Transformer",
}

TREE_DEFAULTS = {
    "cart": {"max_depth": 8, "min_samples_leaf": 2},
    "rf": {"n_trees": 100, "max_depth": 8, "feature_fraction": None, "min_samples_leaf": 2},
    "adaboost": {"n_rounds": 50, "max_depth": 3},
    "gbt": {"n_rounds": 100, "max_depth": 4, "eta": 0.1, "lam": 1.0, "gamma": 0.0},
}

_TREE_FIT = {"cart": trees.cart_fit, "rf": trees.rf_fit, "adaboost": trees.adaboost_r2_fit, "gbt": trees.gbt_fit}
_SEEDED = {"rf", "adaboost"}


class SchemaMismatch(ValueError):
    pass


@dataclass
class FittedModel:
    kind: str
    spec: FeatureSpec
    scaler: Scaler
    options: dict
    split: dict = field(default_factory=dict)
    params: ModelParams | None = None
    tree: object | None = None

    @property
    def config(self) -> HybridConfig:
        return HybridConfig(**self.options)

    def _raw(self, enc: Encoded, batch_size: int = 256) -> np.ndarray:
        # neural models emit standardized targets; trees emit MB
        n = len(enc)
        if self.kind in NEURAL_KINDS:
            cfg = self.config
            fwd = FORWARD[self.kind]
            out = [fwd(enc.subset(np.arange(s, min(n, s + batch_size))), self.spec, self.params, cfg).data
                   for s in range(0, n, batch_size)]
            return np.concatenate(out) if out else np.zeros(0)
        if n == 0:
            return np.zeros(0)
        return self.tree.predict(tree_matrix(enc, self.spec))

    def predict(self, records: Sequence[TaskRecord]) -> np.ndarray:
        """Predictions in MB, row order preserved."""
        enc = apply_scaler(records, self.scaler, self.spec)
        if self.kind in NEURAL_KINDS:
            return self.scaler.unscale_target(self._raw(enc))
        return self._raw(enc)

    def check_schema(self, data_spec: FeatureSpec) -> None:
        """Error unless ``data_spec`` has our feature order and only known categories."""
        ok = data_spec.names == self.spec.names
        if ok:
            for f in data_spec.features:
                if f.kind == "categorical" and not set(f.vocab) <= set(self.spec[f.name].vocab):
                    ok = False
        if not ok:
            raise SchemaMismatch(f"checkpoint feature spec {self.spec.to_dict()} does not cover "
                                 f"data feature spec {data_spec.to_dict()}")


def fit_model(kind: str, records: Sequence[TaskRecord], splits: DatasetSplits, seed: int = 0,
              preset: str = "tiny", train_cfg: TrainConfig | None = None, tree_opts: dict | None = None,
              hybrid_cfg: HybridConfig | None = None, spec: FeatureSpec | None = None
              ) -> tuple[FittedModel, TrainHistory | None]:
    """Fit one model kind on ``splits.train`` (validation used by neural early selection)."""
    if kind not in ALL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; choose from {ALL_KINDS}")
    if not splits.train:
        raise DataError("empty training split")
    spec = spec or FeatureSpec.from_records(records)
    scaler = fit_scaler(records, splits.train)
    enc = apply_scaler(records, scaler, spec)
    split_info = {"seed": splits.seed, "fractions": list(splits.fractions), "n": len(records)}

    if kind in NEURAL_KINDS:
        cfg = hybrid_cfg or HybridConfig.preset_named(preset)
        tcfg = train_cfg or TrainConfig(seed=seed)
        params = init_params(kind, cfg, spec, seed)
        fwd = FORWARD[kind]
        named = params.named()
        _, history = train(lambda e, training, rng: fwd(e, spec, params, cfg, training, rng), named,
                           enc.subset(splits.train), enc.subset(splits.val), tcfg)
        return FittedModel(kind, spec, scaler, cfg.to_dict(), split_info, params=params), history

    opts = {**TREE_DEFAULTS[kind], **(tree_opts or {})}
    if kind in _SEEDED:
        opts["seed"] = seed
    # trees fit MB directly: splits are scale-free and leaves then memorize exactly
    sub = enc.subset(splits.train)
    y = np.array([records[i].memory_usage_mb for i in splits.train], dtype=np.float64)
    fitted = _TREE_FIT[kind](tree_matrix(sub, spec), y, **opts)
    return FittedModel(kind, spec, scaler, opts, split_info, tree=fitted), None
