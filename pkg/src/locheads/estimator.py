"""Estimator facade: discovery is fit, grounding is predict.

Wraps the functional pipeline in a scikit-learn style class so corpora of
attention dumps can be used with familiar fit/predict/score/get_params
conventions. Parameters are stored verbatim in __init__ and validated on
fit, per the scikit-learn contract.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .grounding import GroundingConfig, GroundingResult, ground_sample
from .metrics import evaluate_rec
from .selection import SelectionConfig, selection_frequency
from .stats import mean_attention_sums
from .types import AttentionDump, LocheadsError, SampleAnnotation


class LocalizationHeadGrounder(BaseEstimator):
    """Finds localization heads on fit, grounds new samples on predict.

    fit(dumps) computes per-head statistics, the attention-sum threshold
    and selection frequencies, exposing them as stats_, threshold_ and
    report_. predict(dumps) returns one pixel-space box per dump as an
    (n, 4) int array of (x_min, y_min, x_max, y_max); ground(dumps)
    returns the full per-sample results including pseudo-masks.
    score(dumps, annotations) is accuracy at box IoU >= 0.5.
    """

    def __init__(
        self,
        top_k: int = 3,
        lowest_n: int = 10,
        excluded_layers: int = 2,
        num_trials: int = 5,
        num_samples_per_trial: int = 1000,
        criteria: str = "both",
        strategy: str = "fixed",
        rng_seed: int = 0,
        tau: float | None = None,
        kernel_size: int = 7,
        sigma: float = 1.0,
        smoothing_enabled: bool = True,
        fallback_argmax: bool = False,
    ) -> None:
        self.top_k = top_k
        self.lowest_n = lowest_n
        self.excluded_layers = excluded_layers
        self.num_trials = num_trials
        self.num_samples_per_trial = num_samples_per_trial
        self.criteria = criteria
        self.strategy = strategy
        self.rng_seed = rng_seed
        self.tau = tau
        self.kernel_size = kernel_size
        self.sigma = sigma
        self.smoothing_enabled = smoothing_enabled
        self.fallback_argmax = fallback_argmax

    def _selection_config(self) -> SelectionConfig:
        return SelectionConfig(
            num_samples_per_trial=self.num_samples_per_trial,
            num_trials=self.num_trials,
            lowest_n=self.lowest_n,
            top_k=self.top_k,
            excluded_layers=self.excluded_layers,
            criteria=self.criteria,
            strategy=self.strategy,
            rng_seed=self.rng_seed,
        )

    def _grounding_config(self) -> GroundingConfig:
        return GroundingConfig(
            kernel_size=self.kernel_size,
            sigma=self.sigma,
            smoothing_enabled=self.smoothing_enabled,
            strategy=self.strategy,
        )

    def fit(self, X, y=None) -> "LocalizationHeadGrounder":
        """Discover localization heads on a corpus of attention dumps."""
        dumps = list(X)
        if not dumps:
            raise LocheadsError("cannot fit on an empty corpus")
        config = self._selection_config()
        self.stats_ = mean_attention_sums(dumps, config.excluded_layers)
        self.report_ = selection_frequency(dumps, self.stats_, config, tau=self.tau)
        self.threshold_ = self.report_.tau_used
        self.heads_ = list(self.report_.top_k_heads)
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "report_"):
            raise NotFittedError(
                "this LocalizationHeadGrounder is not fitted; call fit first"
            )

    def ground(self, X) -> list[GroundingResult]:
        """Full grounding results (boxes plus pseudo-masks) per dump."""
        self._check_fitted()
        config = self._grounding_config()
        return [
            ground_sample(
                dump,
                self.report_,
                config,
                criteria=self.criteria,
                fallback_argmax=self.fallback_argmax,
            )
            for dump in X
        ]

    def predict(self, X) -> np.ndarray:
        """Pixel boxes, one row (x_min, y_min, x_max, y_max) per dump."""
        results = self.ground(X)
        return np.array(
            [result.bbox_pixels.as_tuple() for result in results], dtype=np.int64
        )

    def score(self, X, y: list[SampleAnnotation]) -> float:
        """Accuracy at box IoU >= 0.5 against ground-truth annotations."""
        summary = evaluate_rec(self.ground(X), list(y))
        return summary.acc_at_05
