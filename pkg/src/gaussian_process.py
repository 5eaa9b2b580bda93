"""
One-dimensional Gaussian-process regression with a squared-exponential kernel.

The regressor fits a linear trend by least squares and a zero-mean GP on the
residuals. Hyperparameters are chosen by minimizing the negative log marginal
likelihood over a fixed grid, so fitting is deterministic.
"""

from dataclasses import dataclass
from itertools import product
from typing import Optional, Sequence

import numpy as np
import structlog
from scipy import linalg

from errors import DegenerateInputError

logger = structlog.get_logger(__name__)

LENGTH_FACTORS = (0.1, 0.3, 1.0, 3.0)
SIGNAL_FACTORS = (0.1, 1.0, 10.0)
NOISE_FACTORS = (1e-6, 1e-4, 1e-2)
JITTER = 1e-10


@dataclass(frozen=True)
class KernelHyperparameters:
    length_scale: float
    signal_variance: float
    noise_variance: float

    def to_dict(self):
        return {
            "length_scale": self.length_scale,
            "signal_variance": self.signal_variance,
            "noise_variance": self.noise_variance,
        }


def squared_exponential(x1: np.ndarray, x2: np.ndarray, length_scale: float, signal_variance: float) -> np.ndarray:
    d = x1[:, None] - x2[None, :]
    return signal_variance * np.exp(-0.5 * (d / length_scale) ** 2)


class GaussianProcessRegressor:
    """Linear trend plus squared-exponential GP on the residuals."""

    def __init__(self, hyperparameters: Optional[KernelHyperparameters] = None):
        self.fixed_hyperparameters = hyperparameters
        self.hyperparameters: Optional[KernelHyperparameters] = None
        self.trend = np.zeros(2)
        self._x: Optional[np.ndarray] = None
        self._alpha: Optional[np.ndarray] = None

    def fit(self, x: Sequence[float], y: Sequence[float]) -> "GaussianProcessRegressor":
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if x.shape != y.shape:
            raise DegenerateInputError("inputs and targets differ in length", {"x": len(x), "y": len(y)})
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DegenerateInputError("training data contains non-finite values")
        if np.unique(x).size < 2:
            raise DegenerateInputError("need at least two distinct inputs", {"distinct": int(np.unique(x).size)})

        basis = np.column_stack([np.ones_like(x), x])
        self.trend, *_ = np.linalg.lstsq(basis, y, rcond=None)
        residual = y - basis @ self.trend
        scale = max(float(np.var(y)), float(np.mean(y * y)), 1.0)

        if float(np.var(residual)) <= 1e-16 * scale:
            # exact linear relation; nothing left for the GP to explain
            self._x, self._alpha, self.hyperparameters = None, None, None
            return self

        candidates = (
            [self.fixed_hyperparameters]
            if self.fixed_hyperparameters is not None
            else self._grid(x, residual)
        )
        best = None
        for hyper in candidates:
            nlml, alpha = self._evaluate(hyper, x, residual)
            if best is None or nlml < best[0]:
                best = (nlml, hyper, alpha)
        if best is None or not np.isfinite(best[0]):
            raise DegenerateInputError("no kernel hyperparameters give a positive definite covariance")

        _, self.hyperparameters, self._alpha = best
        self._x = x
        logger.debug("gp fitted", nlml=float(best[0]), **self.hyperparameters.to_dict())
        return self

    def predict(self, x: Sequence[float]) -> np.ndarray:
        """Posterior mean at x."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        mean = self.trend[0] + self.trend[1] * x
        if self._x is None:
            return mean
        h = self.hyperparameters
        k = squared_exponential(x, self._x, h.length_scale, h.signal_variance)
        return mean + k @ self._alpha

    def negative_log_marginal_likelihood(self, hyper: KernelHyperparameters, x: np.ndarray, r: np.ndarray) -> float:
        return self._evaluate(hyper, np.asarray(x, dtype=float), np.asarray(r, dtype=float))[0]

    @staticmethod
    def _grid(x: np.ndarray, r: np.ndarray):
        span = float(np.ptp(x))
        variance = float(np.var(r))
        return [
            KernelHyperparameters(lf * span, sf * variance, nf * variance)
            for lf, sf, nf in product(LENGTH_FACTORS, SIGNAL_FACTORS, NOISE_FACTORS)
        ]

    @staticmethod
    def _evaluate(hyper: KernelHyperparameters, x: np.ndarray, r: np.ndarray):
        k = squared_exponential(x, x, hyper.length_scale, hyper.signal_variance)
        k[np.diag_indices_from(k)] += hyper.noise_variance + JITTER * hyper.signal_variance
        try:
            factor = linalg.cho_factor(k, lower=True)
        except linalg.LinAlgError:
            return np.inf, None
        alpha = linalg.cho_solve(factor, r)
        half_log_det = np.sum(np.log(np.diagonal(factor[0])))
        nlml = 0.5 * float(r @ alpha) + half_log_det + 0.5 * len(r) * np.log(2 * np.pi)
        return nlml, alpha
