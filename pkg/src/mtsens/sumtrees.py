"""Bayesian sum-of-trees regression for continuous responses.

T regularized trees are updated by backfitting MCMC (grow / prune / change
proposals at 0.25 / 0.25 / 0.5), leaf values by conjugate normal draws, and
the error variance by a scaled-inverse-chi-square update. The response is
min-max scaled to [-0.5, 0.5] internally; predictions are returned on the
original scale.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import chi2

from . import _treekernel as tk
from .errors import DataError

MAX_DEPTH = 9  # heap-backed trees: 1023 node slots


@dataclass(frozen=True)
class SumOfTreesConfig:
    """Sampler settings. ``fast()`` trades posterior resolution for speed
    when thousands of fits are needed."""

    tree_count: int = 200
    burn_in: int = 250
    keep: int = 1000
    kappa: float = 2.0
    sigma_df: float = 3.0
    sigma_quantile: float = 0.90
    depth_base: float = 0.95
    depth_power: float = 2.0
    cutpoints: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.tree_count < 1 or self.keep < 1 or self.burn_in < 0:
            raise DataError("need tree_count >= 1, keep >= 1, burn_in >= 0")
        if self.kappa <= 0 or self.sigma_df <= 0 or self.cutpoints < 1:
            raise DataError("need kappa > 0, sigma_df > 0, cutpoints >= 1")
        if not 0.0 < self.depth_base < 1.0 or self.depth_power <= 0:
            raise DataError("need depth_base in (0,1) and depth_power > 0")
        if not 0.0 < self.sigma_quantile < 1.0:
            raise DataError("need sigma_quantile in (0,1)")

    @classmethod
    def fast(cls, seed: int = 0) -> "SumOfTreesConfig":
        return cls(tree_count=50, burn_in=100, keep=250, seed=seed)

    def with_seed(self, seed: int) -> "SumOfTreesConfig":
        return replace(self, seed=int(seed))


@dataclass(frozen=True, eq=False)
class SumOfTreesModel:
    """Kept posterior: serialized forests, sigma draws, and the response scaling."""

    node_var: np.ndarray  # preorder split variable, -1 at leaves
    node_cut: np.ndarray
    node_val: np.ndarray  # leaf values on the scaled response
    node_right: np.ndarray  # right-child position within the tree, -1 at leaves
    offsets: np.ndarray  # (keep*T + 1,) tree boundaries in the node arrays
    changed: np.ndarray  # (keep, T) 1 where the tree structure moved
    sigma2_scaled: np.ndarray  # (keep,)
    y_min: float
    y_max: float
    n_columns: int
    config: SumOfTreesConfig
    degenerate: bool = False

    @property
    def keep(self) -> int:
        return self.sigma2_scaled.shape[0]

    @property
    def sigma_draws(self) -> np.ndarray:
        """Error SD draws on the original response scale."""
        return np.sqrt(self.sigma2_scaled) * (self.y_max - self.y_min)

    def scale(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.y_min) / (self.y_max - self.y_min) - 0.5

    def unscale(self, s: np.ndarray) -> np.ndarray:
        return (np.asarray(s, dtype=np.float64) + 0.5) * (self.y_max - self.y_min) + self.y_min


def _check_matrix(x, n_columns: int | None = None) -> np.ndarray:
    x = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if x.ndim != 2:
        raise DataError("design matrix must be 2-D")
    if not np.isfinite(x).all():
        raise DataError("design matrix has non-finite entries")
    if n_columns is not None and x.shape[1] != n_columns:
        raise DataError(f"design matrix has {x.shape[1]} columns, model was trained on {n_columns}")
    return x


def _cut_grids(x: np.ndarray, ncut: int) -> np.ndarray:
    q = x.shape[1]
    grids = np.empty((q, ncut))
    for c in range(q):
        lo, hi = x[:, c].min(), x[:, c].max()
        grids[c] = np.linspace(lo, hi, ncut + 2)[1:-1]
    return grids


def _ls_sigma(x: np.ndarray, ys: np.ndarray) -> float:
    """Least-squares residual SD of the scaled response, for the variance prior anchor."""
    n = x.shape[0]
    design = np.column_stack([np.ones(n), x])
    if n <= design.shape[1] + 1:
        return float(max(ys.std(), 1e-6))
    beta, _, rank, _ = np.linalg.lstsq(design, ys, rcond=None)
    resid = ys - design @ beta
    dof = n - int(rank)
    if dof <= 0:
        return float(max(ys.std(), 1e-6))
    return float(max(np.sqrt(resid @ resid / dof), 1e-6))


def fit(x_aug, y, cfg: SumOfTreesConfig) -> SumOfTreesModel:
    """Fit the sampler to (x_aug, y); x_aug already carries the treatment column.

    Raises:
        DataError: n < 10, non-finite y, or shape mismatch.
    """
    x = _check_matrix(x_aug)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if y.shape != (n,):
        raise DataError(f"y has shape {y.shape}, expected ({n},)")
    if n < 10:
        raise DataError(f"need at least 10 rows, got {n}")
    if not np.isfinite(y).all():
        raise DataError("y has non-finite entries")

    y_min, y_max = float(y.min()), float(y.max())
    if y_max - y_min < 1e-12:
        # constant response: every prediction is y itself, sigma pinned at floor
        keep = cfg.keep
        return SumOfTreesModel(
            node_var=np.full(keep, -1, np.int32),
            node_cut=np.zeros(keep),
            node_val=np.zeros(keep),
            node_right=np.full(keep, -1, np.int32),
            offsets=np.arange(keep + 1, dtype=np.int64),
            changed=np.ones((keep, 1), np.uint8),
            sigma2_scaled=np.full(keep, 1e-12),
            y_min=y_min - 0.5,
            y_max=y_min + 0.5,
            n_columns=x.shape[1],
            config=cfg,
            degenerate=True,
        )

    ys = (y - y_min) / (y_max - y_min) - 0.5
    grids = _cut_grids(x, cfg.cutpoints)
    sigma_mu2 = (0.5 / (cfg.kappa * np.sqrt(cfg.tree_count))) ** 2
    sig_hat = _ls_sigma(x, ys)
    nu = float(cfg.sigma_df)
    # lam places sigma_quantile of the prior mass below sig_hat
    lam = sig_hat**2 * chi2.ppf(1.0 - cfg.sigma_quantile, nu) / nu

    kt = cfg.keep * cfg.tree_count
    cap = kt * 24 + 4096
    while True:
        node_var = np.empty(cap, np.int32)
        node_cut = np.empty(cap)
        node_val = np.empty(cap)
        node_right = np.empty(cap, np.int32)
        offsets = np.zeros(kt + 1, np.int64)
        changed = np.zeros((cfg.keep, cfg.tree_count), np.uint8)
        sigma2_out = np.empty(cfg.keep)
        status, written = tk.run_chain(
            x,
            ys,
            grids,
            cfg.tree_count,
            cfg.burn_in,
            cfg.keep,
            sigma_mu2,
            nu,
            lam,
            sig_hat**2,
            cfg.depth_base,
            cfg.depth_power,
            np.uint64(cfg.seed),
            MAX_DEPTH,
            node_var,
            node_cut,
            node_val,
            node_right,
            offsets,
            changed,
            sigma2_out,
        )
        if status == 0:
            break
        cap = max(cap * 2, int(written) * 2)

    written = int(offsets[-1])
    return SumOfTreesModel(
        node_var=node_var[:written].copy(),
        node_cut=node_cut[:written].copy(),
        node_val=node_val[:written].copy(),
        node_right=node_right[:written].copy(),
        offsets=offsets,
        changed=changed,
        sigma2_scaled=sigma2_out,
        y_min=y_min,
        y_max=y_max,
        n_columns=x.shape[1],
        config=cfg,
    )


def predict_draws(model: SumOfTreesModel, x_new) -> np.ndarray:
    """Posterior prediction draws, shape (keep, m), on the original response scale."""
    x = _check_matrix(x_new, model.n_columns)
    tree_count = 1 if model.degenerate else model.config.tree_count
    scaled = tk.eval_rows_draws(
        model.node_var,
        model.node_cut,
        model.node_val,
        model.node_right,
        model.offsets,
        model.changed,
        model.keep,
        tree_count,
        x,
    )
    return model.unscale(scaled)


def mean_prediction_draws(model: SumOfTreesModel, x_new, weights=None) -> np.ndarray:
    """Weighted-mean prediction per draw, shape (keep,), on the original scale.

    Cheaper than predict_draws(...).mean() when only the mean is needed;
    weights default to 1/m.
    """
    x = _check_matrix(x_new, model.n_columns)
    m = x.shape[0]
    if weights is None:
        w = np.full(m, 1.0 / m)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (m,):
            raise DataError(f"weights have shape {w.shape}, expected ({m},)")
    wtot = float(w.sum())
    if wtot <= 0:
        raise DataError("weights must sum to a positive value")
    tree_count = 1 if model.degenerate else model.config.tree_count
    scaled = tk.eval_mean_draws(
        model.node_var,
        model.node_cut,
        model.node_val,
        model.node_right,
        model.offsets,
        model.changed,
        model.keep,
        tree_count,
        x,
        w,
    )
    # unscale a weighted mean: the +0.5 offset enters once per unit weight
    return (scaled / wtot + 0.5) * (model.y_max - model.y_min) + model.y_min
