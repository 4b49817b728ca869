"""Delete-one-block jackknife.

The estimator is any function of pooled per-block sufficient statistics,
so a whole chain (LD score regression slopes followed by the bias
adjustment) gets one standard error that reflects all of its SNP-level
noise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class JackknifeError(RuntimeError):
    pass


@dataclass
class JackknifeResult:
    estimate: np.ndarray
    se: np.ndarray
    leave_one_out: np.ndarray

    @property
    def n_blocks(self) -> int:
        return self.leave_one_out.shape[0]


def block_bounds(n_items: int, n_blocks: int) -> np.ndarray:
    """Start/stop indices of contiguous, near-equal blocks.

    Every block has ``n_items // n_blocks`` items; the remainder goes to
    the last block.
    """
    if n_blocks < 2:
        raise ValueError("need at least 2 jackknife blocks")
    if n_items < n_blocks:
        raise ValueError(f"cannot split {n_items} items into {n_blocks} blocks")
    size = n_items // n_blocks
    starts = np.arange(n_blocks) * size
    stops = np.append(starts[1:], n_items)
    return np.column_stack([starts, stops])


def block_labels(n_items: int, n_blocks: int) -> np.ndarray:
    labels = np.empty(n_items, dtype=np.int64)
    for b, (lo, hi) in enumerate(block_bounds(n_items, n_blocks)):
        labels[lo:hi] = b
    return labels


def jackknife_se_from_loo(leave_one_out) -> np.ndarray:
    loo = np.asarray(leave_one_out, dtype=float)
    B = loo.shape[0]
    centred = loo - loo.mean(axis=0)
    return np.sqrt((B - 1) / B * np.sum(centred**2, axis=0))


def jackknife_se(block_stats, estimator) -> JackknifeResult:
    """Jackknife an estimator of summed per-block statistics.

    ``block_stats`` has shape ``(B, ...)``; ``estimator`` maps the sum over
    blocks (same trailing shape) to a scalar or 1-d array of estimates.
    """
    stats = np.asarray(block_stats, dtype=float)
    B = stats.shape[0]
    if B < 2:
        raise ValueError("need at least 2 jackknife blocks")
    total = stats.sum(axis=0)
    full = np.atleast_1d(np.asarray(estimator(total), dtype=float))
    loo = np.empty((B,) + full.shape)
    for b in range(B):
        try:
            loo[b] = estimator(total - stats[b])
        except Exception as exc:
            raise JackknifeError(f"estimator failed with block {b} left out: {exc}") from exc
    return JackknifeResult(estimate=full, se=jackknife_se_from_loo(loo), leave_one_out=loo)


def jackknife_loo(n_blocks: int, estimator) -> JackknifeResult:
    """Jackknife when leave-one-out estimates are easier to compute directly.

    ``estimator(None)`` must return the full-data estimate and
    ``estimator(b)`` the estimate with block ``b`` removed.
    """
    if n_blocks < 2:
        raise ValueError("need at least 2 jackknife blocks")
    full = np.atleast_1d(np.asarray(estimator(None), dtype=float))
    loo = np.empty((n_blocks,) + full.shape)
    for b in range(n_blocks):
        try:
            loo[b] = estimator(b)
        except Exception as exc:
            raise JackknifeError(f"estimator failed with block {b} left out: {exc}") from exc
    return JackknifeResult(estimate=full, se=jackknife_se_from_loo(loo), leave_one_out=loo)
