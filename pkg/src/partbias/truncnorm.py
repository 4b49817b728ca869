"""Standard-normal and single-sided truncated-normal primitives.

Participation is modelled as a standard-normal liability ``X`` exceeding
``t_alpha = Phi^-1(1 - alpha)``.  Everything downstream only needs the
Mills ratio ``phi(t_alpha) / alpha`` (the truncated mean) and

    xi(alpha) = mills**2 - t_alpha * mills

so that ``1 - xi(alpha) == Var(X | X > t_alpha)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

MIN_ALPHA = 1e-6

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def std_normal_pdf(x):
    """Standard normal density; accepts scalars or arrays."""
    x = np.asarray(x, dtype=float)
    out = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return float(out) if out.ndim == 0 else out


def std_normal_cdf(x):
    # ndtr is erfc based, accurate in both tails
    out = special.ndtr(np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def std_normal_quantile(p):
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0.0) & (p < 1.0))):
        raise ValueError("quantile requires p in the open interval (0, 1)")
    out = special.ndtri(p)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SelectionContext:
    """Truncation constants for a participation rate ``alpha``.

    ``alpha == 1`` means no selection: ``t_alpha = -inf`` and both
    ``mills`` and ``xi`` are zero, which turns every bias formula into
    the identity.
    """

    alpha: float
    t_alpha: float
    mills: float
    xi: float

    @property
    def density(self) -> float:
        """phi(t_alpha), i.e. ``alpha * mills``."""
        return self.alpha * self.mills

    @property
    def no_selection(self) -> bool:
        return self.alpha == 1.0


def check_alpha(alpha) -> float:
    try:
        alpha = float(alpha)
    except (TypeError, ValueError):
        raise ValueError(f"alpha must be a number, got {alpha!r}") from None
    if not math.isfinite(alpha) or alpha < MIN_ALPHA or alpha > 1.0:
        raise ValueError(
            f"alpha must lie in [{MIN_ALPHA:g}, 1], got {alpha!r}"
        )
    return alpha


def make_selection_context(alpha) -> SelectionContext:
    alpha = check_alpha(alpha)
    if alpha == 1.0:
        return SelectionContext(alpha=1.0, t_alpha=-math.inf, mills=0.0, xi=0.0)
    # -ndtri(alpha) keeps full relative precision for small alpha
    t = -float(special.ndtri(alpha))
    mills = std_normal_pdf(t) / alpha
    # factored form limits cancellation between mills**2 and t * mills
    xi = mills * (mills - t)
    return SelectionContext(alpha=alpha, t_alpha=t, mills=mills, xi=xi)


def xi(alpha) -> float:
    return make_selection_context(alpha).xi


def truncated_mean(alpha) -> float:
    """E[X | X > t_alpha] for standard normal X."""
    return make_selection_context(alpha).mills


def truncated_variance(alpha) -> float:
    """Var(X | X > t_alpha) = 1 - xi(alpha)."""
    return 1.0 - make_selection_context(alpha).xi


def as_context(sel) -> SelectionContext:
    """Accept either a SelectionContext or a bare participation rate."""
    if isinstance(sel, SelectionContext):
        return sel
    return make_selection_context(sel)
