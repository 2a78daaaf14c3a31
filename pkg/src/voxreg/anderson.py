"""Anderson acceleration for fixed-point iterations on small vectors.

Given a map ``G`` with fixed-point residual ``H(x) = G(x) - x``, the
extrapolation combines the last few iterates through an unconstrained
least-squares over residual differences (the affine sum-to-one constraint
is absorbed by the difference parameterization).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

_CONDITION_LIMIT = 1e10


@dataclass
class AndersonState:
    """Rolling history of the last iterates of a fixed-point map.

    ``window`` is the number of residual differences used; one extra entry
    is kept so that many differences are available.
    """

    window: int = 5
    _g: deque = field(default_factory=deque, repr=False)
    _h: deque = field(default_factory=deque, repr=False)

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        self._g = deque(maxlen=self.window + 1)
        self._h = deque(maxlen=self.window + 1)

    def push(self, x, g_x):
        """Record one application of the map: iterate ``x`` and value ``G(x)``."""
        x = np.asarray(x, dtype=float)
        g_x = np.asarray(g_x, dtype=float)
        self._g.append(g_x.copy())
        self._h.append(g_x - x)

    def __len__(self) -> int:
        return len(self._g)


def anderson_accelerate(state: AndersonState, g_x):
    """Extrapolated next iterate; falls back to ``g_x`` when the history is
    too short or the residual-difference system is ill-conditioned."""
    if len(state) < 1:
        raise ValueError("push at least one (x, G(x)) pair before accelerating")
    g_x = np.asarray(g_x, dtype=float)
    m = len(state) - 1
    if m == 0:
        return g_x.copy()
    g_hist = np.stack(list(state._g))
    h_hist = np.stack(list(state._h))
    dg = np.diff(g_hist, axis=0).T  # columns are successive G differences
    dh = np.diff(h_hist, axis=0).T
    if np.linalg.cond(dh) > _CONDITION_LIMIT:
        return g_x.copy()
    theta, *_ = np.linalg.lstsq(dh, h_hist[-1], rcond=None)
    return g_x - dg @ theta
