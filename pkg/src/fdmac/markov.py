"""Explicit backoff Markov chain, used as an independent check on the closed-form attempt probability."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .params import ModelDomainError, ProtocolParams, cw_of_stage


@dataclass(frozen=True)
class StationaryDistribution:
    """Stationary probabilities ``pi[(w, W)]``, stored flat with per-stage offsets."""

    probs: np.ndarray
    offsets: tuple[int, ...]
    windows: tuple[int, ...]

    def stage(self, W: int) -> np.ndarray:
        """Probabilities of states (0..CW_W-1, W)."""
        return self.probs[self.offsets[W] : self.offsets[W] + self.windows[W]]

    def __getitem__(self, key: tuple[int, int]) -> float:
        w, W = key
        if not 0 <= w < self.windows[W]:
            raise IndexError(f"w={w} outside [0, {self.windows[W]})")
        return float(self.probs[self.offsets[W] + w])

    def transmit_probability(self) -> float:
        """Sum over stages of the probability of sitting at counter zero."""
        return float(sum(self.probs[o] for o in self.offsets))

    @property
    def total(self) -> float:
        return float(self.probs.sum())


def transition_matrix(p_success: float, params: ProtocolParams) -> tuple[sp.csr_matrix, tuple[int, ...], tuple[int, ...]]:
    """Row-stochastic transition matrix over states (w, W)."""
    windows = tuple(cw_of_stage(W, params) for W in range(params.w_max + 1))
    offsets = tuple(int(x) for x in np.concatenate(([0], np.cumsum(windows)[:-1])))
    n = sum(windows)
    rows, cols, vals = [], [], []
    cw0 = windows[0]
    for W, (off, cw) in enumerate(zip(offsets, windows)):
        # countdown: (w, W) -> (w-1, W)
        w = np.arange(1, cw)
        rows.append(off + w)
        cols.append(off + w - 1)
        vals.append(np.ones(cw - 1))
        # success from (0, W): uniform over stage 0
        rows.append(np.full(cw0, off))
        cols.append(offsets[0] + np.arange(cw0))
        vals.append(np.full(cw0, p_success / cw0))
        # failure from (0, W): uniform over the next stage, capped at w_max
        nxt = min(W + 1, params.w_max)
        cwn = windows[nxt]
        rows.append(np.full(cwn, off))
        cols.append(offsets[nxt] + np.arange(cwn))
        vals.append(np.full(cwn, (1.0 - p_success) / cwn))
    P = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()  # duplicate entries (w_max = 0) are summed
    return P, offsets, windows


def stationary_distribution(p_success: float, params: ProtocolParams) -> StationaryDistribution:
    """Solve ``pi P = pi``, ``sum(pi) = 1`` by a sparse direct solve."""
    if not 0.0 <= p_success <= 1.0:
        raise ModelDomainError(f"p_success must lie in [0, 1], got {p_success!r}", p_success)
    P, offsets, windows = transition_matrix(p_success, params)
    n = P.shape[0]
    balance = (P.T - sp.identity(n, format="csr")).tocsr()
    # replace one balance equation by the normalisation
    A = sp.vstack([sp.csr_matrix(np.ones((1, n))), balance[1:]])
    b = np.zeros(n)
    b[0] = 1.0
    pi = spla.spsolve(A.tocsc(), b)
    if not np.all(np.isfinite(pi)):
        raise ArithmeticError("stationary solve produced non-finite values")
    return StationaryDistribution(probs=pi, offsets=offsets, windows=windows)
