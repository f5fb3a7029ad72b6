"""Two-component 1-D Gaussian mixture fitted by EM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, NumericError

VARIANCE_FLOOR = 1e-6
DEFAULT_MAX_ITERS = 100
DEFAULT_TOL = 1e-6
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GmmFit:
    weights: np.ndarray  # (2,), sorted by mean ascending
    means: np.ndarray
    variances: np.ndarray
    responsibilities: np.ndarray  # (n, 2)
    log_likelihood: float
    converged: bool
    degenerate: bool = False
    n_iter: int = 0
    ll_trace: tuple[float, ...] = ()


def _log_joint(x, weights, means, variances):
    # (..., n, 2) log pi_j + log N(x | mu_j, var_j); parameters are (..., 2)
    diff = x[..., :, None] - means[..., None, :]
    return (
        np.log(weights)[..., None, :]
        - 0.5 * (_LOG_2PI + np.log(variances))[..., None, :]
        - 0.5 * diff * diff / variances[..., None, :]
    )


def _e_step(x, mask, weights, means, variances):
    lj = _log_joint(x, weights, means, variances)
    top = lj.max(axis=-1, keepdims=True)
    lse = top[..., 0] + np.log(np.exp(lj - top).sum(axis=-1))
    resp = np.exp(lj - lse[..., None]) * mask[..., None]
    return resp, (lse * mask).sum(axis=-1)


def _degenerate_fit(x, variance_floor):
    n = x.size
    var = max(float(np.var(x)), variance_floor)
    resp = np.zeros((n, 2))
    resp[:, 1] = 1.0
    means = np.full(2, x[0])
    variances = np.full(2, var)
    weights = np.array([0.5, 0.5])
    ll = float(_e_step(x, np.ones(n), weights, means, variances)[1])
    return GmmFit(weights, means, variances, resp, ll, True, degenerate=True)


def _initial_means(x):
    # equal quartile means are a fixed point of EM; spread them to the extremes
    q = np.percentile(x, [25.0, 75.0])
    return q if q[0] < q[1] else np.array([x.min(), x.max()])


def _check(x):
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 2:
        raise InsufficientDataError(f"GMM needs at least 2 points, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise NumericError("GMM input contains non-finite values")
    return x


def fit_gmm_many(
    value_sets,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
    variance_floor: float = VARIANCE_FLOOR,
) -> list[GmmFit]:
    """Independent fits for several value sets, run in lockstep.

    Matches calling :func:`fit_gmm` on each set up to float rounding; every
    fit stops on its own convergence test.
    """
    sets = [_check(v) for v in value_sets]
    fits: list[GmmFit | None] = [None] * len(sets)
    live = []
    for i, x in enumerate(sets):
        if np.ptp(x) == 0.0:
            fits[i] = _degenerate_fit(x, variance_floor)
        else:
            live.append(i)
    if not live:
        return fits

    g = len(live)
    width = max(sets[i].size for i in live)
    x = np.zeros((g, width))
    mask = np.zeros((g, width))
    for r, i in enumerate(live):
        x[r, : sets[i].size] = sets[i]
        mask[r, : sets[i].size] = 1.0
    n = mask.sum(axis=1)

    means = np.stack([_initial_means(sets[i]) for i in live])
    variances = np.repeat(
        np.maximum([np.var(sets[i]) for i in live], variance_floor)[:, None], 2, axis=1
    )
    weights = np.full((g, 2), 0.5)
    resp, ll = _e_step(x, mask, weights, means, variances)
    traces = [[float(v)] for v in ll]
    active = np.ones(g, dtype=bool)
    converged = np.zeros(g, dtype=bool)
    iters = np.zeros(g, dtype=int)
    for it in range(1, max_iters + 1):
        nk = resp.sum(axis=1)
        # a component that lost all mass keeps its previous parameters
        nk_safe = np.where(nk > 0, nk, 1.0)
        new_means = np.where(nk > 0, np.einsum("gnj,gn->gj", resp, x) / nk_safe, means)
        diff = x[:, :, None] - new_means[:, None, :]
        new_vars = np.where(nk > 0, (resp * diff * diff).sum(axis=1) / nk_safe, variances)
        new_vars = np.maximum(new_vars, variance_floor)
        new_w = np.clip(nk / n[:, None], 1e-300, None)
        new_w = new_w / new_w.sum(axis=1, keepdims=True)
        new_resp, new_ll = _e_step(x, mask, new_w, new_means, new_vars)

        a = active
        means[a], variances[a], weights[a] = new_means[a], new_vars[a], new_w[a]
        resp[a] = new_resp[a]
        gain = new_ll - ll
        for r in np.flatnonzero(a):
            traces[r].append(float(new_ll[r]))
        ll = np.where(a, new_ll, ll)
        iters[a] = it
        done = a & (gain < tol)
        converged |= done
        active = a & ~done
        if not active.any():
            break

    for r, i in enumerate(live):
        m = sets[i].size
        order = np.argsort(means[r], kind="stable")
        fits[i] = GmmFit(
            weights[r][order], means[r][order], variances[r][order], resp[r, :m][:, order],
            float(ll[r]), bool(converged[r]), degenerate=bool(means[r, 0] == means[r, 1]),
            n_iter=int(iters[r]), ll_trace=tuple(traces[r]),
        )
    return fits


def fit_gmm(
    values,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    variance_floor: float = VARIANCE_FLOOR,
) -> GmmFit:
    """Fit two Gaussians to ``values``.

    Initialization is deterministic (25th/75th percentiles as means, or the
    extremes when those quartiles coincide; pooled variance; equal weights),
    so ``seed`` is accepted for interface
    compatibility only. Iteration stops once the log-likelihood gain drops
    below ``tol``. A set with no spread yields a degenerate fit with equal means.
    """
    return fit_gmm_many([values], max_iters, tol, variance_floor)[0]


def split_by_component(fit: GmmFit, values=None) -> tuple[np.ndarray, np.ndarray]:
    """Indices assigned to the low-mean and high-mean components.

    A point goes low only if its low-component responsibility is strictly
    above 0.5; ties and degenerate fits go high.
    """
    n = fit.responsibilities.shape[0]
    if values is not None and len(values) != n:
        raise ValueError("values do not match the fitted responsibilities")
    if fit.degenerate:
        return np.empty(0, dtype=int), np.arange(n)
    low_mask = fit.responsibilities[:, 0] > 0.5
    return np.flatnonzero(low_mask), np.flatnonzero(~low_mask)
