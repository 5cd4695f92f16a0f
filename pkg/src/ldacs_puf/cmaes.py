"""(mu/mu_w, lambda) CMA-ES with rank-one + rank-mu covariance update and
cumulative step-size adaptation.

Strategy constants follow the defaults of Hansen's CMA-ES tutorial.  The
sampling and update kernels accept arrays with arbitrary leading batch
dimensions, so the same code drives a single optimization (`cma_step`) and
many independent lock-stepped ones (see `modeling`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np


class OptimizationAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class StrategyParams:
    n: int
    lam: int
    mu: int
    weights: np.ndarray
    mueff: float
    cc: float
    cs: float
    c1: float
    cmu: float
    damps: float
    chi_n: float

    @classmethod
    def default(cls, n: int, lam: int | None = None) -> StrategyParams:
        if n < 1:
            raise ValueError("dimension must be >= 1")
        lam = lam or 4 + int(math.floor(3 * math.log(n)))
        mu = lam // 2
        raw = math.log(lam / 2 + 0.5) - np.log(np.arange(1, mu + 1))
        weights = raw / raw.sum()
        mueff = 1.0 / float(np.sum(weights ** 2))
        cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
        cs = (mueff + 2) / (n + mueff + 5)
        c1 = 2 / ((n + 1.3) ** 2 + mueff)
        cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
        damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + cs
        chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
        return cls(n, lam, mu, weights, mueff, cc, cs, c1, cmu, damps, chi_n)


@dataclass(frozen=True, eq=False)
class CmaEsState:
    mean: np.ndarray
    sigma: float
    cov: np.ndarray
    path_sigma: np.ndarray
    path_cov: np.ndarray
    generation: int
    params: StrategyParams
    rng: np.random.Generator
    best_x: np.ndarray | None = None
    best_f: float = math.inf
    evaluations: int = 0

    @property
    def lam(self) -> int:
        return self.params.lam

    @property
    def mu(self) -> int:
        return self.params.mu

    @property
    def weights(self) -> np.ndarray:
        return self.params.weights


def eigen(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenbasis and sqrt-eigenvalues of a (batch of) covariance matrices."""
    vals, basis = np.linalg.eigh(cov)
    return basis, np.sqrt(np.maximum(vals, 1e-300))


def sample(mean, sigma, basis, sqrt_vals, z):
    """Candidates x = m + sigma * B D z.  z has shape (..., lam, n)."""
    y = z @ np.swapaxes(basis * sqrt_vals[..., None, :], -1, -2)
    sigma = np.asarray(sigma)
    return mean[..., None, :] + sigma[..., None, None] * y, y


def update(p: StrategyParams, mean, sigma, cov, ps, pc, generation, basis, sqrt_vals, y_sorted):
    """One distribution update from steps y sorted best-first.

    `generation` is the 1-based index of the generation just evaluated.
    Returns (mean, sigma, cov, path_sigma, path_cov).
    """
    sigma = np.asarray(sigma, dtype=float)
    ysel = y_sorted[..., : p.mu, :]
    yw = np.einsum("k,...kn->...n", p.weights, ysel)
    mean = mean + sigma[..., None] * yw

    inv_sqrt = (basis / sqrt_vals[..., None, :]) @ np.swapaxes(basis, -1, -2)
    ps = (1 - p.cs) * ps + math.sqrt(p.cs * (2 - p.cs) * p.mueff) * np.einsum("...ij,...j->...i", inv_sqrt, yw)
    ps_norm = np.linalg.norm(ps, axis=-1)
    gen = np.asarray(generation, dtype=float)
    hsig = (ps_norm / np.sqrt(1 - (1 - p.cs) ** (2 * gen)) / p.chi_n
            < 1.4 + 2 / (p.n + 1)).astype(float)
    pc = (1 - p.cc) * pc + hsig[..., None] * math.sqrt(p.cc * (2 - p.cc) * p.mueff) * yw

    rank_one = pc[..., :, None] * pc[..., None, :]
    rank_mu = np.swapaxes(ysel * p.weights[:, None], -1, -2) @ ysel
    correction = ((1 - hsig) * p.cc * (2 - p.cc))[..., None, None]
    cov = (1 - p.c1 - p.cmu) * cov + p.c1 * (rank_one + correction * cov) + p.cmu * rank_mu
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))

    sigma = sigma * np.exp((p.cs / p.damps) * (ps_norm / p.chi_n - 1))
    return mean, sigma, cov, ps, pc


def cma_init(n: int, mean0, sigma0: float, seed: int, popsize: int | None = None) -> CmaEsState:
    mean0 = np.asarray(mean0, dtype=float)
    if n < 1 or mean0.shape != (n,):
        raise ValueError(f"mean0 must have shape ({n},)")
    if not sigma0 > 0:
        raise ValueError("sigma0 must be > 0")
    params = StrategyParams.default(n, popsize)
    return CmaEsState(mean=mean0.copy(), sigma=float(sigma0), cov=np.eye(n),
                      path_sigma=np.zeros(n), path_cov=np.zeros(n), generation=0,
                      params=params, rng=np.random.default_rng(seed))


def cma_step(state: CmaEsState, f: Callable[[np.ndarray], float]) -> CmaEsState:
    """Sample lambda candidates, rank them under f and update the distribution.

    The returned state owns a fresh generator copy, so the input state can be
    stepped again to reproduce the same generation.
    """
    p = state.params
    rng = _copy_rng(state.rng)
    basis, sqrt_vals = eigen(state.cov)
    x, y = sample(state.mean, state.sigma, basis, sqrt_vals, rng.standard_normal((p.lam, p.n)))
    fvals = np.array([float(f(xi)) for xi in x])
    if not np.all(np.isfinite(fvals)):
        bad = int(np.flatnonzero(~np.isfinite(fvals))[0])
        raise OptimizationAborted(
            f"non-finite fitness {fvals[bad]} at generation {state.generation + 1} for candidate {x[bad].tolist()}")
    order = np.argsort(fvals, kind="stable")
    gen = state.generation + 1
    mean, sigma, cov, ps, pc = update(p, state.mean, state.sigma, state.cov, state.path_sigma,
                                      state.path_cov, gen, basis, sqrt_vals, y[order])
    best_x, best_f = state.best_x, state.best_f
    if fvals[order[0]] < best_f:
        best_x, best_f = x[order[0]].copy(), float(fvals[order[0]])
    return replace(state, mean=mean, sigma=float(sigma), cov=cov, path_sigma=ps, path_cov=pc,
                   generation=gen, rng=rng, best_x=best_x, best_f=best_f,
                   evaluations=state.evaluations + p.lam)


def cma_minimize(f, mean0, sigma0: float, seed: int, max_generations: int,
                 ftarget: float = -math.inf, callback=None) -> CmaEsState:
    state = cma_init(len(mean0), mean0, sigma0, seed)
    for _ in range(max_generations):
        state = cma_step(state, f)
        if callback is not None:
            callback(state)
        if state.best_f <= ftarget:
            break
    return state


def _copy_rng(rng: np.random.Generator) -> np.random.Generator:
    clone = np.random.Generator(type(rng.bit_generator)())
    clone.bit_generator.state = rng.bit_generator.state
    return clone


def sphere(x) -> float:
    return float(np.dot(x, x))


def rosenbrock(x) -> float:
    x = np.asarray(x)
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1 - x[:-1]) ** 2))
