"""Fitting arbiter-chain weights to CRPs with CMA-ES (the modeling attack).

Every response bit is an independent 33-dimensional problem: minimize the
misclassification fraction of chain i over the training CRPs.  The chains
are stepped in lock-step so the linear algebra runs batched, but each has
its own random stream derived from (seed, chain index); fitting a chain
alone or inside a batch gives the same trajectory.

Scoring 14 candidates against 50k CRPs every generation is dominated by
memory traffic, so candidates are scored on an active set: the CRPs closest
to the current mean's decision boundary plus a random sample, refreshed every
few generations.  A candidate's fitness is

    (errors of the reference mean outside the active set
     + errors of the candidate inside it) / N,

which equals its full training error whenever it agrees with the reference
mean outside the active set.  Near convergence that is the common case,
because candidates can only disagree with the mean close to its boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cmaes
from .crp import CrpTable
from .encoding import EncodingError
from .puf import FEATURE_DIM, RESPONSE_BITS, Challenge, Response, features, threshold


@dataclass
class FitOptions:
    sigma0: float = 1.0
    near_samples: int = 500
    random_samples: int = 250
    refresh_every: int = 5
    patience: int = 60          # generations without exact-error improvement
    min_sigma: float = 1e-7


@dataclass
class ChainFit:
    chain_index: int
    weights: np.ndarray
    train_accuracy: float
    evaluations: int
    generations: int
    below_floor: bool = False


@dataclass
class PufModel:
    weights: np.ndarray                        # (L, 33), rows unit-norm
    train_accuracy: np.ndarray | None = None   # (L,)
    fits: list[ChainFit] = field(default_factory=list)

    @property
    def n_chains(self) -> int:
        return self.weights.shape[0]

    def dumps(self) -> str:
        lines = [f"#pufmodel v1 chains={self.weights.shape[0]} dim={self.weights.shape[1]}"]
        lines += [" ".join(f"{w:.17g}" for w in row) for row in self.weights]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> PufModel:
        lines = [ln for ln in text.splitlines() if ln.strip()]
        head = lines[0].split() if lines else []
        if len(head) != 4 or head[:2] != ["#pufmodel", "v1"]:
            raise EncodingError("bad model header")
        try:
            chains = int(head[2].removeprefix("chains="))
            dim = int(head[3].removeprefix("dim="))
            rows = [[float(v) for v in ln.split()] for ln in lines[1:]]
        except ValueError as exc:
            raise EncodingError(f"malformed model file: {exc}") from exc
        weights = np.array(rows, dtype=float).reshape(len(rows), -1) if rows else np.zeros((0, dim))
        if weights.shape != (chains, dim):
            raise EncodingError(f"model body has shape {weights.shape}, header says ({chains}, {dim})")
        return cls(weights)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> PufModel:
        return cls.loads(Path(path).read_text())


def predict_bits(weights: np.ndarray, feats: np.ndarray) -> np.ndarray:
    """(N, 33) features -> (N, L) predicted bits."""
    return threshold(np.atleast_2d(feats) @ weights.T)


def predict_response(model, challenge: Challenge) -> Response:
    weights = model.weights if isinstance(model, PufModel) else np.asarray(model, dtype=float)
    if weights.shape != (RESPONSE_BITS, FEATURE_DIM):
        raise ValueError(f"model must have shape ({RESPONSE_BITS}, {FEATURE_DIM}), got {weights.shape}")
    return Response.from_bits(predict_bits(weights, features(challenge.bits))[0])


def bit_accuracy(model, crps: CrpTable) -> np.ndarray:
    """Per-chain accuracy of a model on a CRP set."""
    weights = model.weights if isinstance(model, PufModel) else np.asarray(model)
    return (predict_bits(weights, crps.features()) == crps.responses[:, : weights.shape[0]]).mean(axis=0)


def fit_puf_chain(crps: CrpTable, chain_index: int, budget: int = 50_000, seed: int = 0,
                  accuracy_floor: float | None = None, options: FitOptions | None = None) -> ChainFit:
    if len(crps) == 0:
        raise ValueError("no training CRPs")
    if not 0 <= chain_index < crps.rlen:
        raise ValueError(f"chain_index must be in 0..{crps.rlen - 1}")
    return _fit_chains(crps, [chain_index], budget, seed, accuracy_floor, options or FitOptions())[0]


def fit_puf_model(crps: CrpTable, budget: int = 50_000, seed: int = 0, chains=None,
                  accuracy_floor: float | None = None, options: FitOptions | None = None) -> PufModel:
    """Fit every chain (or the listed ones) and assemble a model."""
    if len(crps) == 0:
        raise ValueError("no training CRPs")
    chains = list(range(crps.rlen)) if chains is None else list(chains)
    fits = _fit_chains(crps, chains, budget, seed, accuracy_floor, options or FitOptions())
    return PufModel(weights=np.stack([f.weights for f in fits]),
                    train_accuracy=np.array([f.train_accuracy for f in fits]), fits=fits)


def _fit_chains(crps: CrpTable, chains: list[int], budget: int, seed: int,
                accuracy_floor: float | None, opt: FitOptions) -> list[ChainFit]:
    X = crps.features()
    Y = crps.responses[:, chains].T.astype(bool)         # (B, N)
    B, N, n = len(chains), len(X), FEATURE_DIM
    p = cmaes.StrategyParams.default(n)
    rngs = [np.random.default_rng([seed, c]) for c in chains]
    k_near = min(opt.near_samples, N)
    k_rand = min(opt.random_samples, N - k_near)

    mean = np.zeros((B, n))
    sigma = np.full(B, opt.sigma0)
    cov = np.tile(np.eye(n), (B, 1, 1))
    ps = np.zeros((B, n))
    pc = np.zeros((B, n))
    best_w = mean.copy()
    best_err = np.full(B, N + 1)
    last_improved = np.zeros(B, dtype=int)
    gens = np.zeros(B, dtype=int)
    active = np.ones(B, dtype=bool)

    XA = YA = eout = basis = sqrt_vals = None
    act_idx = np.arange(B)
    g = 0
    while active.any():
        g += 1
        if (g - 1) % opt.refresh_every == 0:
            act_idx = np.flatnonzero(active)
            margins = mean[act_idx] @ X.T                                   # (b, N)
            errs = np.count_nonzero((margins >= 0) != Y[act_idx], axis=1)
            improved = errs < best_err[act_idx]
            upd = act_idx[improved]
            best_err[upd] = errs[improved]
            best_w[upd] = mean[upd]
            last_improved[upd] = gens[upd]
            done = ((best_err[act_idx] == 0)
                    | (gens[act_idx] - last_improved[act_idx] >= opt.patience)
                    | ((gens[act_idx] + 1) * p.lam > budget)
                    | (sigma[act_idx] < opt.min_sigma))
            if g > 1 and done.any():
                active[act_idx[done]] = False
                keep = ~done
                act_idx, margins = act_idx[keep], margins[keep]
                if act_idx.size == 0:
                    break
            near = np.argpartition(np.abs(margins), k_near - 1, axis=1)[:, :k_near] if k_near < N \
                else np.tile(np.arange(N), (act_idx.size, 1))
            idx = np.empty((act_idx.size, k_near + k_rand), dtype=np.intp)
            mask = np.ones((act_idx.size, N), dtype=bool)
            for row, b in enumerate(act_idx):
                mask[row, near[row]] = False
                idx[row, :k_near] = near[row]
                if k_rand:
                    rest = np.flatnonzero(mask[row])
                    pick = rest[rngs[b].choice(rest.size, k_rand, replace=False)]
                    idx[row, k_near:] = pick
                    mask[row, pick] = False
            XA = X[idx]                                                    # (b, K, n)
            YA = np.take_along_axis(Y[act_idx], idx, axis=1)               # (b, K)
            eout = np.count_nonzero(((margins >= 0) != Y[act_idx]) & mask, axis=1)
            # Lazy eigendecomposition: c1 + cmu is ~0.005 at n = 33, so the
            # covariance barely moves between refreshes.
            basis, sqrt_vals = cmaes.eigen(cov[act_idx])

        z = np.stack([rngs[b].standard_normal((p.lam, n)) for b in act_idx])
        x, y = cmaes.sample(mean[act_idx], sigma[act_idx], basis, sqrt_vals, z)
        inside = np.count_nonzero((XA @ np.swapaxes(x, 1, 2) >= 0) != YA[:, :, None], axis=1)
        fit = (eout[:, None] + inside) / N                                 # (b, lam)
        order = np.argsort(fit, axis=1, kind="stable")
        y_sorted = np.take_along_axis(y, order[:, :, None], axis=1)
        gens[act_idx] += 1
        m, s, c, a, b_ = cmaes.update(p, mean[act_idx], sigma[act_idx], cov[act_idx], ps[act_idx],
                                      pc[act_idx], gens[act_idx], basis, sqrt_vals, y_sorted)
        mean[act_idx], sigma[act_idx], cov[act_idx], ps[act_idx], pc[act_idx] = m, s, c, a, b_

    out = []
    for row, chain in enumerate(chains):
        w = best_w[row]
        norm = np.linalg.norm(w)
        w = w / norm if norm > 0 else w
        acc = 1.0 - best_err[row] / N
        out.append(ChainFit(chain_index=chain, weights=w, train_accuracy=float(acc),
                            evaluations=int(gens[row] * p.lam), generations=int(gens[row]),
                            below_floor=accuracy_floor is not None and acc < accuracy_floor))
    return out
