"""Sparse recovery solvers: greedy pursuits and coordinate-descent lasso.

All solvers operate on real feature vectors; complex spectra are handled
upstream by stacking real and imaginary parts into one vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SolverConfig",
    "Dictionary",
    "SparseCode",
    "soft_threshold",
    "matching_pursuit",
    "omp",
    "jomp",
    "lasso",
    "lasso_batch",
    "sparse_code_latent",
    "sparse_code_latent_batch",
]


def soft_threshold(values, limit):
    """Elementwise soft shrinkage toward zero."""
    return np.sign(values) * np.maximum(np.abs(values) - limit, 0.0)


@dataclass
class SolverConfig:
    """Knobs shared by the pursuit and coordinate-descent solvers.

    lambda1/lambda2 follow the elastic-net convention.  k_max bounds the
    number of greedy selections in the pursuit solvers.  confidence_cap
    bounds the inverse residuals reported by :func:`jomp` so that an exact
    reconstruction still yields a finite confidence.
    """

    lambda1: float = 0.1
    lambda2: float = 0.0
    max_iter: int = 10_000
    tol: float = 1e-8
    k_max: int = 1
    confidence_cap: float = 1e6

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("penalty weights must be nonnegative")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1 or self.k_max < 1:
            raise ValueError("max_iter and k_max must be at least 1")
        if self.confidence_cap <= 0:
            raise ValueError("confidence_cap must be positive")


@dataclass
class Dictionary:
    """Atom matrix partitioned into target and background columns.

    ``atoms`` has shape (dim, n_atoms) with the ``n_target`` target columns
    first, followed by ``n_background`` background columns.  Every atom must
    lie on or inside the unit ball.
    """

    atoms: np.ndarray
    n_target: int
    n_background: int

    def __post_init__(self):
        self.atoms = np.array(self.atoms, dtype=float)
        if self.atoms.ndim != 2:
            raise ValueError("atoms must be a 2-d array of column atoms")
        if self.n_target < 0:
            raise ValueError("n_target must be nonnegative")
        if self.n_background < 1:
            raise ValueError("at least one background atom is required")
        if self.n_target + self.n_background != self.atoms.shape[1]:
            raise ValueError("n_target + n_background must equal the atom count")
        norms = np.linalg.norm(self.atoms, axis=0)
        if np.any(norms > 1.0 + 1e-9):
            raise ValueError("atoms must lie on or inside the unit ball")

    @property
    def dim(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]

    @property
    def target_atoms(self) -> np.ndarray:
        return self.atoms[:, : self.n_target]

    @property
    def background_atoms(self) -> np.ndarray:
        return self.atoms[:, self.n_target :]

    @property
    def background_indices(self) -> np.ndarray:
        return np.arange(self.n_target, self.n_atoms)


@dataclass
class SparseCode:
    """Solver output: one weight per atom plus a convergence flag."""

    weights: np.ndarray
    converged: bool = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.weights)


def _check_dim(x, dictionary):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != dictionary.dim:
        raise ValueError(
            f"signal dimension {x.shape[0]} does not match atoms of dimension {dictionary.dim}"
        )
    return x


def matching_pursuit(x, dictionary: Dictionary, cfg: SolverConfig) -> SparseCode:
    """Greedy residual pursuit without refitting.

    Each iteration selects the atom with the largest normalized inner
    product against the current residual and subtracts its projection.
    Stops once the residual norm drops below ``cfg.tol`` or after
    ``cfg.k_max`` selections.
    """
    x = _check_dim(x, dictionary)
    atoms = dictionary.atoms
    norms = np.linalg.norm(atoms, axis=0)
    usable = norms > 0
    weights = np.zeros(dictionary.n_atoms)
    residual = x.copy()
    for _ in range(cfg.k_max):
        if np.linalg.norm(residual) <= cfg.tol or not usable.any():
            break
        scores = np.where(usable, np.abs(atoms.T @ residual) / np.where(usable, norms, 1.0), -np.inf)
        k = int(np.argmax(scores))
        coef = (atoms[:, k] @ residual) / norms[k] ** 2
        weights[k] += coef
        residual = residual - coef * atoms[:, k]
    return SparseCode(weights)


def omp(x, dictionary: Dictionary, cfg: SolverConfig) -> SparseCode:
    """Greedy pursuit with a least-squares refit over the active set.

    The refit makes the residual orthogonal to every selected atom.  A
    rank-deficient active set drops the newest atom and stops early.
    """
    x = _check_dim(x, dictionary)
    atoms = dictionary.atoms
    norms = np.linalg.norm(atoms, axis=0)
    usable = norms > 0
    active: list[int] = []
    weights = np.zeros(dictionary.n_atoms)
    residual = x.copy()
    while len(active) < cfg.k_max:
        if np.linalg.norm(residual) <= cfg.tol or not usable.any():
            break
        scores = np.where(usable, np.abs(atoms.T @ residual) / np.where(usable, norms, 1.0), -np.inf)
        k = int(np.argmax(scores))
        if k in active:
            break
        active.append(k)
        sub = atoms[:, active]
        coef, _, rank, _ = np.linalg.lstsq(sub, x, rcond=None)
        if rank < len(active):
            active.pop()
            if not active:
                return SparseCode(np.zeros(dictionary.n_atoms))
            sub = atoms[:, active]
            coef, _, _, _ = np.linalg.lstsq(sub, x, rcond=None)
            weights = np.zeros(dictionary.n_atoms)
            weights[active] = coef
            return SparseCode(weights)
        weights = np.zeros(dictionary.n_atoms)
        weights[active] = coef
        residual = x - sub @ coef
    return SparseCode(weights)


def _capped_inverse(value, cap):
    if value <= 1.0 / cap:
        return cap
    return 1.0 / value


def jomp(x_a, x_b, dictionary: Dictionary, cfg: SolverConfig):
    """Joint pursuit of two signals sharing one greedy atom sequence.

    At each step the single atom that minimizes the summed squared
    residuals of both signals (after per-signal least-squares refits on
    the shared active set) is added.  Returns the two codes and a
    confidence equal to the mean of the capped inverse residual norms.
    """
    x_a = _check_dim(x_a, dictionary)
    x_b = _check_dim(x_b, dictionary)
    atoms = dictionary.atoms
    if dictionary.n_atoms == 0:
        raise ValueError("dictionary is empty")
    active: list[int] = []
    coef_a = np.zeros(0)
    coef_b = np.zeros(0)
    for _ in range(cfg.k_max):
        if not active:
            # one-atom refits have a closed form: rss = |x|^2 - <x, d>^2 / |d|^2
            sq = np.einsum("ij,ij->j", atoms, atoms)
            ok = sq > 0
            proj_a = np.where(ok, (atoms.T @ x_a) ** 2 / np.where(ok, sq, 1.0), 0.0)
            proj_b = np.where(ok, (atoms.T @ x_b) ** 2 / np.where(ok, sq, 1.0), 0.0)
            joint = np.where(ok, -(proj_a + proj_b), np.inf)
            k = int(np.argmin(joint))
            active.append(k)
            sub = atoms[:, active]
            coef_a, _, _, _ = np.linalg.lstsq(sub, x_a, rcond=None)
            coef_b, _, _, _ = np.linalg.lstsq(sub, x_b, rcond=None)
        else:
            best = None
            for k in range(dictionary.n_atoms):
                if k in active:
                    continue
                cand = active + [k]
                sub = atoms[:, cand]
                ca, _, _, _ = np.linalg.lstsq(sub, x_a, rcond=None)
                cb, _, _, _ = np.linalg.lstsq(sub, x_b, rcond=None)
                rss = (
                    np.sum((x_a - sub @ ca) ** 2)
                    + np.sum((x_b - sub @ cb) ** 2)
                )
                if best is None or rss < best[0]:
                    best = (rss, k, ca, cb)
            if best is None:
                break
            _, k, coef_a, coef_b = best
            active.append(k)
        res_a = np.linalg.norm(x_a - atoms[:, active] @ coef_a)
        res_b = np.linalg.norm(x_b - atoms[:, active] @ coef_b)
        if res_a <= cfg.tol and res_b <= cfg.tol:
            break
    weights_a = np.zeros(dictionary.n_atoms)
    weights_b = np.zeros(dictionary.n_atoms)
    weights_a[active] = coef_a
    weights_b[active] = coef_b
    res_a = np.linalg.norm(x_a - atoms @ weights_a)
    res_b = np.linalg.norm(x_b - atoms @ weights_b)
    confidence = 0.5 * (
        _capped_inverse(res_a, cfg.confidence_cap)
        + _capped_inverse(res_b, cfg.confidence_cap)
    )
    return SparseCode(weights_a), SparseCode(weights_b), confidence


def _cd_batch(X, atoms, lambda1, lambda2, max_iter, tol, columns):
    """Cyclic coordinate descent over a batch of signals.

    X is (n, dim); returns (n, n_atoms) weights and a convergence flag.
    Only the listed columns are updated; all others stay exactly zero.
    """
    n_atoms = atoms.shape[1]
    gram = atoms.T @ atoms
    corr = X @ atoms  # (n, n_atoms) inner products <x, d_k>
    weights = np.zeros((X.shape[0], n_atoms))
    # running <d_k, x - D a> for every signal and atom
    resid_corr = corr.copy()
    converged = False
    for _ in range(max_iter):
        max_change = 0.0
        for k in columns:
            gkk = gram[k, k]
            denom = gkk + lambda2
            if denom <= 0.0:
                continue
            rho = resid_corr[:, k] + gkk * weights[:, k]
            new_k = soft_threshold(rho, lambda1) / denom
            delta = new_k - weights[:, k]
            step = np.max(np.abs(delta)) if delta.size else 0.0
            if step > 0.0:
                resid_corr -= np.outer(delta, gram[k])
                weights[:, k] = new_k
            max_change = max(max_change, step)
        if max_change < tol:
            converged = True
            break
    return weights, converged


def lasso_batch(X, dictionary: Dictionary, cfg: SolverConfig, columns=None):
    """Coordinate-descent elastic net for a batch of signals at once."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != dictionary.dim:
        raise ValueError("signal dimension does not match dictionary")
    if columns is None:
        columns = range(dictionary.n_atoms)
    return _cd_batch(
        X, dictionary.atoms, cfg.lambda1, cfg.lambda2, cfg.max_iter, cfg.tol, list(columns)
    )


def lasso(x, dictionary: Dictionary, cfg: SolverConfig) -> SparseCode:
    """Solve 1/2|x - Da|^2 + lambda1 |a|_1 + lambda2/2 |a|_2^2 by coordinate descent."""
    if cfg.lambda1 <= 0:
        raise ValueError("lasso requires lambda1 > 0")
    x = _check_dim(x, dictionary)
    weights, converged = lasso_batch(x[None, :], dictionary, cfg)
    return SparseCode(weights[0], converged=converged)


def sparse_code_latent(x, dictionary: Dictionary, z: int, cfg: SolverConfig, lambda2: float = 0.0) -> SparseCode:
    """Sparse code under a latent target/background hypothesis.

    z=1 codes over the full dictionary; z=0 restricts to the background
    atoms with all target weights pinned at zero.  The ridge term defaults
    to zero here regardless of ``cfg.lambda2``.
    """
    if z not in (0, 1):
        raise ValueError("z must be 0 or 1")
    if cfg.lambda1 <= 0:
        raise ValueError("latent sparse coding requires lambda1 > 0")
    x = _check_dim(x, dictionary)
    weights, converged = sparse_code_latent_batch(x[None, :], dictionary, z, cfg, lambda2=lambda2)
    return SparseCode(weights[0], converged=converged)


def sparse_code_latent_batch(X, dictionary: Dictionary, z: int, cfg: SolverConfig, lambda2: float = 0.0):
    """Batch version of :func:`sparse_code_latent`; returns (n, K) weights."""
    if z not in (0, 1):
        raise ValueError("z must be 0 or 1")
    columns = None if z == 1 else dictionary.background_indices
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != dictionary.dim:
        raise ValueError("signal dimension does not match dictionary")
    return _cd_batch(
        X,
        dictionary.atoms,
        cfg.lambda1,
        lambda2,
        cfg.max_iter,
        cfg.tol,
        list(range(dictionary.n_atoms)) if columns is None else list(columns),
    )
