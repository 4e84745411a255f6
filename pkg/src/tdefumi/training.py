"""Latent-variable dictionary/classifier training on weakly labeled bags.

Points come grouped into positively and negatively labeled bags.  A latent
flag per point says whether it truly contains target response; its posterior
is refreshed once per epoch from how well the background atoms alone explain
the point.  Between refreshes, stochastic gradient steps update the atom
matrix and a linear read-out jointly, differentiating through the sparse
coding layer on its active set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dsrf import FrequencyGrid, default_frequency_grid, default_zeta_grid, dsrf_atom, stack_complex
from .solvers import (
    Dictionary,
    SolverConfig,
    lasso_batch,
    sparse_code_latent,
    sparse_code_latent_batch,
)

__all__ = [
    "LatentPosterior",
    "Bag",
    "TrainConfig",
    "EfumiDiagnosticConfig",
    "DataStats",
    "Classifier",
    "Model",
    "TrainingDivergedError",
    "latent_posterior",
    "posterior_matrix",
    "delta_n",
    "delta_vector",
    "expected_point_loss",
    "objective",
    "efumi_objective",
    "gradients",
    "extract_supports",
    "codes_from_supports",
    "project_unit_ball",
    "train",
    "classify",
    "classify_points",
    "classify_alarm",
]


class TrainingDivergedError(RuntimeError):
    """Raised when the training objective stops being finite."""


@dataclass(frozen=True)
class LatentPosterior:
    """Per-point probabilities that the latent target flag is 0 or 1."""

    p0: float
    p1: float

    def __post_init__(self):
        if not (0.0 <= self.p0 <= 1.0 and 0.0 <= self.p1 <= 1.0):
            raise ValueError("posterior probabilities must lie in [0, 1]")
        if self.p0 + self.p1 != 1.0:
            raise ValueError("posterior must sum to one exactly")


@dataclass
class Bag:
    """A labeled group of feature vectors; the unit of weak supervision."""

    bag_id: str
    label: str
    points: np.ndarray
    lane_id: str | None = None
    position_m: float | None = None

    def __post_init__(self):
        if self.label not in ("positive", "negative"):
            raise ValueError("bag label must be 'positive' or 'negative'")
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[0] == 0:
            raise ValueError("bags must contain at least one point")

    @property
    def is_positive(self) -> bool:
        return self.label == "positive"


@dataclass
class TrainConfig:
    """Training hyperparameters; every value is echoed into the saved model.

    mean_reg trades reconstruction against pulling atoms toward the data
    mean, classifier_ridge penalizes the read-out weights, smooth_reg
    penalizes first differences along each atom (within the real and
    imaginary halves separately), sparse_penalty is the coding l1 weight,
    posterior_scale converts background residuals into latent posteriors,
    and balance_scale reweights positive-bag points by the class ratio.
    """

    n_target_atoms: int = 2
    n_background_atoms: int = 8
    mean_reg: float = 0.05
    classifier_ridge: float = 1e-3
    smooth_reg: float = 1e-2
    sparse_penalty: float = 0.1
    posterior_scale: float = 5.0
    balance_scale: float = 1.0
    batch_size: int = 32
    n_epochs: int = 100
    learning_rate: float = 0.5
    lr_decay_steps: int | None = None
    grad_ridge: float = 1e-4
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mean_reg < 1.0:
            raise ValueError("mean_reg must lie in [0, 1)")
        if self.classifier_ridge <= 0:
            raise ValueError("classifier_ridge must be positive")
        if self.smooth_reg < 0:
            raise ValueError("smooth_reg must be nonnegative")
        if self.sparse_penalty <= 0:
            raise ValueError("sparse_penalty must be positive")
        if self.posterior_scale <= 0:
            raise ValueError("posterior_scale must be positive")
        if self.balance_scale <= 0:
            raise ValueError("balance_scale must be positive")
        if self.n_target_atoms < 1 or self.n_background_atoms < 1:
            raise ValueError("atom counts must be at least 1")
        if self.batch_size < 1 or self.n_epochs < 0:
            raise ValueError("batch_size must be >= 1 and n_epochs >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.lr_decay_steps is not None and self.lr_decay_steps <= 0:
            raise ValueError("lr_decay_steps must be positive when set")
        if self.grad_ridge < 0 or self.tol <= 0:
            raise ValueError("grad_ridge must be >= 0 and tol > 0")

    def solver_config(self) -> SolverConfig:
        return SolverConfig(lambda1=self.sparse_penalty, lambda2=0.0)


@dataclass
class EfumiDiagnosticConfig:
    """Weights for the reconstruction-driven diagnostic objective."""

    gammas: np.ndarray
    mean_reg: float = 0.05
    posterior_scale: float = 5.0

    def __post_init__(self):
        self.gammas = np.asarray(self.gammas, dtype=float).reshape(-1)
        if np.any(self.gammas < 0):
            raise ValueError("gammas must be nonnegative")


@dataclass
class DataStats:
    """Global data mean and point counts by bag label."""

    mu0: np.ndarray
    n_target_points: int
    n_background_points: int

    def __post_init__(self):
        self.mu0 = np.asarray(self.mu0, dtype=float).reshape(-1)
        if self.n_target_points < 0 or self.n_background_points < 0:
            raise ValueError("point counts must be nonnegative")


@dataclass
class Classifier:
    """Linear read-out on sparse codes: score = weights . code + bias."""

    weights: np.ndarray
    bias: float

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.weights)) or not np.isfinite(self.bias):
            raise ValueError("classifier parameters must be finite")

    def score(self, codes) -> np.ndarray:
        return np.atleast_2d(codes) @ self.weights + self.bias


@dataclass
class Model:
    """A trained detector: dictionary, read-out, and provenance."""

    dictionary: Dictionary
    classifier: Classifier
    config: TrainConfig
    stats: DataStats
    grid: FrequencyGrid
    objective_log: list = field(default_factory=list)


def _flatten_bags(bags):
    points = np.vstack([b.points for b in bags])
    flags = np.concatenate([np.full(b.points.shape[0], b.is_positive) for b in bags])
    return points, flags


def latent_posterior(x, dictionary: Dictionary, cfg: TrainConfig, bag_label: str) -> LatentPosterior:
    """Posterior of the latent target flag for one point.

    Points in negative bags are background by definition.  Otherwise the
    point is coded with background atoms only, and the probability of
    background decays exponentially in the squared reconstruction error.
    """
    if bag_label == "negative":
        return LatentPosterior(1.0, 0.0)
    if bag_label != "positive":
        raise ValueError("bag label must be 'positive' or 'negative'")
    code = sparse_code_latent(x, dictionary, 0, cfg.solver_config())
    residual = np.asarray(x, dtype=float) - dictionary.atoms @ code.weights
    p0 = float(np.exp(-cfg.posterior_scale * residual @ residual))
    return LatentPosterior(p0, 1.0 - p0)


def posterior_matrix(X, is_positive, dictionary: Dictionary, cfg: TrainConfig) -> np.ndarray:
    """(n, 2) array of [p0, p1] rows for a flattened point set."""
    X = np.atleast_2d(X)
    P = np.zeros((X.shape[0], 2))
    P[:, 0] = 1.0
    pos = np.asarray(is_positive, dtype=bool)
    if pos.any():
        codes, _ = sparse_code_latent_batch(X[pos], dictionary, 0, cfg.solver_config())
        resid = X[pos] - codes @ dictionary.atoms.T
        p0 = np.exp(-cfg.posterior_scale * np.einsum("ij,ij->i", resid, resid))
        P[pos, 0] = p0
        P[pos, 1] = 1.0 - p0
    return P


def delta_n(is_target_point: bool, stats: DataStats, epsilon: float) -> float:
    """Loss weight balancing positive-bag points against background points."""
    if not is_target_point:
        return 1.0
    if stats.n_target_points <= 0:
        raise ValueError("no positive-bag points recorded in stats")
    return epsilon * stats.n_background_points / stats.n_target_points


def delta_vector(is_positive, stats: DataStats, epsilon: float) -> np.ndarray:
    flags = np.asarray(is_positive, dtype=bool)
    out = np.ones(flags.shape[0])
    if flags.any():
        out[flags] = delta_n(True, stats, epsilon)
    return out


def _solve_support(atoms, x, support, signs, lambda1, ridge):
    """Sparse-code coefficients on a frozen support/sign pattern.

    Solves the stationarity system of the l1 problem restricted to the
    support, with a small ridge keeping the Gram matrix invertible.  This
    is the smooth map the dictionary gradient differentiates through.
    """
    sub = atoms[:, support]
    gram = sub.T @ sub + ridge * np.eye(support.size)
    rhs = sub.T @ x - lambda1 * signs
    return np.linalg.solve(gram, rhs), sub, gram


def extract_supports(codes0, codes1, is_positive):
    """Per-point (support, signs) pairs for both latent hypotheses."""
    supports = []
    for i in range(codes0.shape[0]):
        s0 = np.flatnonzero(codes0[i])
        entry = [s0, np.sign(codes0[i][s0])]
        if is_positive[i]:
            s1 = np.flatnonzero(codes1[i])
            entry += [s1, np.sign(codes1[i][s1])]
        else:
            entry += [None, None]
        supports.append(tuple(entry))
    return supports


def codes_from_supports(X, dictionary: Dictionary, supports, cfg: TrainConfig):
    """Re-solve codes on frozen supports through the stabilized system."""
    X = np.atleast_2d(X)
    K = dictionary.n_atoms
    codes0 = np.zeros((X.shape[0], K))
    codes1 = np.zeros((X.shape[0], K))
    for i, (s0, g0, s1, g1) in enumerate(supports):
        if s0.size:
            coef, _, _ = _solve_support(
                dictionary.atoms, X[i], s0, g0, cfg.sparse_penalty, cfg.grad_ridge
            )
            codes0[i, s0] = coef
        if s1 is not None and s1.size:
            coef, _, _ = _solve_support(
                dictionary.atoms, X[i], s1, g1, cfg.sparse_penalty, cfg.grad_ridge
            )
            codes1[i, s1] = coef
    return codes0, codes1


def _fresh_codes(X, is_positive, dictionary, cfg):
    solver = cfg.solver_config()
    codes0, _ = sparse_code_latent_batch(X, dictionary, 0, solver)
    codes1 = np.zeros_like(codes0)
    pos = np.asarray(is_positive, dtype=bool)
    if pos.any():
        codes1[pos], _ = sparse_code_latent_batch(X[pos], dictionary, 1, solver)
    return codes0, codes1


def expected_point_loss(x, dictionary, classifier, posterior: LatentPosterior, delta, cfg) -> float:
    """Posterior-weighted squared classification error of one point.

    Averages the squared error of scoring the point 0 under the background
    hypothesis and 1 under the target hypothesis, each scored with its own
    latent-restricted sparse code.  Regularizers are dataset-level and
    excluded here.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    scale = (1.0 - cfg.mean_reg) * delta / 2.0
    total = 0.0
    if posterior.p0 > 0.0:
        code0 = sparse_code_latent(x, dictionary, 0, cfg.solver_config())
        f0 = float(classifier.weights @ code0.weights + classifier.bias)
        total += posterior.p0 * (0.0 - f0) ** 2
    if posterior.p1 > 0.0:
        code1 = sparse_code_latent(x, dictionary, 1, cfg.solver_config())
        f1 = float(classifier.weights @ code1.weights + classifier.bias)
        total += posterior.p1 * (1.0 - f1) ** 2
    return scale * total


def _block_diff_energy(atoms):
    half = atoms.shape[0] // 2
    d_re = np.diff(atoms[:half], axis=0)
    d_im = np.diff(atoms[half:], axis=0)
    return float(np.sum(d_re**2) + np.sum(d_im**2))


def _block_diff_grad(atoms, weight):
    half = atoms.shape[0] // 2
    grad = np.zeros_like(atoms)
    for blk in (slice(0, half), slice(half, atoms.shape[0])):
        diffs = np.diff(atoms[blk], axis=0)
        g = np.zeros((half, atoms.shape[1]))
        g[:-1] -= diffs
        g[1:] += diffs
        grad[blk] = weight * g
    return grad


def _regularizer_value(dictionary, classifier, cfg, stats):
    atoms = dictionary.atoms
    mean_term = 0.5 * cfg.mean_reg * float(np.sum((atoms - stats.mu0[:, None]) ** 2))
    ridge_term = 0.5 * cfg.classifier_ridge * float(classifier.weights @ classifier.weights)
    smooth_term = 0.5 * cfg.smooth_reg * _block_diff_energy(atoms)
    return mean_term + ridge_term + smooth_term


def objective(bags, dictionary, classifier, cfg, stats, posteriors=None, supports=None) -> float:
    """Full training objective over a bag collection.

    Posterior weights default to a fresh E-step against the current atoms.
    When ``supports`` is given, sparse codes are re-solved on those frozen
    supports (the smooth surrogate the gradients differentiate), otherwise
    they come from fresh latent sparse coding.
    """
    X, is_positive = _flatten_bags(bags)
    if X.shape[1] % 2 != 0:
        raise ValueError("feature dimension must be even (stacked complex data)")
    if posteriors is None:
        posteriors = posterior_matrix(X, is_positive, dictionary, cfg)
    if supports is None:
        codes0, codes1 = _fresh_codes(X, is_positive, dictionary, cfg)
    else:
        codes0, codes1 = codes_from_supports(X, dictionary, supports, cfg)
    deltas = delta_vector(is_positive, stats, cfg.balance_scale)
    f0 = codes0 @ classifier.weights + classifier.bias
    f1 = codes1 @ classifier.weights + classifier.bias
    point_terms = (
        0.5
        * (1.0 - cfg.mean_reg)
        * deltas
        * (posteriors[:, 0] * f0**2 + posteriors[:, 1] * (1.0 - f1) ** 2)
    )
    return float(np.sum(point_terms)) + _regularizer_value(dictionary, classifier, cfg, stats)


def efumi_objective(bags, dictionary, codes0, codes1, posteriors, diag: EfumiDiagnosticConfig, stats) -> float:
    """Expected reconstruction-driven objective, evaluated as a diagnostic.

    Probability-weighted reconstruction under both latent hypotheses, the
    mean-anchoring penalty, and a signed sparsity reward on background
    weights (expected under the posterior).  Larger is better; nothing is
    optimized here.
    """
    X, _ = _flatten_bags(bags)
    if diag.gammas.size != dictionary.n_background:
        raise ValueError("need one gamma per background atom")
    atoms = dictionary.atoms
    r0 = X - codes0 @ atoms.T
    r1 = X - codes1 @ atoms.T
    recon = np.sum(
        posteriors[:, 0] * np.einsum("ij,ij->i", r0, r0)
        + posteriors[:, 1] * np.einsum("ij,ij->i", r1, r1)
    )
    value = -0.5 * (1.0 - diag.mean_reg) * float(recon)
    value -= 0.5 * diag.mean_reg * float(np.sum((atoms - stats.mu0[:, None]) ** 2))
    bg = dictionary.background_indices
    expected_bg_weights = (
        posteriors[:, [0]] * codes0[:, bg] + posteriors[:, [1]] * codes1[:, bg]
    )
    value -= float(diag.gammas @ expected_bg_weights.sum(axis=0))
    return value


def _loss_gradient_pieces(X, is_positive, posteriors, codes0, codes1, dictionary, weights, bias, cfg, stats):
    """Gradient of the summed point losses, differentiating through the codes.

    Codes are re-solved on their supports with the stabilized system so the
    implicit dictionary gradient is exact for the returned loss surface.
    """
    atoms = dictionary.atoms
    grad_D = np.zeros_like(atoms)
    grad_w = np.zeros(atoms.shape[1])
    grad_psi = 0.0
    deltas = delta_vector(is_positive, stats, cfg.balance_scale)
    supports = extract_supports(codes0, codes1, is_positive)
    one_minus_u = 1.0 - cfg.mean_reg
    for i in range(X.shape[0]):
        x = X[i]
        s0, g0, s1, g1 = supports[i]
        for z_value, sup, sgn, prob in (
            (0.0, s0, g0, posteriors[i, 0]),
            (1.0, s1, g1, posteriors[i, 1]),
        ):
            if sup is None or prob == 0.0:
                continue
            weight = one_minus_u * deltas[i] * prob
            if sup.size == 0:
                err = bias - z_value
                grad_psi += weight * err
                continue
            coef, sub, gram = _solve_support(
                atoms, x, sup, sgn, cfg.sparse_penalty, cfg.grad_ridge
            )
            err = float(weights[sup] @ coef + bias - z_value)
            scaled = weight * err
            grad_w[sup] += scaled * coef
            grad_psi += scaled
            beta = np.linalg.solve(gram, scaled * weights[sup])
            resid = x - sub @ coef
            grad_D[:, sup] += np.outer(resid, beta) - np.outer(sub @ beta, coef)
    return grad_D, grad_w, grad_psi


def _reg_gradient_pieces(dictionary, weights, cfg, stats):
    atoms = dictionary.atoms
    grad_D = cfg.mean_reg * (atoms - stats.mu0[:, None])
    grad_D += _block_diff_grad(atoms, cfg.smooth_reg)
    grad_w = cfg.classifier_ridge * weights
    return grad_D, grad_w


def gradients(X, is_positive, posteriors, codes0, codes1, dictionary, classifier, cfg, stats):
    """Gradient of :func:`objective` over the given points at fixed supports.

    Returns (grad_atoms, grad_weights, grad_bias).  Matches central finite
    differences of ``objective(..., posteriors=..., supports=...)`` because
    both paths share the stabilized fixed-support coding map.
    """
    X = np.atleast_2d(X)
    loss_D, loss_w, loss_psi = _loss_gradient_pieces(
        X,
        is_positive,
        posteriors,
        codes0,
        codes1,
        dictionary,
        classifier.weights,
        classifier.bias,
        cfg,
        stats,
    )
    reg_D, reg_w = _reg_gradient_pieces(dictionary, classifier.weights, cfg, stats)
    return loss_D + reg_D, loss_w + reg_w, loss_psi


def _project_atoms(atoms):
    norms = np.linalg.norm(atoms, axis=0)
    over = norms > 1.0
    if np.any(over):
        atoms[:, over] /= norms[over]
    return atoms


def project_unit_ball(dictionary: Dictionary) -> Dictionary:
    """Rescale any atom outside the unit ball back onto it; others untouched."""
    atoms = dictionary.atoms.copy()
    _project_atoms(atoms)
    return Dictionary(atoms=atoms, n_target=dictionary.n_target, n_background=dictionary.n_background)


def _initial_atoms(X_neg, grid, cfg, rng):
    zetas = default_zeta_grid(grid, cfg.n_target_atoms)
    target = np.column_stack([stack_complex(dsrf_atom(grid, z)) for z in zetas])
    _project_atoms(target)
    n_neg = X_neg.shape[0]
    if n_neg == 0:
        raise ValueError("background atom initialization needs negative-bag points")
    picks = rng.choice(n_neg, size=cfg.n_background_atoms, replace=cfg.n_background_atoms > n_neg)
    background = X_neg[picks].T.copy()
    scale = 0.01 * np.linalg.norm(background, axis=0) / np.sqrt(background.shape[0])
    background += scale * rng.standard_normal(background.shape)
    _project_atoms(background)
    return np.hstack([target, background])


def _batches(order, batch_size):
    for start in range(0, order.size, batch_size):
        yield order[start : start + batch_size]


def train(bags, cfg: TrainConfig, grid: FrequencyGrid | None = None) -> Model:
    """Alternating posterior refresh and minibatch SGD; deterministic per seed.

    Every epoch recomputes the latent posteriors for positive-bag points,
    then sweeps shuffled minibatches, coding each point under both latent
    hypotheses and stepping the atoms, read-out weights, and bias with a
    1/(1 + t/t0) learning-rate decay.  Atoms are projected back onto the
    unit ball after every step.
    """
    bags = list(bags)
    if not any(b.is_positive for b in bags):
        raise ValueError("training requires at least one positive bag")
    if not any(not b.is_positive for b in bags):
        raise ValueError("training requires at least one negative bag")
    X, is_positive = _flatten_bags(bags)
    dims = {b.points.shape[1] for b in bags}
    if len(dims) != 1:
        raise ValueError("all bags must share one feature dimension")
    dim = dims.pop()
    if dim % 2 != 0:
        raise ValueError("feature dimension must be even (stacked complex data)")
    if grid is None:
        grid = default_frequency_grid(dim // 2)
    elif 2 * grid.n != dim:
        raise ValueError("frequency grid does not match the feature dimension")

    stats = DataStats(
        mu0=X.mean(axis=0),
        n_target_points=int(np.count_nonzero(is_positive)),
        n_background_points=int(np.count_nonzero(~is_positive)),
    )
    rng = np.random.default_rng(cfg.seed)
    atoms = _initial_atoms(X[~is_positive], grid, cfg, rng)
    dictionary = Dictionary(
        atoms=atoms, n_target=cfg.n_target_atoms, n_background=cfg.n_background_atoms
    )
    atoms = dictionary.atoms  # same buffer; updated in place below
    weights = np.zeros(dictionary.n_atoms)
    bias = 0.0

    n_points = X.shape[0]
    batches_per_epoch = max(1, math.ceil(n_points / cfg.batch_size))
    # default decay horizon: ten epochs' worth of steps keeps the step size
    # useful for the whole run instead of collapsing after the first epoch
    t0 = cfg.lr_decay_steps if cfg.lr_decay_steps is not None else 10 * batches_per_epoch
    log: list[float] = []
    step = 0
    for _ in range(cfg.n_epochs):
        posteriors = posterior_matrix(X, is_positive, dictionary, cfg)
        prev_atoms = atoms.copy()
        prev_weights = weights.copy()
        prev_bias = bias
        for idx in _batches(rng.permutation(n_points), cfg.batch_size):
            Xb = X[idx]
            flags = is_positive[idx]
            codes0, codes1 = _fresh_codes(Xb, flags, dictionary, cfg)
            loss_D, loss_w, loss_psi = _loss_gradient_pieces(
                Xb, flags, posteriors[idx], codes0, codes1, dictionary, weights, bias, cfg, stats
            )
            reg_D, reg_w = _reg_gradient_pieces(dictionary, weights, cfg, stats)
            rho = cfg.learning_rate / (1.0 + step / t0)
            inv_b = 1.0 / idx.size
            inv_n = 1.0 / n_points
            atoms -= rho * (inv_b * loss_D + inv_n * reg_D)
            weights -= rho * (inv_b * loss_w + inv_n * reg_w)
            bias -= rho * inv_b * loss_psi
            _project_atoms(atoms)
            step += 1
        clf = Classifier(weights=weights.copy(), bias=float(bias))
        value = objective(bags, dictionary, clf, cfg, stats)
        log.append(value)
        if not np.isfinite(value):
            raise TrainingDivergedError(
                f"objective became non-finite at epoch {len(log)}; "
                "reduce learning_rate or check the input scaling"
            )
        change = max(
            float(np.max(np.abs(atoms - prev_atoms))),
            float(np.max(np.abs(weights - prev_weights))),
            abs(bias - prev_bias),
        )
        if change < cfg.tol:
            break

    return Model(
        dictionary=Dictionary(
            atoms=atoms.copy(), n_target=cfg.n_target_atoms, n_background=cfg.n_background_atoms
        ),
        classifier=Classifier(weights=weights.copy(), bias=float(bias)),
        config=cfg,
        stats=stats,
        grid=grid,
        objective_log=log,
    )


def classify_points(X, model: Model) -> np.ndarray:
    """Score points with the trained model: code over the full dictionary, then read out."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.dictionary.dim:
        raise ValueError("point dimension does not match the model")
    codes, _ = lasso_batch(X, model.dictionary, model.config.solver_config())
    return codes @ model.classifier.weights + model.classifier.bias


def classify(x, model: Model) -> float:
    return float(classify_points(np.asarray(x, dtype=float)[None, :], model)[0])


def classify_alarm(points, model: Model, pooling: str = "max") -> float:
    """Pool per-point scores into one alarm confidence."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] == 0:
        raise ValueError("alarms must contain at least one point")
    scores = classify_points(points, model)
    if pooling == "max":
        return float(np.max(scores))
    if pooling == "mean":
        return float(np.mean(scores))
    raise ValueError("pooling must be 'max' or 'mean'")
