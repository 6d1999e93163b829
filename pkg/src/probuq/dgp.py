"""One-hidden-layer deep GP trained by a Metropolis / elliptical-slice Gibbs sampler.

Layer structure (inputs ``Z`` are standardized, outputs ``y`` standardized)::

    W^i ~ N(0, k_i(Z, Z))          i = 1..p, unit amplitude, length scales l_W^i
    y | W ~ N(0, k(W, W) + tau2 I)  outer SE-ARD kernel with (l, sigma2, tau2)

Every Gibbs sweep performs, in order: a joint MH move of
``(ln sigma2, ln tau2)``, a joint MH move of ``ln l``, one MH move of each
``ln l_W^i`` against its own latent column, and one elliptical slice
sampling update per latent column.

Prediction propagates the posterior mean of each latent column to the
query points and feeds those means through the outer layer. Draws are
combined by moment matching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular

from . import surrogate_io
from .errors import DimensionMismatch, EmptyPosterior, NotPositiveDefinite
from .gp import LOG2PI, AffineTransform, PosteriorPrediction, _clamp_variance
from .kernels import ArdKernelParams, ard_covariance_matrix
from .numerics import as_generator, cholesky_with_jitter
from .trainers import mh_steps

HIDDEN_JITTER = 1e-8


@dataclass(frozen=True)
class DgpState:
    latents: np.ndarray
    outer_params: ArdKernelParams
    hidden_length_scales: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.latents, dtype=float)
        W = W.reshape(-1, 1) if W.ndim == 1 else W
        hl = np.atleast_2d(np.asarray(self.hidden_length_scales, dtype=float))
        object.__setattr__(self, "latents", W)
        object.__setattr__(self, "hidden_length_scales", hl)
        if W.shape[1] < 1:
            raise ValueError("at least one hidden node is required")
        if not np.all(np.isfinite(W)):
            raise ValueError("latents must be finite")
        if hl.shape[0] != W.shape[1]:
            raise DimensionMismatch("one row of hidden length scales per hidden node")
        if self.outer_params.dim != W.shape[1]:
            raise DimensionMismatch("outer kernel dimension must equal the number of hidden nodes")
        if np.any(hl <= 0):
            raise ValueError("hidden length scales must be positive")

    @property
    def p(self) -> int:
        return self.latents.shape[1]


@dataclass(frozen=True)
class DgpPriors:
    """Normal priors on the log hyperparameters, ``(mean, std)`` pairs."""

    log_amplitude: tuple = (0.0, 1.0)
    log_noise: tuple = (math.log(1e-2), 2.0)
    log_length_scale: tuple = (0.0, 1.0)
    log_hidden_length_scale: tuple = (0.0, 1.0)


@dataclass(frozen=True)
class DgpMcmcConfig:
    samples: int = 10_000
    burn_in: int | None = None
    thinning: int = 10
    hidden_nodes: int | None = None
    scale_amplitude_noise: float = 0.25
    scale_length_scale: float = 0.2
    scale_hidden_length_scale: float = 0.2
    priors: DgpPriors = field(default_factory=DgpPriors)
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1 or self.thinning < 1:
            raise ValueError("samples and thinning must be positive")
        b = self.samples // 2 if self.burn_in is None else self.burn_in
        if not 0 <= b < self.samples:
            raise ValueError("burn_in must lie in [0, samples)")
        object.__setattr__(self, "burn_in", b)


def _normal_logpdf(x, mean_std) -> float:
    m, s = mean_std
    z = (np.asarray(x, dtype=float) - m) / s
    return float(np.sum(-0.5 * z * z - math.log(s) - 0.5 * LOG2PI))


def _gaussian_logpdf(K, y) -> float:
    # the Gibbs inner loop calls this thousands of times; try a bare
    # factorization before the validated jitter ladder
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        L = cholesky_with_jitter(K).lower
    a = solve_triangular(L, y, lower=True, check_finite=False)
    return float(-np.sum(np.log(np.diag(L))) - 0.5 * a @ a - 0.5 * y.size * LOG2PI)


def _se(W, length_scales, amplitude) -> np.ndarray:
    U = W / length_scales
    sq = np.sum(U * U, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * U @ U.T, 0.0)
    np.fill_diagonal(d2, 0.0)
    return amplitude * np.exp(-0.5 * d2)


def hidden_covariance(Z, length_scales, Z2=None) -> np.ndarray:
    """Unit-amplitude SE kernel; a fixed 1e-8 jitter is added on the square case."""
    if Z2 is None:
        K = _se(np.asarray(Z, dtype=float), np.asarray(length_scales, dtype=float), 1.0)
        K[np.diag_indices_from(K)] += HIDDEN_JITTER
        return K
    return ard_covariance_matrix(Z, Z2, ArdKernelParams(length_scales, 1.0, 0.0))


def outer_log_likelihood(W, y, params: ArdKernelParams) -> float:
    """``ln p(y | W, l, sigma2, tau2)``."""
    K = _se(np.asarray(W, dtype=float), params.length_scales, params.amplitude)
    K[np.diag_indices_from(K)] += params.noise
    return _gaussian_logpdf(K, y)


def hidden_log_prior(w, Z, length_scales) -> float:
    """``ln p(W^i | Z, l_W^i)``."""
    return _gaussian_logpdf(hidden_covariance(Z, length_scales), w)


def dgp_compound_log_likelihood(state: DgpState, Z, y) -> float:
    """Outer marginal likelihood plus the Gaussian log prior of each latent column."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != state.latents.shape[0]:
        raise DimensionMismatch("one output per latent row is required")
    total = outer_log_likelihood(state.latents, y, state.outer_params)
    for i in range(state.p):
        total += hidden_log_prior(state.latents[:, i], Z, state.hidden_length_scales[i])
    return total


def ess_update_latent_column(w, prior_draw, log_lik, rng, trace: list | None = None,
                             max_shrinks: int = 200):
    """One elliptical slice sampling update.

    Proposals ``w cos g + prior_draw sin g`` with the angle bracket shrunk
    toward zero after each rejection. If ``trace`` is a list, the bracket
    width at every proposal is appended to it. The loop stops after
    ``max_shrinks`` rejections and returns ``w`` (the ``g -> 0`` limit).
    """
    w = np.asarray(w, dtype=float)
    nu = np.asarray(prior_draw, dtype=float)
    log_y = float(log_lik(w)) + math.log(rng.uniform())
    gamma = rng.uniform(0.0, 2.0 * math.pi)
    lo, hi = gamma - 2.0 * math.pi, gamma
    for _ in range(max_shrinks):
        if trace is not None:
            trace.append(hi - lo)
        proposal = w * math.cos(gamma) + nu * math.sin(gamma)
        if float(log_lik(proposal)) > log_y:
            return proposal
        if gamma < 0:
            lo = gamma
        else:
            hi = gamma
        gamma = rng.uniform(lo, hi)
    return w.copy()


def _safe(f):
    def wrapped(*a):
        try:
            v = f(*a)
        except NotPositiveDefinite:
            return -math.inf
        return v if math.isfinite(v) else -math.inf
    return wrapped


def dgp_gibbs_step(state: DgpState, Z, y, rng, cfg: DgpMcmcConfig | None = None,
                   outer_loglik=None, ess_trace: list | None = None) -> tuple[DgpState, dict]:
    """One Gibbs sweep. Returns the new state and per-block acceptance flags.

    ``outer_loglik(W, params)`` replaces the outer likelihood when given
    (used to check that the sampler leaves the prior invariant).
    """
    cfg = cfg or DgpMcmcConfig()
    pri = cfg.priors
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    outer = _safe(outer_loglik or (lambda W, p: outer_log_likelihood(W, y, p)))
    W = state.latents.copy()
    op = state.outer_params
    hls = state.hidden_length_scales.copy()
    acc = {}

    def amp_noise_target(t):
        prm = ArdKernelParams(op.length_scales, math.exp(t[0]), math.exp(t[1]))
        return (outer(W, prm) + _normal_logpdf(t[0], pri.log_amplitude)
                + _normal_logpdf(t[1], pri.log_noise))

    t0 = np.array([math.log(op.amplitude), math.log(op.noise)])
    t, _, acc["amplitude_noise"] = next(mh_steps(amp_noise_target, t0, amp_noise_target(t0),
                                                 cfg.scale_amplitude_noise, rng, 1))
    if not np.array_equal(t, t0):
        op = ArdKernelParams(op.length_scales, math.exp(t[0]), math.exp(t[1]))

    def ls_target(t):
        prm = ArdKernelParams(np.exp(t), op.amplitude, op.noise)
        return outer(W, prm) + _normal_logpdf(t, pri.log_length_scale)

    t0 = np.log(op.length_scales)
    t, _, acc["length_scales"] = next(mh_steps(ls_target, t0, ls_target(t0), cfg.scale_length_scale, rng, 1))
    if not np.array_equal(t, t0):
        op = ArdKernelParams(np.exp(t), op.amplitude, op.noise)

    acc["hidden_length_scales"] = []
    for i in range(state.p):
        def hidden_target(t, i=i):
            return (_safe(hidden_log_prior)(W[:, i], Z, np.exp(t))
                    + _normal_logpdf(t, pri.log_hidden_length_scale))

        t0 = np.log(hls[i])
        t, _, a = next(mh_steps(hidden_target, t0, hidden_target(t0), cfg.scale_hidden_length_scale, rng, 1))
        if not np.array_equal(t, t0):
            hls[i] = np.exp(t)
        acc["hidden_length_scales"].append(a)

    for i in range(state.p):
        chol = cholesky_with_jitter(hidden_covariance(Z, hls[i]))
        nu = chol.lower @ rng.standard_normal(W.shape[0])

        def column_loglik(col, i=i):
            W2 = W.copy()
            W2[:, i] = col
            return outer(W2, op)

        W[:, i] = ess_update_latent_column(W[:, i], nu, column_loglik, rng, trace=ess_trace)
    return DgpState(W, op, hls), acc


def initial_state(Z, p: int | None = None) -> DgpState:
    """Latent columns start at the standardized input columns (cycled when ``p > D``)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    D = Z.shape[1]
    p = D if p is None else p
    W = Z[:, [i % D for i in range(p)]].copy()
    return DgpState(W, ArdKernelParams(np.ones(p), 1.0, 1e-2), np.ones((p, D)))


@dataclass(eq=False)
class DgpPosterior:
    draws: list
    burn_in: int
    thinning: int
    samples: int
    training_inputs: np.ndarray
    training_outputs: np.ndarray
    input_transform: AffineTransform
    output_transform: AffineTransform
    metadata: dict = field(default_factory=dict)

    @property
    def z(self) -> np.ndarray:
        return self.input_transform.forward(self.training_inputs)

    @property
    def y_std(self) -> np.ndarray:
        y = self.training_outputs.reshape(-1)
        return (y - self.output_transform.shift[0]) / self.output_transform.scale[0]

    def predict(self, Xs, hidden: str = "mean") -> PosteriorPrediction:
        return dgp_predict(self, Xs, hidden)

    def save(self, path):
        return save(self, path)


def _outer_predict(W, y, params, Ws):
    K = ard_covariance_matrix(W, None, params)
    c = cholesky_with_jitter(K)
    Ks = ard_covariance_matrix(Ws, W, params)
    mean = Ks @ c.solve(y)
    v = c.solve_lower(Ks.T)
    var = params.amplitude - np.sum(v * v, axis=0)
    return mean, var


def dgp_predict(posterior: DgpPosterior, Xs, hidden: str = "mean") -> PosteriorPrediction:
    """Moment-matched predictive mean and variance over the retained draws.

    ``hidden="mean"`` propagates the latent posterior means to ``Xs``;
    ``hidden="identity"`` uses the standardized query inputs as latents.
    """
    if not posterior.draws:
        raise EmptyPosterior("no retained posterior draws")
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    if Xs.shape[1] != posterior.training_inputs.shape[1]:
        raise DimensionMismatch("query dimension does not match the training inputs")
    Z, y = posterior.z, posterior.y_std
    Zs = posterior.input_transform.forward(Xs)
    means, variances = [], []
    for s in posterior.draws:
        if hidden == "identity":
            Ws = Zs
        elif hidden == "mean":
            Ws = np.empty((Zs.shape[0], s.p))
            for i in range(s.p):
                c = cholesky_with_jitter(hidden_covariance(Z, s.hidden_length_scales[i]))
                Ws[:, i] = hidden_covariance(Zs, s.hidden_length_scales[i], Z) @ c.solve(s.latents[:, i])
        else:
            raise ValueError("hidden must be 'mean' or 'identity'")
        m, v = _outer_predict(s.latents, y, s.outer_params, Ws)
        means.append(m)
        variances.append(np.maximum(v, 0.0))
    means, variances = np.array(means), np.array(variances)
    mean = means.mean(axis=0)
    var = variances.mean(axis=0) + means.var(axis=0)
    var, n_clamped = _clamp_variance(var)
    sc = posterior.output_transform.scale[0]
    return PosteriorPrediction(mean * sc + posterior.output_transform.shift[0], var * sc**2, None, n_clamped)


def retained_indices(samples: int, burn_in: int, thinning: int) -> np.ndarray:
    """Sweep indices kept: the last sweep of each full thinning window after burn-in."""
    n = (samples - burn_in) // thinning
    return burn_in + thinning * np.arange(n) + thinning - 1


def train_dgp(X, y, cfg: DgpMcmcConfig | None = None, rng=None, init: DgpState | None = None) -> DgpPosterior:
    """Run the Gibbs sampler and keep ``(samples - burn_in) // thinning`` draws."""
    cfg = cfg or DgpMcmcConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != y.size:
        raise DimensionMismatch("inputs and outputs must have the same number of rows")
    rng = as_generator(rng if rng is not None else cfg.seed)
    tin = AffineTransform.standardize(X)
    tout = AffineTransform.standardize(y.reshape(-1, 1))
    Z = tin.forward(X)
    ys = (y - tout.shift[0]) / tout.scale[0]
    state = init or initial_state(Z, cfg.hidden_nodes)
    keep = set(retained_indices(cfg.samples, cfg.burn_in, cfg.thinning).tolist())
    draws = []
    n_acc = {"amplitude_noise": 0, "length_scales": 0, "hidden_length_scales": 0}
    for it in range(cfg.samples):
        state, acc = dgp_gibbs_step(state, Z, ys, rng, cfg)
        n_acc["amplitude_noise"] += acc["amplitude_noise"]
        n_acc["length_scales"] += acc["length_scales"]
        n_acc["hidden_length_scales"] += sum(acc["hidden_length_scales"]) / state.p
        if it in keep:
            draws.append(state)
    meta = {f"acceptance_{k}": v / cfg.samples for k, v in n_acc.items()}
    return DgpPosterior(draws, cfg.burn_in, cfg.thinning, cfg.samples, X, y.reshape(-1, 1), tin, tout, meta)


def save(posterior: DgpPosterior, path):
    d = posterior.draws
    arrays = {
        "training_inputs": posterior.training_inputs,
        "training_outputs": posterior.training_outputs,
        "latents": np.array([s.latents for s in d]),
        "outer_length_scales": np.array([s.outer_params.length_scales for s in d]),
        "outer_amplitude": np.array([s.outer_params.amplitude for s in d]),
        "outer_noise": np.array([s.outer_params.noise for s in d]),
        "hidden_length_scales": np.array([s.hidden_length_scales for s in d]),
        "input_shift": posterior.input_transform.shift,
        "input_scale": posterior.input_transform.scale,
        "output_shift": posterior.output_transform.shift,
        "output_scale": posterior.output_transform.scale,
    }
    meta = {k: v for k, v in posterior.metadata.items() if isinstance(v, (int, float, str, bool, type(None)))}
    meta.update({"burn_in": posterior.burn_in, "thinning": posterior.thinning, "samples": posterior.samples})
    return surrogate_io.write_surrogate(path, "DGP", arrays, meta)


def load(path) -> DgpPosterior:
    _, a, meta = surrogate_io.read_surrogate(path, expected_kind="DGP")
    draws = [
        DgpState(a["latents"][k],
                 ArdKernelParams(a["outer_length_scales"][k], float(a["outer_amplitude"][k]),
                                 float(a["outer_noise"][k])),
                 a["hidden_length_scales"][k])
        for k in range(a["latents"].shape[0])
    ]
    return DgpPosterior(draws, int(meta["burn_in"]), int(meta["thinning"]), int(meta["samples"]),
                        a["training_inputs"], a["training_outputs"],
                        AffineTransform(a["input_shift"], a["input_scale"]),
                        AffineTransform(a["output_shift"], a["output_scale"]), dict(meta))


def with_draws(posterior: DgpPosterior, draws) -> DgpPosterior:
    return replace(posterior, draws=list(draws))
