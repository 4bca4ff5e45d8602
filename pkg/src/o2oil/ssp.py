"""Convex-concave saddle-point machinery for occupancy matching.

The offline objective max_rho E_rho[r] - KL(rho || rho_o) subject to the
Bellman flow constraints dualizes, via the convex conjugate of exp(x - 1),
into a min-max problem over a per-state potential nu and a per-pair positive
variable y:

    min_nu max_y  alpha * E_rho_o[ delta_nu * y - alpha * log(alpha y) * y ]
                  + (1 - gamma) * E_mu[ nu ]

where delta_nu(s, a) = r(s, a) + gamma E[nu(s')] - nu(s). At the saddle point
alpha * y = exp(delta_nu / alpha - 1) and rho_o * alpha * y is the optimal
occupancy. The solver runs simultaneous Adam ascent/descent with either exact
tabular gradients (sums over a population distribution, known dynamics) or
unbiased stochastic gradients from transition samples. y is optimized in log
space so positivity holds by construction.

The undiscounted variant (gamma == 1) adds a normalization multiplier lambda:
min over (nu, lambda), max over y of E_rho_o[ delta * y + lambda * y
- y log y ] - lambda, whose first-order conditions force sum(rho_o * y) = 1.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, EmpiricalDistribution, empirical_distribution, estimate_initial_distribution
from .mdp import TabularMdp
from .nn import Adam, AdamArrays, Mlp
from .reward import AuxiliaryReward, one_hot_pairs

EXACT = "exact"
SAMPLED = "sampled"


@dataclass(frozen=True)
class DualVariables:
    nu: np.ndarray
    y: np.ndarray
    lam: float | None = None

    def __post_init__(self):
        nu = np.asarray(self.nu, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "y", y)
        if np.any(y <= 0):
            raise ValueError("y must be strictly positive")


@dataclass(frozen=True)
class SspConfig:
    lr_nu: float = 3e-4
    lr_y: float = 3e-4
    iterations: int | None = None
    alpha: float = 1.0
    beta: float = 0.0
    undiscounted: bool = False
    y_clip: tuple[float, float] = (1e-6, 1e6)
    seed: int = 0
    batch: int = 256
    mode: str = EXACT
    strategy: str = "gda"
    lr_decay_tau: float | None = None
    lr_end_factor: float | None = None
    nu_init: str = "value"
    check_interval: int = 100
    early_stop_tol: float = 1e-6
    early_stop_patience: int = 100
    delta_clamp: float = 30.0
    kappa: float = 0.0
    polish_newton_iters: int = 200
    polish_y_iters: int = 4000

    def __post_init__(self):
        if self.lr_nu <= 0 or self.lr_y <= 0:
            raise ValueError("learning rates must be positive")
        if self.iterations is not None and self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.mode not in (EXACT, SAMPLED):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.strategy not in ("gda", "polish"):
            raise ValueError("strategy must be 'gda' or 'polish'")
        if self.nu_init not in ("zeros", "value"):
            raise ValueError("nu_init must be 'zeros' or 'value'")
        if self.undiscounted and self.alpha != 1.0:
            raise ValueError("undiscounted mode only supports alpha == 1")

    def budget(self) -> int:
        if self.iterations is not None:
            return self.iterations
        return 200_000 if self.mode == EXACT else 500_000


@dataclass
class SspDiagnostics:
    iterations: list[int] = field(default_factory=list)
    objective_trace: list[float] = field(default_factory=list)
    kkt_trace: list[float] = field(default_factory=list)
    flow_trace: list[float] = field(default_factory=list)
    gap_trace: list[float] = field(default_factory=list)
    overflow_clamps: int = 0
    stopped_at: int | None = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "objective", "kkt_residual", "gap"])
            gaps = self.gap_trace or [float("nan")] * len(self.iterations)
            for it, obj, kkt, gap in zip(self.iterations, self.objective_trace,
                                         self.kkt_trace, gaps):
                writer.writerow([it, f"{obj:.12g}", f"{kkt:.12g}", f"{gap:.12g}"])


def _reward_table(reward) -> np.ndarray:
    if isinstance(reward, AuxiliaryReward):
        return reward.values
    return np.asarray(reward, dtype=np.float64)


def _check_reward_scale(reward, cfg: SspConfig) -> None:
    if isinstance(reward, AuxiliaryReward):
        if reward.scale_alpha != cfg.alpha or reward.shift_beta != cfg.beta:
            raise ValueError(
                f"reward was built with (alpha={reward.scale_alpha}, beta={reward.shift_beta}) "
                f"but config declares (alpha={cfg.alpha}, beta={cfg.beta})")


# ---------------------------------------------------------------------------
# Advantage-style differences
# ---------------------------------------------------------------------------

def delta_expectation(nu: np.ndarray, reward, mdp: TabularMdp) -> np.ndarray:
    """Exact delta(s, a) = r(s, a) + gamma * E_{s'|s,a}[nu(s')] - nu(s)."""
    if mdp is None:
        raise ValueError("expectation form needs known transition dynamics")
    r = _reward_table(reward)
    nu = np.asarray(nu, dtype=np.float64)
    return r + mdp.discount * (mdp.transition @ nu) - nu[:, None]


def delta_sample(nu: np.ndarray, reward, transition: tuple[int, int, int],
                 gamma: float) -> float:
    """Single-sample surrogate r(s, a) + gamma * nu(s') - nu(s)."""
    s, a, sn = transition
    r = _reward_table(reward)
    return float(r[s, a] + gamma * nu[sn] - nu[s])


def delta_samples(nu: np.ndarray, reward, s, a, sn, gamma: float) -> np.ndarray:
    r = _reward_table(reward)
    return r[s, a] + gamma * nu[sn] - nu[s]


# ---------------------------------------------------------------------------
# Problem descriptions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PopulationProblem:
    """Exact population quantities: a union distribution and initial weights."""

    rho_o: np.ndarray
    initial: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "rho_o", np.asarray(self.rho_o, dtype=np.float64))
        if self.initial is not None:
            object.__setattr__(self, "initial", np.asarray(self.initial, dtype=np.float64))


def _as_population(data, mdp: TabularMdp | None, cfg: SspConfig) -> PopulationProblem:
    if isinstance(data, PopulationProblem):
        return data
    if isinstance(data, EmpiricalDistribution):
        initial = mdp.initial if mdp is not None else None
        return PopulationProblem(rho_o=data.probs, initial=initial)
    if isinstance(data, Dataset):
        if mdp is None:
            raise ValueError("exact mode needs the MDP for expectations")
        rho = empirical_distribution(data, shape=(mdp.n_states, mdp.n_actions),
                                     smoothing=cfg.kappa)
        return PopulationProblem(rho_o=rho.probs, initial=mdp.initial)
    raise TypeError(f"unsupported data argument {type(data).__name__}")


# ---------------------------------------------------------------------------
# Objective, gradients, dual value
# ---------------------------------------------------------------------------

def _validate_y(y: np.ndarray, cfg: SspConfig) -> None:
    lo, hi = cfg.y_clip
    if np.any(y < lo) or np.any(y > hi):
        raise ValueError(f"y leaves the configured clip range [{lo}, {hi}]")


def ssp_objective(dual: DualVariables, cfg: SspConfig, data, mdp: TabularMdp | None = None,
                  reward=None) -> float:
    """Saddle objective value at the given dual variables.

    With a PopulationProblem/EmpiricalDistribution this is the exact
    expectation form; with a Dataset it is the sample average using the
    single-transition surrogate, which is unbiased (and coincides with the
    expectation form under deterministic dynamics).
    """
    if reward is None:
        raise ValueError("reward table required")
    _check_reward_scale(reward, cfg)
    _validate_y(dual.y, cfg)
    a = cfg.alpha
    if isinstance(data, Dataset) and cfg.mode == SAMPLED:
        cols = data.as_arrays()
        if not cfg.undiscounted and mdp is None:
            raise ValueError("sampled objective needs an MDP for the discount")
        gamma = 1.0 if cfg.undiscounted else mdp.discount
        delta = delta_samples(dual.nu, reward, cols["state"], cols["action"],
                              cols["next_state"], gamma)
        y = dual.y[cols["state"], cols["action"]]
        if cfg.undiscounted:
            inner = float(np.mean(delta * y + dual.lam * y - y * np.log(y))) - dual.lam
            return inner
        inner = a * float(np.mean(delta * y - a * np.log(a * y) * y))
        starts = cols["state"][cols["start"]]
        if len(starts) == 0:
            raise ValueError("dataset has no episode starts")
        return inner + (1.0 - gamma) * float(np.mean(dual.nu[starts]))
    problem = _as_population(data, mdp, cfg)
    delta = delta_expectation(dual.nu, reward, mdp) if not cfg.undiscounted else \
        _reward_table(reward) + (mdp.transition @ dual.nu) - dual.nu[:, None]
    y = dual.y
    if cfg.undiscounted:
        if dual.lam is None:
            raise ValueError("undiscounted objective needs the lambda multiplier")
        inner = float(np.sum(problem.rho_o * (delta * y + dual.lam * y - y * np.log(y))))
        return inner - dual.lam
    inner = a * float(np.sum(problem.rho_o * (delta * y - a * np.log(a * y) * y)))
    mu = problem.initial if problem.initial is not None else mdp.initial
    return inner + (1.0 - mdp.discount) * float(np.dot(mu, dual.nu))


def ssp_gradients(dual: DualVariables, cfg: SspConfig, data, mdp: TabularMdp | None = None,
                  reward=None):
    """Exact partial derivatives of the population objective.

    Returns (grad_nu, grad_y) or (grad_nu, grad_y, grad_lam) in undiscounted
    mode. grad_nu equals the Bellman-flow residual of alpha * y * rho_o, which
    is what makes flow feasibility at convergence a first-order condition.
    """
    if reward is None:
        raise ValueError("reward table required")
    _check_reward_scale(reward, cfg)
    _validate_y(dual.y, cfg)
    problem = _as_population(data, mdp, cfg)
    a = cfg.alpha
    gamma = 1.0 if cfg.undiscounted else mdp.discount
    r = _reward_table(reward)
    delta = r + gamma * (mdp.transition @ dual.nu) - dual.nu[:, None]
    y = dual.y
    w = problem.rho_o * y
    inflow = np.einsum("sap,sa->p", mdp.transition, w)
    if cfg.undiscounted:
        grad_y = problem.rho_o * (delta + dual.lam - np.log(y) - 1.0)
        grad_nu = inflow - w.sum(axis=1)
        grad_lam = float(w.sum() - 1.0)
        return grad_nu, grad_y, grad_lam
    grad_y = problem.rho_o * a * (delta - a * np.log(a * y) - a)
    mu = problem.initial if problem.initial is not None else mdp.initial
    grad_nu = a * (gamma * inflow - w.sum(axis=1)) + (1.0 - gamma) * mu
    return grad_nu, grad_y


def closed_form_inner_y(nu: np.ndarray, reward, cfg: SspConfig,
                        mdp: TabularMdp) -> np.ndarray:
    """Inner maximizer for fixed nu: alpha * y = exp(delta / alpha - 1)."""
    delta = delta_expectation(nu, reward, mdp)
    scaled = np.clip(delta / cfg.alpha - 1.0, -cfg.delta_clamp, cfg.delta_clamp)
    y = np.exp(scaled) / cfg.alpha
    return np.clip(y, *cfg.y_clip)


def dual_value(nu: np.ndarray, reward, cfg: SspConfig, data,
               mdp: TabularMdp | None = None, lam: float | None = None) -> float:
    """Value of the dual after maximizing y out analytically.

    Discounted: alpha * E_rho_o[exp(delta/alpha - 1)] + (1-gamma) E_mu[nu].
    Undiscounted: E_rho_o[exp(delta + lambda - 1)] - lambda.
    """
    _check_reward_scale(reward, cfg)
    problem = _as_population(data, mdp, cfg)
    gamma = 1.0 if cfg.undiscounted else mdp.discount
    r = _reward_table(reward)
    delta = r + gamma * (mdp.transition @ nu) - nu[:, None]
    if cfg.undiscounted:
        if lam is None:
            raise ValueError("undiscounted dual value needs lambda")
        ex = delta + lam - 1.0
    else:
        ex = delta / cfg.alpha - 1.0
    if np.any(ex > 700.0):
        raise OverflowError(
            "exp overflow in dual value (delta too large); rescale the reward "
            "with a larger alpha")
    if cfg.undiscounted:
        return float(np.sum(problem.rho_o * np.exp(ex))) - lam
    mu = problem.initial if problem.initial is not None else mdp.initial
    return cfg.alpha * float(np.sum(problem.rho_o * np.exp(ex))) \
        + (1.0 - gamma) * float(np.dot(mu, nu))


def kkt_residual(dual: DualVariables, reward, cfg: SspConfig, mdp: TabularMdp,
                 support: np.ndarray | None = None) -> float:
    """Sup-norm of y - exp(delta/alpha - 1)/alpha over the support."""
    gamma = 1.0 if cfg.undiscounted else mdp.discount
    delta = _reward_table(reward) + gamma * (mdp.transition @ dual.nu) - dual.nu[:, None]
    if cfg.undiscounted:
        target = np.exp(np.clip(delta + dual.lam - 1.0, -cfg.delta_clamp, cfg.delta_clamp))
    else:
        target = np.exp(np.clip(delta / cfg.alpha - 1.0, -cfg.delta_clamp, cfg.delta_clamp)) / cfg.alpha
    diff = np.abs(dual.y - target)
    if support is not None:
        diff = diff[support]
    return float(diff.max())


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------

def _value_warm_start(r: np.ndarray, rho_o: np.ndarray, mdp: TabularMdp,
                      alpha: float) -> np.ndarray:
    """Evaluate r - alpha under the behavior policy implied by rho_o."""
    marg = rho_o.sum(axis=1, keepdims=True)
    pi_b = np.where(marg > 0, rho_o / np.where(marg > 0, marg, 1.0),
                    1.0 / mdp.n_actions)
    p_b = np.einsum("sa,sap->sp", pi_b, mdp.transition)
    r_b = (pi_b * (r - alpha)).sum(axis=1)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.discount * p_b, r_b)


def _dual_newton_descent(nu: np.ndarray, lam: float, r: np.ndarray,
                         rho_o: np.ndarray, mu: np.ndarray, mdp: TabularMdp,
                         cfg: SspConfig, tol: float = 1e-13):
    """Damped Newton on the analytic dual (inner max taken in closed form).

    Each iteration is one exact ascent over y followed by a curvature-aware
    descent step on nu (and lambda in undiscounted mode). The dual is smooth
    and convex, so backtracking Newton converges quadratically; this is what
    makes oracle-grade tabular convergence affordable at gamma near 1.
    """
    n_states, n_actions = mdp.n_states, mdp.n_actions
    gamma = 1.0 if cfg.undiscounted else mdp.discount
    alpha = cfg.alpha
    t2 = mdp.transition.reshape(n_states * n_actions, n_states)
    # G[s, (s',a)] = gamma * T(s | s', a) - [s' == s]
    g_mat = gamma * t2.T - np.repeat(np.eye(n_states), n_actions, axis=1)
    rho_flat = rho_o.ravel()

    def exponent(nu_, lam_):
        delta = r + gamma * (t2 @ nu_).reshape(n_states, n_actions) - nu_[:, None]
        if cfg.undiscounted:
            return delta + lam_ - 1.0
        return delta / alpha - 1.0

    def value(nu_, lam_):
        ex = np.clip(exponent(nu_, lam_), -500.0, 500.0)
        if cfg.undiscounted:
            return float(np.sum(rho_o * np.exp(ex))) - lam_
        return alpha * float(np.sum(rho_o * np.exp(ex))) \
            + (1.0 - gamma) * float(np.dot(mu, nu_))

    for _ in range(cfg.polish_newton_iters):
        m = (rho_o * np.exp(np.clip(exponent(nu, lam), -500.0, 500.0))).ravel()
        grad_nu = g_mat @ m
        if not cfg.undiscounted:
            grad_nu = grad_nu + (1.0 - gamma) * mu
        if cfg.undiscounted:
            grad = np.concatenate([grad_nu, [m.sum() - 1.0]])
            h_nn = (g_mat * m) @ g_mat.T
            h_nl = g_mat @ m
            hess = np.block([[h_nn, h_nl[:, None]], [h_nl[None, :], np.array([[m.sum()]])]])
        else:
            grad = grad_nu
            hess = (g_mat * m) @ g_mat.T / alpha
        if np.abs(grad).max() < tol:
            break
        ridge = 1e-12 * max(1.0, float(np.trace(hess)) / len(grad))
        direction = -np.linalg.solve(hess + ridge * np.eye(len(grad)), grad)
        slope = float(grad @ direction)
        if slope >= 0:
            direction = -grad
            slope = -float(grad @ grad)
        base = value(nu, lam)
        step = 1.0
        for _ in range(60):
            nu_try = nu + step * direction[:n_states]
            lam_try = lam + (step * direction[-1] if cfg.undiscounted else 0.0)
            cand = value(nu_try, lam_try)
            if np.isfinite(cand) and cand <= base + 0.25 * step * slope:
                nu, lam = nu_try, lam_try
                break
            step *= 0.5
        else:
            break
    return nu, lam


def solve_ssp(reward, data, mdp: TabularMdp | None = None,
              cfg: SspConfig = SspConfig(),
              oracle_value: float | None = None):
    """Alternating Adam ascent on y / descent on nu (and lambda when present).

    Exact mode sums gradients over the population distribution; sampled mode
    draws minibatches of transitions from the dataset. Deterministic given
    cfg.seed. Returns (DualVariables, SspDiagnostics).
    """
    _check_reward_scale(reward, cfg)
    if mdp is None:
        raise ValueError("tabular solver needs the MDP for expectations")
    sampled = isinstance(data, Dataset) and cfg.mode == SAMPLED
    problem = None if sampled else _as_population(data, mdp, cfg)
    r = _reward_table(reward)
    n_states, n_actions = mdp.n_states, mdp.n_actions
    gamma = 1.0 if cfg.undiscounted else mdp.discount
    a = cfg.alpha

    if sampled:
        cols = data.as_arrays()
        s_all, a_all, sn_all = cols["state"], cols["action"], cols["next_state"]
        starts_all = s_all[cols["start"]]
        if len(starts_all) == 0 and not cfg.undiscounted:
            raise ValueError("dataset has no episode starts")
        rng = np.random.default_rng(cfg.seed)
        rho_for_kkt = empirical_distribution(data, shape=(n_states, n_actions),
                                             smoothing=cfg.kappa)
        support = rho_for_kkt.probs > 0
        rho_o = rho_for_kkt.probs
        mu = mdp.initial
    else:
        rho_o = problem.rho_o
        mu = problem.initial if problem.initial is not None else mdp.initial
        support = rho_o > 0

    uncovered = (rho_o.sum(axis=1) == 0) & (mu > 0)
    if not cfg.undiscounted and np.any(uncovered):
        raise ValueError(
            f"states {np.flatnonzero(uncovered).tolist()} carry initial mass but no "
            f"data mass; the dual is unbounded there (set kappa > 0 to smooth)")

    nu = np.zeros(n_states)
    log_y = np.zeros((n_states, n_actions))
    lam = np.zeros(1)
    log_lo, log_hi = np.log(cfg.y_clip[0]), np.log(cfg.y_clip[1])

    if cfg.nu_init == "value" and not cfg.undiscounted:
        # start nu at the behavior-policy evaluation of (r - alpha), the point
        # where delta/alpha = 1 holds on average and y = 1/alpha is stationary;
        # zeros would leave a 1/(1-gamma)-long valley to crawl along.
        nu[:] = _value_warm_start(r, rho_o, mdp, a)
        log_y -= np.log(a)

    opt_min = AdamArrays([nu, lam] if cfg.undiscounted else [nu], lr=cfg.lr_nu)
    opt_max = AdamArrays([log_y], lr=cfg.lr_y)
    diag = SspDiagnostics()

    t2 = mdp.transition.reshape(n_states * n_actions, n_states)

    budget = cfg.budget()
    below_tol = 0
    stopped = None

    for it in range(budget):
        lr_scale = 1.0
        if cfg.lr_decay_tau is not None:
            lr_scale /= 1.0 + it / cfg.lr_decay_tau
        if cfg.lr_end_factor is not None:
            # geometric schedule reaching lr * lr_end_factor on the last step
            lr_scale *= cfg.lr_end_factor ** (it / max(budget - 1, 1))
        y = np.exp(np.clip(log_y, log_lo, log_hi))
        if sampled:
            idx = rng.integers(len(s_all), size=min(cfg.batch, len(s_all)))
            s_b, a_b, sn_b = s_all[idx], a_all[idx], sn_all[idx]
            delta_b = r[s_b, a_b] + gamma * nu[sn_b] - nu[s_b]
            y_b = y[s_b, a_b]
            n_b = len(idx)
            g_y = np.zeros_like(y)
            g_nu = np.zeros_like(nu)
            if cfg.undiscounted:
                np.add.at(g_y, (s_b, a_b), (delta_b + lam[0] - np.log(y_b) - 1.0) / n_b)
                g_lam = float(np.mean(y_b) - 1.0)
            else:
                np.add.at(g_y, (s_b, a_b), a * (delta_b - a * np.log(a * y_b) - a) / n_b)
            np.add.at(g_nu, sn_b, a * gamma * y_b / n_b)
            np.add.at(g_nu, s_b, -a * y_b / n_b)
            if not cfg.undiscounted:
                si = rng.integers(len(starts_all), size=min(cfg.batch, len(starts_all)))
                np.add.at(g_nu, starts_all[si], (1.0 - gamma) / len(si))
        else:
            delta = r + gamma * (t2 @ nu).reshape(n_states, n_actions) - nu[:, None]
            w = rho_o * y
            inflow = t2.T @ w.ravel()
            if cfg.undiscounted:
                g_y = rho_o * (delta + lam[0] - np.log(y) - 1.0)
                g_nu = inflow - w.sum(axis=1)
                g_lam = float(w.sum() - 1.0)
            else:
                g_y = rho_o * a * (delta - a * np.log(a * y) - a)
                g_nu = a * (gamma * inflow - w.sum(axis=1)) + (1.0 - gamma) * mu
        # ascend y in log space, descend nu (and lambda).
        opt_max.step([-g_y * y], lr=cfg.lr_y * lr_scale)
        np.clip(log_y, log_lo, log_hi, out=log_y)
        if cfg.undiscounted:
            opt_min.step([g_nu, np.array([g_lam])], lr=cfg.lr_nu * lr_scale)
        else:
            opt_min.step([g_nu], lr=cfg.lr_nu * lr_scale)

        if (it + 1) % cfg.check_interval == 0 or it + 1 == budget:
            y = np.exp(np.clip(log_y, log_lo, log_hi))
            dual = DualVariables(nu=nu.copy(), y=y,
                                 lam=float(lam[0]) if cfg.undiscounted else None)
            res = kkt_residual(dual, reward, cfg, mdp, support=support)
            pop = PopulationProblem(rho_o=rho_o, initial=mu)
            exact_cfg = replace(cfg, mode=EXACT)
            obj = ssp_objective(dual, exact_cfg, pop, mdp, reward=reward)
            grads = ssp_gradients(dual, exact_cfg, pop, mdp, reward=reward)
            res_nu = float(np.abs(grads[0]).max())
            if cfg.undiscounted:
                res_nu = max(res_nu, abs(grads[2]))
            if not np.isfinite(obj):
                raise FloatingPointError(
                    f"saddle objective became non-finite at iteration {it + 1}; "
                    f"trace: {diag.objective_trace[-5:]}")
            diag.iterations.append(it + 1)
            diag.objective_trace.append(obj)
            diag.kkt_trace.append(res)
            diag.flow_trace.append(res_nu)
            if oracle_value is not None:
                dv = dual_value(nu, reward, cfg, pop, mdp,
                                lam=float(lam[0]) if cfg.undiscounted else None)
                diag.gap_trace.append(dv - oracle_value)
            # both first-order conditions must hold before stopping early
            below_tol = below_tol + 1 if max(res, res_nu) < cfg.early_stop_tol else 0
            if below_tol >= cfg.early_stop_patience:
                stopped = it + 1
                break

    diag.stopped_at = stopped

    if cfg.strategy == "polish":
        # exact dual descent (closed-form inner ascent + damped Newton on nu),
        # then realize y by plain gradient ascent at the polished nu.
        nu, lam_val = _dual_newton_descent(nu, float(lam[0]), r, rho_o, mu, mdp, cfg)
        lam[0] = lam_val
        delta = r + gamma * (t2 @ nu).reshape(n_states, n_actions) - nu[:, None]
        # sign-based ascent travels at constant log-space speed regardless of
        # the exponential gradient scale, then the decay polishes precision.
        for it in range(cfg.polish_y_iters):
            scale = (1e-9) ** (it / max(cfg.polish_y_iters - 1, 1))
            y = np.exp(np.clip(log_y, log_lo, log_hi))
            if cfg.undiscounted:
                g_y = rho_o * (delta + lam[0] - np.log(y) - 1.0)
            else:
                g_y = rho_o * a * (delta - a * np.log(a * y) - a)
            log_y += cfg.lr_y * scale * np.sign(g_y * y)
            np.clip(log_y, log_lo, log_hi, out=log_y)
        y = np.exp(np.clip(log_y, log_lo, log_hi))
        dual = DualVariables(nu=nu.copy(), y=y,
                             lam=float(lam[0]) if cfg.undiscounted else None)
        pop = PopulationProblem(rho_o=rho_o, initial=mu)
        exact_cfg = replace(cfg, mode=EXACT)
        diag.iterations.append(diag.iterations[-1] + cfg.polish_y_iters if diag.iterations
                               else cfg.polish_y_iters)
        diag.objective_trace.append(ssp_objective(dual, exact_cfg, pop, mdp, reward=reward))
        diag.kkt_trace.append(kkt_residual(dual, reward, cfg, mdp, support=support))
        grads = ssp_gradients(dual, exact_cfg, pop, mdp, reward=reward)
        diag.flow_trace.append(float(np.abs(grads[0]).max()))
        if oracle_value is not None:
            diag.gap_trace.append(dual_value(nu, reward, cfg, pop, mdp,
                                             lam=dual.lam) - oracle_value)
        return dual, diag

    y = np.exp(np.clip(log_y, log_lo, log_hi))
    dual = DualVariables(nu=nu.copy(), y=y, lam=float(lam[0]) if cfg.undiscounted else None)
    return dual, diag


def solve_undiscounted(reward, data, mdp: TabularMdp | None = None,
                       cfg: SspConfig = SspConfig(),
                       oracle_value: float | None = None):
    """Undiscounted solve: forwards to solve_ssp with the flag forced on."""
    if not cfg.undiscounted:
        cfg = replace(cfg, undiscounted=True)
    return solve_ssp(reward, data, mdp, cfg, oracle_value=oracle_value)


# ---------------------------------------------------------------------------
# Parametric (function approximation) path
# ---------------------------------------------------------------------------

class ParametricDual:
    """nu and log-y networks over one-hot features, trained on minibatches."""

    def __init__(self, n_states: int, n_actions: int,
                 hidden: tuple[int, ...] = (64, 64), seed: int = 0):
        self.n_states = n_states
        self.n_actions = n_actions
        self.nu_net = Mlp([n_states, *hidden, 1], seed=seed)
        self.y_net = Mlp([n_states + n_actions, *hidden, 1], seed=seed + 1)

    def _state_features(self, states) -> np.ndarray:
        x = np.zeros((len(states), self.n_states))
        x[np.arange(len(states)), np.asarray(states, dtype=np.int64)] = 1.0
        return x

    def nu_values(self, states) -> np.ndarray:
        return self.nu_net.value(self._state_features(states))[:, 0]

    def y_values(self, states, actions, cfg: SspConfig) -> np.ndarray:
        log_y = self.y_net.value(one_hot_pairs(states, actions, self.n_states,
                                               self.n_actions))[:, 0]
        return np.exp(np.clip(log_y, np.log(cfg.y_clip[0]), np.log(cfg.y_clip[1])))

    def tables(self, cfg: SspConfig):
        s, a = np.divmod(np.arange(self.n_states * self.n_actions), self.n_actions)
        nu = self.nu_values(np.arange(self.n_states))
        y = self.y_values(s, a, cfg).reshape(self.n_states, self.n_actions)
        return nu, y

    def batch_objective_and_grads(self, reward, s, a, sn, starts, gamma: float,
                                  cfg: SspConfig):
        """Sample objective and exact parameter gradients for one minibatch.

        Returns (objective, nu_grads, y_grads), where each grads entry matches
        the corresponding net's layer list.
        """
        r = _reward_table(reward)
        alpha = cfg.alpha
        n = len(s)
        xs = self._state_features(s)
        xsn = self._state_features(sn)
        xp = one_hot_pairs(s, a, self.n_states, self.n_actions)
        nu_s, cache_s = self.nu_net.forward(xs)
        nu_sn, cache_sn = self.nu_net.forward(xsn)
        raw_log_y, cache_y = self.y_net.forward(xp)
        lo, hi = np.log(cfg.y_clip[0]), np.log(cfg.y_clip[1])
        log_y = np.clip(raw_log_y[:, 0], lo, hi)
        inside = ((raw_log_y[:, 0] > lo) & (raw_log_y[:, 0] < hi))[:, None]
        y = np.exp(log_y)
        delta = r[s, a] + gamma * nu_sn[:, 0] - nu_s[:, 0]
        obj = alpha * float(np.mean(delta * y - alpha * np.log(alpha * y) * y))
        # d obj / d log_y_i
        d_log_y = (alpha * y * (delta - alpha * np.log(alpha * y) - alpha) / n)[:, None]
        y_grads = self.y_net.backward(cache_y, d_log_y * inside)
        # d obj / d nu via delta: -alpha*y/n at s, +alpha*gamma*y/n at s'
        g_s = self.nu_net.backward(cache_s, (-alpha * y / n)[:, None])
        g_sn = self.nu_net.backward(cache_sn, (alpha * gamma * y / n)[:, None])
        nu_grads = [(a1 + a2, b1 + b2) for (a1, b1), (a2, b2) in zip(g_s, g_sn)]
        if gamma < 1.0 and len(starts):
            x0 = self._state_features(starts)
            nu_0, cache_0 = self.nu_net.forward(x0)
            obj += (1.0 - gamma) * float(np.mean(nu_0[:, 0]))
            g_0 = self.nu_net.backward(
                cache_0, np.full((len(starts), 1), (1.0 - gamma) / len(starts)))
            nu_grads = [(a1 + a2, b1 + b2) for (a1, b1), (a2, b2) in zip(nu_grads, g_0)]
        return obj, nu_grads, y_grads


def train_parametric_dual(dual: ParametricDual, reward, dataset: Dataset,
                          mdp: TabularMdp, cfg: SspConfig):
    """Minibatch ascent/descent on the sampled objective (Adam both sides)."""
    rng = np.random.default_rng(cfg.seed)
    cols = dataset.as_arrays()
    starts_all = cols["state"][cols["start"]]
    gamma = 1.0 if cfg.undiscounted else mdp.discount
    opt_nu = Adam(dual.nu_net, lr=cfg.lr_nu)
    opt_y = Adam(dual.y_net, lr=cfg.lr_y)
    trace = []
    budget = cfg.iterations if cfg.iterations is not None else 20_000
    for it in range(budget):
        idx = rng.integers(len(cols["state"]), size=min(cfg.batch, len(cols["state"])))
        si = rng.integers(len(starts_all), size=min(cfg.batch, len(starts_all))) \
            if len(starts_all) else np.array([], dtype=np.int64)
        obj, nu_grads, y_grads = dual.batch_objective_and_grads(
            reward, cols["state"][idx], cols["action"][idx], cols["next_state"][idx],
            starts_all[si], gamma, cfg)
        if not np.isfinite(obj):
            raise FloatingPointError(f"parametric saddle objective non-finite at step {it}")
        opt_nu.step(nu_grads)                                  # descend
        opt_y.step([(-dw, -db) for dw, db in y_grads])         # ascend
        if (it + 1) % cfg.check_interval == 0:
            trace.append(obj)
    return trace
