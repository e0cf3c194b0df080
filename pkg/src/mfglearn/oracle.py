"""Exact desk-scale solvers for finite-state mean-field games.

Provides backward-induction best responses against a frozen population flow,
fictitious play over flows with exploitability certificates, an exact
N-player payoff evaluator (two independent routes) for the potential-game
identity, a finite-population value-gap simulator for the 1/sqrt(N) scaling
experiment, and the analytic stationary solution of the linear-quadratic
environment.

Reward functions must accept numpy arrays of states/masses/actions and
broadcast, e.g. ``lambda s, m, a: np.where(s == 0, 1/(1+m), 0.0)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

PROB_TOL = 1e-12


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteMFG:
    """Finite-state/action symmetric game with a mass-coupled reward.

    ``transitions[s, a, s']`` is the shared kernel; ``reward(s, mass, a)``
    is each agent's instantaneous reward given the population mass at its
    own state.  ``horizon`` counts decision epochs: states run t=0..T,
    actions and rewards t=0..T-1.
    """

    n_states: int
    n_actions: int
    horizon: int
    transitions: np.ndarray
    reward: Callable
    mu0: np.ndarray

    def __post_init__(self):
        p = np.array(self.transitions, dtype=float)
        if p.shape != (self.n_states, self.n_actions, self.n_states):
            raise OracleError("transition kernel shape %r" % (p.shape,))
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=2) - 1.0) > PROB_TOL):
            raise OracleError("transition rows must be distributions")
        mu = np.array(self.mu0, dtype=float)
        if mu.shape != (self.n_states,) or np.any(mu < 0) or abs(mu.sum() - 1.0) > PROB_TOL:
            raise OracleError("mu0 must be a distribution over states")
        p.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "mu0", mu)

    def reward_table(self, flow_t: np.ndarray) -> np.ndarray:
        """L(s, flow_t(s), a) for all s, a as an (S, A) array."""
        s = np.arange(self.n_states)
        return np.stack([np.asarray(self.reward(s, flow_t[s], a), dtype=float)
                         for a in range(self.n_actions)], axis=1)


def uniform_policy(game: DiscreteMFG) -> np.ndarray:
    return np.full((game.horizon, game.n_states, game.n_actions), 1.0 / game.n_actions)


def _check_flow(game: DiscreteMFG, flow: np.ndarray):
    flow = np.asarray(flow, dtype=float)
    if flow.shape != (game.horizon + 1, game.n_states):
        raise OracleError("flow shape %r" % (flow.shape,))
    if np.any(flow < -PROB_TOL) or np.any(np.abs(flow.sum(axis=1) - 1.0) > 1e-9):
        raise OracleError("flow rows must be distributions")
    return flow


def best_response(game: DiscreteMFG, flow: np.ndarray):
    """Backward-induction optimum against a frozen flow.

    Returns (deterministic policy (T,S,A), values (T+1,S)); ties break
    toward the lowest action index.
    """
    flow = _check_flow(game, flow)
    T, S, A = game.horizon, game.n_states, game.n_actions
    values = np.zeros((T + 1, S))
    policy = np.zeros((T, S, A))
    for t in range(T - 1, -1, -1):
        q = game.reward_table(flow[t]) + game.transitions @ values[t + 1]
        best = np.argmax(q, axis=1)  # first max = lowest action index
        policy[t, np.arange(S), best] = 1.0
        values[t] = q[np.arange(S), best]
    return policy, values


def policy_value(game: DiscreteMFG, policy: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Expected values (T+1, S) of a stochastic policy against a frozen flow."""
    flow = _check_flow(game, flow)
    T, S = game.horizon, game.n_states
    values = np.zeros((T + 1, S))
    for t in range(T - 1, -1, -1):
        q = game.reward_table(flow[t]) + game.transitions @ values[t + 1]
        values[t] = (policy[t] * q).sum(axis=1)
    return values


def induced_flow(game: DiscreteMFG, policy: np.ndarray) -> np.ndarray:
    """Forward-propagate the population under a shared policy."""
    T, S = game.horizon, game.n_states
    flow = np.zeros((T + 1, S))
    flow[0] = game.mu0
    for t in range(T):
        joint = flow[t][:, None] * policy[t]                      # (S, A)
        flow[t + 1] = np.tensordot(joint, game.transitions, axes=([0, 1], [0, 1]))
    return flow


def exploitability(game: DiscreteMFG, policy: np.ndarray, worst_case: bool = False) -> float:
    """Best-response gap of a policy at its own induced flow (>= 0).

    Default weights the per-state gaps by the initial distribution; the
    worst-case mode takes the max over states instead.
    """
    flow = induced_flow(game, policy)
    _, v_br = best_response(game, flow)
    v_pi = policy_value(game, policy, flow)
    gap = v_br[0] - v_pi[0]
    if worst_case:
        return float(gap.max())
    return float(game.mu0 @ gap)


def fictitious_play(game: DiscreteMFG, iterations: int):
    """Best-respond to the running-average flow; average policies and flows.

    The initial belief is the uniform policy's flow and is excluded from the
    averages.  Returns (average policy, average flow, exploitability trace of
    the average policy per iteration).
    """
    if iterations < 1:
        raise OracleError("iterations must be >= 1")
    belief = induced_flow(game, uniform_policy(game))
    avg_flow = None
    avg_policy = None
    trace = np.zeros(iterations)
    for n in range(1, iterations + 1):
        pol, _ = best_response(game, belief)
        flow_n = induced_flow(game, pol)
        if n == 1:
            avg_flow = flow_n.copy()
            avg_policy = pol.copy()
        else:
            avg_flow += (flow_n - avg_flow) / n
            avg_policy += (pol - avg_policy) / n
        belief = avg_flow
        trace[n - 1] = exploitability(game, avg_policy)
    return avg_policy, avg_flow, trace


# --- exact N-player evaluation (potential identity) -------------------------

def _joint_states(n_states: int, n_agents: int) -> np.ndarray:
    return np.array(list(itertools.product(range(n_states), repeat=n_agents)), dtype=int)


def _own_state_mass(joint: np.ndarray) -> np.ndarray:
    """Empirical mass at each agent's own state, per joint state row."""
    n = joint.shape[1]
    return (joint[:, :, None] == joint[:, None, :]).sum(axis=2) / float(n)


def nplayer_payoff(game: DiscreteMFG, policies, agent: int) -> float:
    """Exact expected payoff of one agent in the finite symmetric game.

    ``policies`` is one (T,S,A) array per agent; rewards couple through the
    empirical measure of all agents (self included).  Forward dynamic
    programming over the joint-state distribution with per-agent marginalized
    transition matrices.
    """
    n = len(policies)
    joint = _joint_states(game.n_states, n)
    mass = _own_state_mass(joint)
    dist = np.prod(game.mu0[joint], axis=1)
    total = 0.0
    for t in range(game.horizon):
        # expected reward of the tracked agent under the current joint distribution
        own_s = joint[:, agent]
        r = np.zeros(len(joint))
        for a in range(game.n_actions):
            r += policies[agent][t, own_s, a] * game.reward(own_s, mass[:, agent], a)
        total += float(dist @ r)
        # factorized joint transition: per-agent policy-averaged kernels
        kernels = [np.einsum("sa,sab->sb", policies[i][t], game.transitions) for i in range(n)]
        new_dist = np.zeros(len(joint))
        for row, p in zip(joint, dist):
            if p == 0.0:
                continue
            step = np.ones(1)
            for i in range(n):
                step = np.multiply.outer(step, kernels[i][row[i]]).ravel()
            new_dist += p * step
        dist = new_dist
    return total


def nplayer_payoff_enumerated(game: DiscreteMFG, policies, agent: int) -> float:
    """Same payoff via explicit recursion over joint actions and successors.

    Independent of :func:`nplayer_payoff`: enumerates action profiles instead
    of marginalizing them, recursing backward over time.
    """
    n = len(policies)
    S, A, T = game.n_states, game.n_actions, game.horizon
    actions = list(itertools.product(range(A), repeat=n))
    states = list(itertools.product(range(S), repeat=n))
    cache = {}

    def tail(t, js):
        if t == T:
            return 0.0
        key = (t, js)
        if key in cache:
            return cache[key]
        m_own = sum(1 for s in js if s == js[agent]) / float(n)
        value = 0.0
        for ja in actions:
            w = 1.0
            for i in range(n):
                w *= policies[i][t, js[i], ja[i]]
            if w == 0.0:
                continue
            r = float(game.reward(js[agent], m_own, ja[agent]))
            future = 0.0
            for ns in states:
                pr = 1.0
                for i in range(n):
                    pr *= game.transitions[js[i], ja[i], ns[i]]
                if pr:
                    future += pr * tail(t + 1, ns)
            value += w * (r + future)
        cache[key] = value
        return value

    return sum(float(np.prod(game.mu0[list(js)])) * tail(0, js) for js in states)


def random_policy(game: DiscreteMFG, rng) -> np.ndarray:
    p = rng.random((game.horizon, game.n_states, game.n_actions)) + 1e-3
    return p / p.sum(axis=2, keepdims=True)


def potential_identity_check(game: DiscreteMFG, n_agents: int, samples: int, rng) -> float:
    """Max discrepancy of the unilateral-deviation identity over random draws.

    For each sample, one agent deviates from pi to pi' with the others fixed;
    the payoff difference is computed once by the marginalized DP route and
    once by the action-enumeration route (the common-payoff functional of the
    identical-interest construction).  Both are exact, so the discrepancy is
    floating-point noise.
    """
    worst = 0.0
    for _ in range(samples):
        others = [random_policy(game, rng) for _ in range(n_agents - 1)]
        pi = random_policy(game, rng)
        pi_dev = random_policy(game, rng)
        base = [pi] + others
        dev = [pi_dev] + others
        lhs = nplayer_payoff(game, base, 0) - nplayer_payoff(game, dev, 0)
        rhs = nplayer_payoff_enumerated(game, base, 0) - nplayer_payoff_enumerated(game, dev, 0)
        worst = max(worst, abs(lhs - rhs))
    return worst


# --- finite-population value gap (scaling experiment) ------------------------

def _sample_rows(prob_rows: np.ndarray, rng) -> np.ndarray:
    """Sample one index per row of a (n, k) stack of distributions."""
    cdf = np.cumsum(prob_rows, axis=1)
    u = rng.random(prob_rows.shape[0])
    return (u[:, None] > cdf).sum(axis=1)


def simulate_population_value(game: DiscreteMFG, policy: np.ndarray, n_agents: int, rng) -> float:
    """Mean realized payoff of n agents sharing a policy, with rewards driven
    by the realized empirical measure."""
    s = _sample_rows(np.tile(game.mu0, (n_agents, 1)), rng)
    total = np.zeros(n_agents)
    for t in range(game.horizon):
        mass = np.bincount(s, minlength=game.n_states) / float(n_agents)
        a = _sample_rows(policy[t, s], rng)
        total += game.reward(s, mass[s], a)
        s = _sample_rows(game.transitions[s, a], rng)
    return float(total.mean())


def nplayer_gap(game: DiscreteMFG, policy: np.ndarray, n_agents: int, trials: int, rng):
    """(mean, std) over trials of |finite-N mean payoff - exact limit value|."""
    j_inf = float(game.mu0 @ policy_value(game, policy, induced_flow(game, policy))[0])
    gaps = np.array([abs(simulate_population_value(game, policy, n_agents, rng) - j_inf)
                     for _ in range(trials)])
    return float(gaps.mean()), float(gaps.std())


def scaling_experiment(game: DiscreteMFG, policy: np.ndarray, sizes, trials: int, rng):
    """Gap-vs-N table [(N, trials, mean, std)] and the log-log slope."""
    rows = []
    for n in sizes:
        mean, std = nplayer_gap(game, policy, int(n), trials, rng)
        rows.append((int(n), trials, mean, std))
    logn = np.log([r[0] for r in rows])
    logg = np.log([max(r[2], 1e-300) for r in rows])
    slope = float(np.polyfit(logn, logg, 1)[0])
    return rows, slope


# --- built-in test games -----------------------------------------------------

def ring_game(n_states: int = 4, horizon: int = 4, reward_state: int = 0) -> DiscreteMFG:
    """Monotone congestion on a ring: stay/move-clockwise, one rewarding state
    paying 1/(1 + mass there)."""
    trans = np.zeros((n_states, 2, n_states))
    for s in range(n_states):
        trans[s, 0, s] = 1.0
        trans[s, 1, (s + 1) % n_states] = 1.0
    reward = lambda s, m, a: np.where(np.asarray(s) == reward_state, 1.0 / (1.0 + np.asarray(m)), 0.0)
    mu0 = np.full(n_states, 1.0 / n_states)
    return DiscreteMFG(n_states, 2, horizon, trans, reward, mu0)


def two_state_congestion(horizon: int = 2, weights=(1.0, 0.6)) -> DiscreteMFG:
    """Two locations with own-mass-discounted rewards w_s/(1 + mass(s));
    actions stay/switch.  Crowding the better spot pushes part of the
    population to the other, so fictitious play has genuine work to do."""
    trans = np.zeros((2, 2, 2))
    for s in range(2):
        trans[s, 0, s] = 1.0
        trans[s, 1, 1 - s] = 1.0
    w = np.asarray(weights, dtype=float)
    reward = lambda s, m, a: w[np.asarray(s)] / (1.0 + np.asarray(m))
    return DiscreteMFG(2, 2, horizon, trans, reward, np.array([1.0, 0.0]))


# --- linear-quadratic analytic reference -------------------------------------

def riccati_gain(a: float, b: float, q: float, r: float, gamma: float = 1.0,
                 tol: float = 1e-12, max_iter: int = 10 ** 5):
    """Scalar discounted Riccati fixed point for the textbook convention
    cost = sum gamma^k (q*x_k^2 + r*u_k^2).  Returns (gain, fixed point)."""
    p = q
    for _ in range(max_iter):
        k = gamma * p * a * b / (r + gamma * p * b * b)
        p_new = q + r * k * k + gamma * p * (a - b * k) ** 2
        if abs(p_new - p) < tol:
            return gamma * p_new * a * b / (r + gamma * p_new * b * b), p_new
        p = p_new
    raise OracleError("Riccati iteration did not converge")


@dataclass(frozen=True)
class LqrSolution:
    gain: np.ndarray          # u* = -gain @ x + offset
    offset: np.ndarray
    mean: np.ndarray          # stationary mean of the controlled process
    covariance: np.ndarray    # stationary state covariance

    @property
    def variance(self) -> float:
        """Per-axis stationary variance, averaged over the two axes."""
        return float(np.diag(self.covariance).mean())


def lqr_analytic(spec, tol: float = 1e-12, max_iter: int = 10 ** 5) -> LqrSolution:
    """Stationary optimum of the lqr environment's own reward convention.

    The per-step cost is (x' - target)^T Q (x' - target) + 0.5*eta*|u|^2
    charged at the arrival state, discounted by gamma.  The affine value
    recursion V(x) = x^T P x - 2 s^T x + c is iterated to its fixed point;
    the controlled process x' = F x + g + sigma*noise then gives the
    stationary mean (I-F)^{-1} g and the Lyapunov covariance.
    """
    if spec.kind != "lqr":
        raise OracleError("lqr_analytic needs an lqr environment")
    q = spec.lqr.q_matrix
    r = spec.r_matrix
    a_mat = spec.a * np.eye(2)
    b_mat = spec.b * np.eye(2)
    alpha = np.asarray(spec.lqr.target)
    gamma = spec.gamma
    sigma = spec.sigma1 * spec.sigma_eps

    p = np.zeros((2, 2))
    s = np.zeros(2)
    for _ in range(max_iter):
        qp = q + gamma * p
        m = r + 2.0 * b_mat.T @ qp @ b_mat
        try:
            k_gain = 2.0 * np.linalg.solve(m, b_mat.T @ qp @ a_mat)
            k0 = 2.0 * np.linalg.solve(m, b_mat.T @ (q @ alpha + gamma * s))
        except np.linalg.LinAlgError:
            raise OracleError("non-stabilizable configuration: singular control weight")
        f = a_mat - b_mat @ k_gain
        g = b_mat @ k0
        p_new = f.T @ qp @ f + 0.5 * k_gain.T @ r @ k_gain
        p_new = 0.5 * (p_new + p_new.T)
        s_new = f.T @ (q @ (alpha - g) - gamma * p @ g + gamma * s) + 0.5 * k_gain.T @ r @ k0
        if max(np.abs(p_new - p).max(), np.abs(s_new - s).max()) < tol:
            p, s = p_new, s_new
            break
        p, s = p_new, s_new
    else:
        raise OracleError("Riccati iteration did not converge")

    if np.abs(np.linalg.eigvals(f)).max() >= 1.0:
        raise OracleError("non-stabilizable configuration")
    mean = np.linalg.solve(np.eye(2) - f, g)
    lyap = np.linalg.solve(np.eye(4) - np.kron(f, f), (sigma ** 2 * np.eye(2)).ravel())
    return LqrSolution(k_gain, k0, mean, lyap.reshape(2, 2))
