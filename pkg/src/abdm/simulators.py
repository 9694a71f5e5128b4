"""Priors and forward simulators for the five benchmark tasks.

Every simulator is a pure function of (parameters, seed). The deterministic
part of each model (`toy_mean`, `sir_trajectory`, ...) is exposed separately
from the noisy entry points so that reference posteriors can re-evaluate the
noise-free forward model on grids.

A module-level counter records every forward-model evaluation; after
training, the decision algorithms must never increment it (amortization),
which the test suite asserts.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import AbdmError, Dataset, TaskId, split_seed

_SIM_CALLS = 0


def record_simulations(n: int) -> None:
    global _SIM_CALLS
    _SIM_CALLS += int(n)


def simulation_calls() -> int:
    """Total forward-model evaluations since the last reset."""
    return _SIM_CALLS


def reset_simulation_calls() -> None:
    global _SIM_CALLS
    _SIM_CALLS = 0


class SimulationError(AbdmError):
    """Raised on trajectory blow-up or invalid simulator inputs."""


# ---------------------------------------------------------------------------
# Task specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToySpec:
    prior_lo: float = 0.0
    prior_hi: float = 5.0
    noise_std: float = 10.0


@dataclass(frozen=True)
class LinearGaussianSpec:
    dim: int = 10
    likelihood_var: float = 0.1  # observation noise covariance is var * I


@dataclass(frozen=True)
class SIRSpec:
    n_pop: float = 1e6
    i0: float = 1.0
    horizon: float = 160.0  # days
    n_obs: int = 10
    dt: float = 0.1
    obs_noise_std: float = 0.01  # on I/N, clipped to [0, 1]
    beta_log_mean: float = float(np.log(0.4))
    beta_log_std: float = 0.5
    gamma_log_mean: float = float(np.log(0.125))
    gamma_log_std: float = 0.2


@dataclass(frozen=True)
class LVSpec:
    log_means: tuple = (-0.125, -3.0, -0.125, -3.0)
    log_std: float = 0.5
    x0: float = 30.0
    y0: float = 1.0
    horizon: float = 20.0
    n_obs: int = 10
    dt: float = 0.01
    noise_scale: float = 0.1  # lognormal scale on each reading
    blowup_limit: float = 1e6


@dataclass(frozen=True)
class EpileptorSpec:
    i_ext: float = 3.1
    dt: float = 0.05
    n_steps: int = 2000
    obs_noise_std: float = 0.1
    eta_lo: float = -5.0
    eta_hi: float = -1.0
    tau_lo: float = 10.0
    tau_hi: float = 50.0
    x_init_lo: float = -2.5
    x_init_hi: float = -1.5
    z_init_lo: float = 2.5
    z_init_hi: float = 4.0


@dataclass(frozen=True)
class EpileptorParams:
    eta: float
    tau: float
    x_init: float
    z_init: float

    def as_array(self) -> np.ndarray:
        return np.array([self.eta, self.tau, self.x_init, self.z_init])


TOY_SPEC = ToySpec()
LG_SPEC = LinearGaussianSpec()
SIR_SPEC = SIRSpec()
LV_SPEC = LVSpec()
EPILEPTOR_SPEC = EpileptorSpec()

# Excitability thresholds separating the three zones.
ETA_EZ = -2.05
ETA_PZ = -3.05


class Zone(Enum):
    HZ = 0
    PZ = 1
    EZ = 2


def classify_zone(eta: float) -> Zone:
    """Map excitability to its zone: EZ above -2.05, HZ at or below -3.05."""
    if not np.isfinite(eta):
        raise ValueError("eta must be finite")
    if eta > ETA_EZ:
        return Zone.EZ
    if eta > ETA_PZ:
        return Zone.PZ
    return Zone.HZ


def classify_zone_batch(eta: np.ndarray) -> np.ndarray:
    """Vectorized zone indices (0=HZ, 1=PZ, 2=EZ)."""
    eta = np.asarray(eta)
    return np.where(eta > ETA_EZ, 2, np.where(eta > ETA_PZ, 1, 0))


# ---------------------------------------------------------------------------
# Deterministic forward models
# ---------------------------------------------------------------------------


def toy_mean(theta):
    """Noise-free toy response 50 + 0.5*theta*(5-theta)^4; vectorized."""
    theta = np.asarray(theta, dtype=float)
    record_simulations(theta.size)
    return 50.0 + 0.5 * theta * (5.0 - theta) ** 4


def _rk4(rhs, state: np.ndarray, dt: float, n_steps: int, obs_steps, collect):
    """Fixed-step RK4; calls `collect(k, state)` after each step in obs_steps."""
    obs_set = set(int(k) for k in obs_steps)
    for k in range(1, n_steps + 1):
        k1 = rhs(state)
        k2 = rhs(state + 0.5 * dt * k1)
        k3 = rhs(state + 0.5 * dt * k2)
        k4 = rhs(state + dt * k3)
        state = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if k in obs_set:
            collect(k, state)
    return state


def _sir_integrate(beta: np.ndarray, gamma: np.ndarray, spec: SIRSpec) -> np.ndarray:
    """Batched SIR integration; returns infected fraction I/N at the
    n_obs evenly spaced observation times (t_k = k * horizon / n_obs)."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    m = beta.shape[0]
    record_simulations(m)
    n_steps = int(round(spec.horizon / spec.dt))
    stride = n_steps // spec.n_obs
    obs_steps = [stride * (k + 1) for k in range(spec.n_obs)]
    n = spec.n_pop

    def rhs(s):
        S, I = s[:, 0], s[:, 1]
        inf = beta * S * I / n
        rec = gamma * I
        return np.stack([-inf, inf - rec, rec], axis=1)

    state = np.zeros((m, 3))
    state[:, 0] = n - spec.i0
    state[:, 1] = spec.i0
    out = np.empty((m, spec.n_obs))
    slot = {k: j for j, k in enumerate(obs_steps)}

    def collect(k, s):
        out[:, slot[k]] = s[:, 1] / n

    _rk4(rhs, state, spec.dt, n_steps, obs_steps, collect)
    return out


def sir_trajectory(beta: float, gamma: float, spec: SIRSpec = SIR_SPEC) -> np.ndarray:
    """Noise-free infected fractions at the 10 observation times."""
    if beta < 0 or gamma <= 0:
        raise SimulationError("SIR rates must be positive (beta may be zero)")
    return _sir_integrate(np.array([beta]), np.array([gamma]), spec)[0]


def sir_states(beta: float, gamma: float, spec: SIRSpec = SIR_SPEC) -> np.ndarray:
    """(S, I, R) at every integration step, for invariant checks."""
    record_simulations(1)
    n_steps = int(round(spec.horizon / spec.dt))
    n = spec.n_pop
    state = np.array([n - spec.i0, spec.i0, 0.0])
    out = np.empty((n_steps + 1, 3))
    out[0] = state

    def rhs(s):
        inf = beta * s[0] * s[1] / n
        rec = gamma * s[1]
        return np.array([-inf, inf - rec, rec])

    def collect(k, s):
        out[k] = s

    _rk4(rhs, state, spec.dt, n_steps, range(1, n_steps + 1), collect)
    return out


def _lv_integrate(rates: np.ndarray, spec: LVSpec) -> tuple[np.ndarray, np.ndarray]:
    """Batched Lotka-Volterra integration.

    Returns (obs, valid): obs has both species at the n_obs observation
    times as [prey block, predator block]; valid flags trajectories that
    stayed finite, positive, and below the blow-up limit throughout.
    """
    rates = np.atleast_2d(np.asarray(rates, dtype=float))
    m = rates.shape[0]
    record_simulations(m)
    a, b, g, d = rates[:, 0], rates[:, 1], rates[:, 2], rates[:, 3]
    n_steps = int(round(spec.horizon / spec.dt))
    stride = n_steps // spec.n_obs
    obs_steps = [stride * (k + 1) for k in range(spec.n_obs)]

    state = np.empty((m, 2))
    state[:, 0] = spec.x0
    state[:, 1] = spec.y0
    ok = np.ones(m, dtype=bool)
    out = np.empty((m, 2 * spec.n_obs))
    slot = {k: j for j, k in enumerate(obs_steps)}

    def rhs(s):
        X, Y = s[:, 0], s[:, 1]
        return np.stack([a * X - b * X * Y, -g * Y + d * X * Y], axis=1)

    obs_set = set(obs_steps)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, n_steps + 1):
            k1 = rhs(state)
            k2 = rhs(state + 0.5 * spec.dt * k1)
            k3 = rhs(state + 0.5 * spec.dt * k2)
            k4 = rhs(state + spec.dt * k3)
            state = state + (spec.dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            bad = (
                ~np.all(np.isfinite(state), axis=1)
                | np.any(state <= 0.0, axis=1)
                | np.any(state > spec.blowup_limit, axis=1)
            )
            ok &= ~bad
            # Park broken trajectories at a benign value so the remaining
            # batch keeps integrating without NaN contamination.
            state[~ok] = 1.0
            if k in obs_set:
                j = slot[k]
                out[:, j] = state[:, 0]
                out[:, spec.n_obs + j] = state[:, 1]
    return out, ok


def lv_trajectory(rates, spec: LVSpec = LV_SPEC) -> np.ndarray:
    """Noise-free species counts at the observation times; raises on blow-up.

    Zero rates are allowed here (they decouple the system, which the tests
    exploit); the stochastic simulator restricts to the positive prior
    support.
    """
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (4,):
        raise ValueError("expected 4 rates (alpha, beta, gamma, delta)")
    if np.any(rates < 0):
        raise SimulationError("Lotka-Volterra rates must be non-negative")
    obs, ok = _lv_integrate(rates[None, :], spec)
    if not ok[0]:
        raise SimulationError("Lotka-Volterra trajectory blow-up")
    return obs[0]


def lv_states(rates, spec: LVSpec = LV_SPEC) -> np.ndarray:
    """(X, Y) at every integration step, for first-integral checks."""
    rates = np.asarray(rates, dtype=float)
    a, b, g, d = rates
    record_simulations(1)
    n_steps = int(round(spec.horizon / spec.dt))
    state = np.array([spec.x0, spec.y0])
    out = np.empty((n_steps + 1, 2))
    out[0] = state

    def rhs(s):
        return np.array([a * s[0] - b * s[0] * s[1], -g * s[1] + d * s[0] * s[1]])

    def collect(k, s):
        out[k] = s

    _rk4(rhs, state, spec.dt, n_steps, range(1, n_steps + 1), collect)
    return out


def _epileptor_integrate(
    params: np.ndarray, spec: EpileptorSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Batched Euler integration of the two-state epileptor.

    dx/dt = 1 - x^3 - 2x^2 - z + I_ext
    dz/dt = (1/tau) * (4 (x - eta) - z)

    Returns (series, valid) where series holds the x trajectory.
    """
    params = np.atleast_2d(np.asarray(params, dtype=float))
    m = params.shape[0]
    record_simulations(m)
    eta, tau, x, z = params[:, 0], params[:, 1], params[:, 2].copy(), params[:, 3].copy()
    series = np.empty((m, spec.n_steps))
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(spec.n_steps):
            dx = 1.0 - x**3 - 2.0 * x**2 - z + spec.i_ext
            dz = (4.0 * (x - eta) - z) / tau
            x = x + spec.dt * dx
            z = z + spec.dt * dz
            series[:, k] = x
    valid = np.all(np.isfinite(series), axis=1) & (np.max(np.abs(series), axis=1) < 1e6)
    return series, valid


def epileptor_trajectory(params, spec: EpileptorSpec = EPILEPTOR_SPEC) -> np.ndarray:
    """Noise-free x series; raises if the integration overflows."""
    arr = params.as_array() if isinstance(params, EpileptorParams) else np.asarray(params, float)
    series, valid = _epileptor_integrate(arr[None, :], spec)
    if not valid[0]:
        raise SimulationError("epileptor integration diverged")
    return series[0]


# ---------------------------------------------------------------------------
# Stochastic simulators (pure functions of (theta, seed))
# ---------------------------------------------------------------------------


def simulate_toy(theta: float, seed: int, spec: ToySpec = TOY_SPEC) -> float:
    if not spec.prior_lo <= theta <= spec.prior_hi:
        raise ValueError(f"theta {theta} outside prior support [{spec.prior_lo}, {spec.prior_hi}]")
    rng = np.random.default_rng(seed)
    return float(toy_mean(theta) + rng.normal(0.0, spec.noise_std))


def simulate_linear_gaussian(theta, seed: int, spec: LinearGaussianSpec = LG_SPEC) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.dim,) or not np.all(np.isfinite(theta)):
        raise ValueError(f"theta must be a finite {spec.dim}-vector")
    record_simulations(1)
    rng = np.random.default_rng(seed)
    return theta + np.sqrt(spec.likelihood_var) * rng.standard_normal(spec.dim)


def simulate_sir(beta: float, gamma: float, seed: int, spec: SIRSpec = SIR_SPEC) -> np.ndarray:
    if beta <= 0 or gamma <= 0:
        raise SimulationError("SIR rates must be positive")
    rng = np.random.default_rng(seed)
    frac = sir_trajectory(beta, gamma, spec)
    return np.clip(frac + rng.normal(0.0, spec.obs_noise_std, spec.n_obs), 0.0, 1.0)


def simulate_lotka_volterra(rates, seed: int, spec: LVSpec = LV_SPEC) -> np.ndarray:
    if np.any(np.asarray(rates, dtype=float) <= 0):
        raise SimulationError("Lotka-Volterra rates must be positive")
    rng = np.random.default_rng(seed)
    traj = lv_trajectory(rates, spec)
    return traj * np.exp(spec.noise_scale * rng.standard_normal(2 * spec.n_obs))


def simulate_epileptor(params, seed: int, spec: EpileptorSpec = EPILEPTOR_SPEC) -> np.ndarray:
    """Noisy x time series of the two-state epileptor."""
    rng = np.random.default_rng(seed)
    series = epileptor_trajectory(params, spec)
    return series + rng.normal(0.0, spec.obs_noise_std, spec.n_steps)


# ---------------------------------------------------------------------------
# Summary statistics for the epileptor series
# ---------------------------------------------------------------------------

N_EPILEPTOR_SUMMARIES = 10


def _summarize_batch(series: np.ndarray) -> np.ndarray:
    s = np.atleast_2d(np.asarray(series, dtype=float))
    n, t = s.shape
    mu = s.mean(axis=1)
    med = np.median(s, axis=1)
    centered = s - mu[:, None]
    m2 = np.mean(centered**2, axis=1)
    std = np.sqrt(m2)
    safe = np.where(std > 1e-12, std, 1.0)
    skew = np.where(std > 1e-12, np.mean(centered**3, axis=1) / safe**3, 0.0)
    kurt = np.where(std > 1e-12, np.mean(centered**4, axis=1) / safe**4 - 3.0, 0.0)
    m6 = np.where(std > 1e-12, np.mean(centered**6, axis=1) / safe**6, 0.0)

    # Mean power envelope: moving RMS with window length t // 32.
    w = t // 32
    cs = np.cumsum(s**2, axis=1)
    win = np.empty((n, t - w + 1))
    win[:, 0] = cs[:, w - 1]
    win[:, 1:] = cs[:, w:] - cs[:, :-w]
    envelope = np.sqrt(np.maximum(win / w, 0.0)).mean(axis=1)

    # Seizure onset: first index where x > 0, as a fraction of the length;
    # sentinel 1.0 when the series never crosses zero.
    above = s > 0.0
    has = above.any(axis=1)
    onset = np.where(has, np.argmax(above, axis=1) / t, 1.0)

    ptp = s.max(axis=1) - s.min(axis=1)

    spec_pow = np.abs(np.fft.rfft(s, axis=1)) ** 2 / t
    dominant = spec_pow[:, 1:].max(axis=1) if spec_pow.shape[1] > 1 else np.zeros(n)

    return np.stack(
        [mu, med, std, skew, kurt, m6, envelope, onset, ptp, dominant], axis=1
    )


def summarize_epileptor(series: np.ndarray) -> np.ndarray:
    """Ten fixed, time-independent statistics of an epileptor series.

    Order: mean, median, std, skewness, excess kurtosis, 6th standardized
    moment, mean power envelope (moving RMS, window = length // 32), seizure
    onset fraction (sentinel 1.0 if x never exceeds 0), peak-to-peak
    amplitude, and the dominant spectral power max_k |F_k|^2 / n over the
    non-zero DFT bins. Standardized moments are 0 for constant series.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim != 1 or series.size < 64:
        raise ValueError("series must be 1-D with at least 64 samples")
    return _summarize_batch(series[None, :])[0]


# ---------------------------------------------------------------------------
# Priors and dataset generation
# ---------------------------------------------------------------------------


def sample_prior(task: TaskId, rng: np.random.Generator) -> np.ndarray:
    """One draw from the task prior, as a theta_dim vector."""
    if task is TaskId.TOY:
        return np.array([rng.uniform(TOY_SPEC.prior_lo, TOY_SPEC.prior_hi)])
    if task is TaskId.LINEAR_GAUSSIAN:
        return rng.standard_normal(LG_SPEC.dim)
    if task is TaskId.SIR:
        return np.exp(
            np.array([SIR_SPEC.beta_log_mean, SIR_SPEC.gamma_log_mean])
            + np.array([SIR_SPEC.beta_log_std, SIR_SPEC.gamma_log_std])
            * rng.standard_normal(2)
        )
    if task is TaskId.LOTKA_VOLTERRA:
        return np.exp(np.array(LV_SPEC.log_means) + LV_SPEC.log_std * rng.standard_normal(4))
    if task is TaskId.BVEP:
        e = EPILEPTOR_SPEC
        return np.array(
            [
                rng.uniform(e.eta_lo, e.eta_hi),
                rng.uniform(e.tau_lo, e.tau_hi),
                rng.uniform(e.x_init_lo, e.x_init_hi),
                rng.uniform(e.z_init_lo, e.z_init_hi),
            ]
        )
    raise ValueError(f"unknown task {task}")


def project_to_support(task: TaskId, thetas: np.ndarray) -> np.ndarray:
    """Project a batch of parameters onto the task's prior support.

    Density estimators have unbounded support, so a small fraction of their
    samples can leak outside the prior; cost functions are only defined on
    the support, so decision scoring clips the leakage back.
    """
    thetas = np.asarray(thetas, dtype=float)
    if task is TaskId.TOY:
        return np.clip(thetas, TOY_SPEC.prior_lo, TOY_SPEC.prior_hi)
    if task in (TaskId.SIR, TaskId.LOTKA_VOLTERRA):
        return np.maximum(thetas, 1e-9)
    return thetas


def in_prior_support(task: TaskId, theta: np.ndarray) -> bool:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (task.theta_dim,) or not np.all(np.isfinite(theta)):
        return False
    if task is TaskId.TOY:
        return bool(TOY_SPEC.prior_lo <= theta[0] <= TOY_SPEC.prior_hi)
    if task is TaskId.LINEAR_GAUSSIAN:
        return True
    if task in (TaskId.SIR, TaskId.LOTKA_VOLTERRA):
        return bool(np.all(theta > 0))
    e = EPILEPTOR_SPEC
    lo = np.array([e.eta_lo, e.tau_lo, e.x_init_lo, e.z_init_lo])
    hi = np.array([e.eta_hi, e.tau_hi, e.x_init_hi, e.z_init_hi])
    return bool(np.all(theta >= lo) & np.all(theta <= hi))


_MAX_REDRAWS = 100


def generate_dataset(task: TaskId, n: int, master_seed: int) -> Dataset:
    """Simulate n prior-predictive pairs, seeded per index.

    Pair i consumes only the stream derived from split_seed(master_seed, i):
    first the prior draw, then the observation noise (redrawing the prior on
    Lotka-Volterra blow-ups). Generation is therefore order-independent and
    reproducible bit-for-bit.
    """
    rngs = [np.random.default_rng(split_seed(master_seed, i)) for i in range(n)]
    thetas = np.empty((n, task.theta_dim))
    xs = np.empty((n, task.x_dim))

    if task is TaskId.TOY:
        for i, rng in enumerate(rngs):
            thetas[i] = sample_prior(task, rng)
        means = toy_mean(thetas[:, 0])
        for i, rng in enumerate(rngs):
            xs[i, 0] = means[i] + rng.normal(0.0, TOY_SPEC.noise_std)

    elif task is TaskId.LINEAR_GAUSSIAN:
        record_simulations(n)
        for i, rng in enumerate(rngs):
            thetas[i] = sample_prior(task, rng)
            xs[i] = thetas[i] + np.sqrt(LG_SPEC.likelihood_var) * rng.standard_normal(
                LG_SPEC.dim
            )

    elif task is TaskId.SIR:
        for i, rng in enumerate(rngs):
            thetas[i] = sample_prior(task, rng)
        frac = _sir_integrate(thetas[:, 0], thetas[:, 1], SIR_SPEC)
        for i, rng in enumerate(rngs):
            noise = rng.normal(0.0, SIR_SPEC.obs_noise_std, SIR_SPEC.n_obs)
            xs[i] = np.clip(frac[i] + noise, 0.0, 1.0)

    elif task is TaskId.LOTKA_VOLTERRA:
        todo = list(range(n))
        attempts = np.zeros(n, dtype=int)
        while todo:
            for i in todo:
                thetas[i] = sample_prior(task, rngs[i])
            obs, ok = _lv_integrate(thetas[todo], LV_SPEC)
            still = []
            for j, i in enumerate(todo):
                if ok[j]:
                    noise = rngs[i].standard_normal(2 * LV_SPEC.n_obs)
                    xs[i] = obs[j] * np.exp(LV_SPEC.noise_scale * noise)
                else:
                    attempts[i] += 1
                    if attempts[i] > _MAX_REDRAWS:
                        raise SimulationError(
                            f"pair {i}: {_MAX_REDRAWS} consecutive blow-ups"
                        )
                    still.append(i)
            todo = still

    elif task is TaskId.BVEP:
        for i, rng in enumerate(rngs):
            thetas[i] = sample_prior(task, rng)
        series, valid = _epileptor_integrate(thetas, EPILEPTOR_SPEC)
        if not np.all(valid):
            raise SimulationError("epileptor integration diverged inside the prior box")
        noisy = np.empty_like(series)
        for i, rng in enumerate(rngs):
            noisy[i] = series[i] + rng.normal(
                0.0, EPILEPTOR_SPEC.obs_noise_std, EPILEPTOR_SPEC.n_steps
            )
        xs[:] = _summarize_batch(noisy)

    else:
        raise ValueError(f"unknown task {task}")

    return Dataset(task, thetas, xs, master_seed)
