"""Forward noising and deterministic probability-flow sampling.

The sampler integrates dx/dsigma = (x - D(x, sigma)) / sigma down the
schedule with Heun's predictor-corrector steps (two denoiser calls per
step) and a plain Euler step for the final descent to sigma = 0, where the
denoiser is undefined.
"""

import csv
from dataclasses import dataclass

import numpy as np

from ._validation import as_points, check_sigma


class NumericDivergenceError(RuntimeError):
    """A trajectory produced a non-finite state."""

    def __init__(self, sigma):
        super().__init__(f"non-finite trajectory state at sigma={sigma}")
        self.sigma = sigma


@dataclass
class Trajectory:
    """States (sigma_i, x_i) recorded at every schedule level, last at sigma=0."""

    sigmas: np.ndarray
    states: np.ndarray
    seed: int

    @property
    def endpoint(self):
        return self.states[-1]


def forward_noise(y, sigma, seed):
    """y + sigma * eta with eta a seeded standard-normal draw."""
    sigma = check_sigma(sigma, allow_zero=True)
    y = np.asarray(y, dtype=np.float64)
    eta = np.random.default_rng(seed).standard_normal(y.shape)
    return y + sigma * eta


def noise_draws(n_points, n_draws, dim, seed, antithetic=True):
    """Seeded (n_points, n_draws, dim) standard-normal block.

    With antithetic=True, draws come in (eta, -eta) pairs interleaved along
    the draw axis, which halves the variance of symmetric statistics.
    """
    rng = np.random.default_rng(seed)
    if not antithetic:
        return rng.standard_normal((n_points, n_draws, dim))
    half = (n_draws + 1) // 2
    base = rng.standard_normal((n_points, half, dim))
    eta = np.empty((n_points, 2 * half, dim))
    eta[:, 0::2, :] = base
    eta[:, 1::2, :] = -base
    return eta[:, :n_draws, :]


def initial_states(schedule, seeds, dim):
    """sigma_max * eta starting points, one per seed, each from its own stream."""
    return np.stack([
        schedule.sigma_max * np.random.default_rng(int(s)).standard_normal(dim)
        for s in np.atleast_1d(seeds)
    ])


def _heun_states(denoiser, schedule, x0):
    """Integrate a batch of states down the schedule; returns (levels, batch, dim)."""
    levels = schedule.levels
    states = np.empty((len(levels),) + x0.shape)
    states[0] = x0
    x = x0
    for i in range(len(levels) - 1):
        s_cur, s_next = levels[i], levels[i + 1]
        d_cur = (x - denoiser.predict(x, s_cur)) / s_cur
        x_next = x + (s_next - s_cur) * d_cur
        if not np.all(np.isfinite(x_next)):
            raise NumericDivergenceError(s_next)
        if s_next > 0.0:
            d_next = (x_next - denoiser.predict(x_next, s_next)) / s_next
            x_next = x + (s_next - s_cur) * 0.5 * (d_cur + d_next)
            if not np.all(np.isfinite(x_next)):
                raise NumericDivergenceError(s_next)
        states[i + 1] = x_next
        x = x_next
    return states


def heun_sample(denoiser, schedule, seed, dim=2):
    """One deterministic denoising trajectory from sigma_max down to 0."""
    x0 = initial_states(schedule, [seed], dim)
    states = _heun_states(denoiser, schedule, x0)
    return Trajectory(schedule.levels.copy(), states[:, 0, :], int(seed))


def sample_endpoints(denoiser, schedule, seeds, dim=2):
    """Endpoints of many trajectories, integrated as one batch."""
    x0 = initial_states(schedule, seeds, dim)
    return _heun_states(denoiser, schedule, x0)[-1]


def snap_stop_sigma(schedule, stop_sigma):
    """Nearest positive schedule level; ties resolve toward the larger sigma."""
    stop_sigma = check_sigma(stop_sigma)
    sigmas = schedule.sigmas
    idx = int(np.argmin(np.abs(sigmas - stop_sigma)))  # first minimum = larger level
    return idx, float(sigmas[idx])


def truncated_inference(denoiser, schedule, seed, stop_sigma, dim=2):
    """Run the sampler down to stop_sigma, then jump to 0 with one prediction."""
    return truncated_endpoints(denoiser, schedule, [seed], stop_sigma, dim)[0]


def truncated_endpoints(denoiser, schedule, seeds, stop_sigma, dim=2):
    """Batched truncated inference: Heun to the snapped level, one-step predict."""
    idx, sigma_stop = snap_stop_sigma(schedule, stop_sigma)
    x0 = initial_states(schedule, seeds, dim)
    x = _heun_partial(denoiser, schedule.sigmas[:idx + 1], x0) if idx > 0 else x0
    return denoiser.predict(x, sigma_stop)


def _heun_partial(denoiser, sigmas, x0):
    """Heun steps over positive levels only (every step keeps the correction)."""
    x = x0
    for i in range(len(sigmas) - 1):
        s_cur, s_next = sigmas[i], sigmas[i + 1]
        d_cur = (x - denoiser.predict(x, s_cur)) / s_cur
        x_next = x + (s_next - s_cur) * d_cur
        if not np.all(np.isfinite(x_next)):
            raise NumericDivergenceError(s_next)
        d_next = (x_next - denoiser.predict(x_next, s_next)) / s_next
        x_next = x + (s_next - s_cur) * 0.5 * (d_cur + d_next)
        if not np.all(np.isfinite(x_next)):
            raise NumericDivergenceError(s_next)
        x = x_next
    return x


def memorization_check(denoiser, schedule, n_seeds, reference_points, tol):
    """Fraction of trajectory endpoints within tol of some reference point."""
    reference_points = as_points(reference_points, "reference_points")
    ends = sample_endpoints(denoiser, schedule, np.arange(int(n_seeds)),
                            dim=reference_points.shape[1])
    diff = ends[:, None, :] - reference_points[None, :, :]
    dmin = np.sqrt(np.sum(diff * diff, axis=-1)).min(axis=1)
    return float(np.mean(dmin <= tol))


def save_trajectories_csv(trajectories, path):
    """Rows (seed, step, sigma, x0..x{d-1}) for flow-line plotting."""
    if not trajectories:
        raise ValueError("no trajectories to write")
    d = trajectories[0].states.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "step", "sigma"] + [f"x{i}" for i in range(d)])
        for tr in trajectories:
            for step, (sigma, state) in enumerate(zip(tr.sigmas, tr.states)):
                writer.writerow([tr.seed, step, repr(float(sigma))]
                                + [repr(float(v)) for v in state])
