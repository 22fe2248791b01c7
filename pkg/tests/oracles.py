"""Independent reference computations, written without the package's code paths."""

import itertools
import math


def wasserstein_bruteforce(xs, ys, theta):
    """min over all pairings of ((1/N) sum |x_i - y_pi(i)|^theta)^(1/theta)."""
    n = len(xs)
    best = math.inf
    for perm in itertools.permutations(range(n)):
        cost = sum(abs(xs[i] - ys[perm[i]]) ** theta for i in range(n)) / n
        best = min(best, cost)
    return best ** (1.0 / theta)


def fbm_cov_scalar(s, t, H):
    return 0.5 * (s ** (2 * H) + t ** (2 * H) - abs(t - s) ** (2 * H))


def example_step_scalar(yk, ykm, yk1m, dt, dB):
    """One step of the example's particle recursion, written out per particle with plain floats."""
    n = len(yk)
    m = sum(yk) / n
    out = []
    for i in range(n):
        neutral_new = -0.5 * yk1m[i]
        neutral_old = -0.5 * ykm[i]
        drift = yk[i] + ykm[i] ** 2 + (yk[i] - m)
        out.append(neutral_new + yk[i] - neutral_old + drift * dt + (yk[i] - m) * dB[i])
    return out


def example_drift_only(x0, n_steps, delay_steps, dt):
    """Noise-free example recursion from constant segments; returns [t_0..t_M][particle]."""
    m = delay_steps
    hist = [list(x0) for _ in range(m + 1)]  # t_{-m}..t_0
    for _ in range(n_steps):
        yk, ykm, yk1m = hist[-1], hist[-1 - m], hist[-m]
        hist.append(example_step_scalar(yk, ykm, yk1m, dt, [0.0] * len(yk)))
    return hist[m:]


def telescoping_residual(model, out, increments):
    """max |(Y_k - D(Y_{k-m})) - (Y_0 - D(Y_{-m}) - sum_{j<k} [b_j dt + sigma_j dB_j])| over k, particles.

    Coefficients are re-evaluated from the stored states; the sum is a plain running total.
    """
    import numpy as np

    from nmvsde.measure import EmpiricalMeasure

    m = out.grid.delay_steps
    dt = out.grid.step
    states = out.states
    D = lambda v: np.asarray(model.neutral_map(v))  # noqa: E731
    lhs0 = states[m] - D(states[0])
    acc = np.zeros_like(lhs0)
    worst = 0.0
    for k in range(1, states.shape[0] - m):
        y, yd = states[m + k - 1], states[k - 1]
        mu = EmpiricalMeasure(y)
        sig = model.diffusion_matrix(y, mu)
        acc = acc + model.drift(y, yd, mu) * dt + np.einsum("nij,nj->ni", sig, increments[:, :, k - 1])
        lhs = states[m + k] - D(states[k])
        worst = max(worst, float(np.max(np.abs(lhs - (lhs0 + acc)))))
    return worst
