"""Independent reference implementations used to pin expected test values.

Everything here deliberately avoids the incremental code paths under test:
dense solves via explicit matrix inversion, closed-form Gaussian integrals,
and fully vectorized linear-Gaussian simulation for the one-dimensional
fixtures.
"""

import math

import numpy as np


def se_kernel_matrix(signal_variance, lengthscales, A, B):
    """Dense squared-exponential Gram matrix between point sets A (n,p), B (m,p)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    ls = np.asarray(lengthscales, dtype=float)
    d = (A[:, None, :] - B[None, :, :]) / ls
    return signal_variance * np.exp(-0.5 * np.sum(d * d, axis=2))


def dense_posterior(signal_variance, lengthscales, points, targets, noises, query):
    """GP posterior by explicit inversion of K + diag(noises).

    points: (n, p) projected inputs; targets: (n, dx); noises: (n,) per-row
    diagonal terms; query: (p,). Returns (mean (dx,), std scalar).
    """
    points = np.atleast_2d(points)
    targets = np.atleast_2d(targets)
    n = points.shape[0]
    if n == 0:
        return np.zeros(targets.shape[1] if targets.size else 1), math.sqrt(signal_variance)
    K = se_kernel_matrix(signal_variance, lengthscales, points, points)
    K[np.diag_indices(n)] += np.asarray(noises, dtype=float)
    Kinv = np.linalg.inv(K)
    kq = se_kernel_matrix(signal_variance, lengthscales, points, [query])[:, 0]
    mean = kq @ Kinv @ targets
    var = signal_variance - kq @ Kinv @ kq
    return mean, math.sqrt(max(var, 0.0))


def normal_cdf(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def interval_probability(bound, sigma):
    """P(|Z| <= bound) for Z ~ N(0, sigma^2)."""
    return normal_cdf(bound / sigma) - normal_cdf(-bound / sigma)


# ---------------------------------------------------------------------------
# Closed forms for the one-dimensional measure-then-control fixture:
# known dynamics x' = x + u, scalar unknown component under an SE prior with
# signal variance sf2 and lengthscale ell, measurement noise scale q (the
# regression/conditioning diagonal is q^2), controller u = -posterior_mean,
# one measurement at state-coordinate s, start at x0 = 0, constraint
# |x_1| <= bound at t = 1. All randomness is jointly Gaussian, so
# satisfaction has an erf closed form.
#
# Derivation (all conditioning uses the q^2 nugget):
#   measurement draw         g_m = sf * z1
#   observed residual        y   = g_m + q * z2
#   controller mean at x0    c * y            with c = sf2 * rho / (sf2 + q^2)
#   path draw at x0          c_g * g_m + sqrt(v0) * z3,
#                            c_g = c (same weight: the sampler conditions on
#                            g_m through the same nugget), and
#                            v0 = sf2 * (1 - rho^2 * sf2 / (sf2 + q^2))
#   x1 = -c*y + path draw + q * z4, so the g_m terms cancel exactly.
# ---------------------------------------------------------------------------

def fixture_state_coeffs(s, sf2=1.0, ell=0.5, q=0.1, noise_var=None):
    """Coefficients of x_1 as a linear map of the four standard normals.

    Order: (zeta_meas_fn, zeta_meas_noise, zeta_traj_fn, zeta_traj_noise).
    """
    if noise_var is None:
        noise_var = q * q
    sf = math.sqrt(sf2)
    rho = math.exp(-(s * s) / (2.0 * ell * ell))
    c = sf2 * rho / (sf2 + noise_var)  # posterior-mean weight on the residual
    coeff_fn_meas = 0.0
    coeff_noise_meas = -c * q
    v0 = sf2 * (1.0 - rho * rho * sf2 / (sf2 + noise_var))
    coeff_fn_traj = math.sqrt(max(v0, 0.0))
    coeff_noise_traj = q
    return coeff_fn_meas, coeff_noise_meas, coeff_fn_traj, coeff_noise_traj


def fixture_true_satisfaction(s, bound=0.5, **kw):
    """Exact P(|x_1| <= bound) for the 1-d fixture with one measurement at s."""
    coeffs = fixture_state_coeffs(s, **kw)
    sigma = math.sqrt(sum(c * c for c in coeffs))
    return interval_probability(bound, sigma)


def fixture_mc_satisfaction(s, draws, bound=0.5, **kw):
    """Monte-Carlo estimate of the same probability from pre-drawn normals.

    draws: (m, 4) standard normals, reused across candidate locations so the
    oracle itself is a common-random-number estimator.
    """
    coeffs = np.asarray(fixture_state_coeffs(s, **kw))
    x1 = draws @ coeffs
    return float(np.mean(np.abs(x1) <= bound))
