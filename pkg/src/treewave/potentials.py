"""Super-Gaussian potential families and their variational representations.

Each potential is a normalized even density t(s) whose negative log admits
a Gaussian-envelope form

    -2 log t(s) = min_{gamma >= 0}  s^2 / gamma + h(gamma),

so the prior can be relaxed to a Gaussian of per-coefficient variance
gamma.  Three families are provided:

  * Laplace(tau):      t(s) = (tau/2) exp(-tau |s|)
  * Gaussian(xi):      t(s) = N(s | 0, 1/xi)
  * StudentT(tau, nu): t(s) propto (1 + (tau/nu) s^2)^{-(nu+1)/2}

Normalization constants are carried exactly; hyperparameter updates depend
on the log tau / log xi terms, and bound values must be comparable across
hyperparameter settings.

The Student's t dual h(gamma) is not convex.  It splits into
h_convex(gamma) = nu/(tau*gamma) + C and h_concave(gamma) = (nu+1) log gamma;
the concave part is replaced by a tangent line with slope e > 0, giving a
convex surrogate penalty that majorizes -2 log t(s) and touches it at the
refit point.

All evaluation methods accept scalars or numpy arrays elementwise.
"""

import math

import numpy as np

# Laplace gamma_min degenerates to 0 at s = 0; clamp so 1/gamma stays finite.
GAMMA_FLOOR = 1e-12


def _validate_positive(name, value):
    if not np.all(np.asarray(value) > 0):
        raise ValueError(f"{name} must be strictly positive, got {value}")


class Laplace:
    """Laplace potential with rate tau: t(s) = (tau/2) exp(-tau|s|)."""

    kind = "laplace"

    def __init__(self, tau: float):
        _validate_positive("tau", tau)
        self.tau = float(tau)
        # -2 log of the normalizer tau/2
        self.const = -2.0 * math.log(self.tau / 2.0)

    def neg2_log(self, s):
        return 2.0 * self.tau * np.abs(s) + self.const

    def gamma_min(self, s):
        return np.maximum(np.abs(s) / self.tau, GAMMA_FLOOR)

    def h_dual(self, gamma):
        gamma = np.asarray(gamma, dtype=np.float64)
        if np.any(gamma <= 0):
            raise ValueError("gamma must be positive")
        return self.tau**2 * gamma + self.const

    def value_and_slope(self, p):
        p = np.asarray(p, dtype=np.float64)
        if np.any(p <= 0):
            raise ValueError("p must be positive")
        return 2.0 * self.tau * p + self.const, np.broadcast_to(
            2.0 * self.tau, p.shape
        ).copy()


class Gaussian:
    """Gaussian potential with precision xi: t(s) = N(s | 0, 1/xi)."""

    kind = "gaussian"

    def __init__(self, xi: float):
        _validate_positive("xi", xi)
        self.xi = float(xi)
        self.const = -math.log(self.xi) + math.log(2.0 * math.pi)

    def neg2_log(self, s):
        return self.xi * np.square(s) + self.const

    def gamma_min(self, s):
        s = np.asarray(s, dtype=np.float64)
        return np.full(s.shape, 1.0 / self.xi)

    def h_dual(self, gamma):
        # True concave conjugate: finite (and flat) for gamma <= 1/xi,
        # +inf beyond, so the envelope min lands exactly at gamma = 1/xi.
        gamma = np.asarray(gamma, dtype=np.float64)
        if np.any(gamma <= 0):
            raise ValueError("gamma must be positive")
        return np.where(gamma <= (1.0 / self.xi) * (1.0 + 1e-12), self.const, np.inf)

    def value_and_slope(self, p):
        p = np.asarray(p, dtype=np.float64)
        if np.any(p <= 0):
            raise ValueError("p must be positive")
        return self.xi * np.square(p) + self.const, 2.0 * self.xi * p


class StudentT:
    """Student's t potential with scale precision tau and shape nu > 2."""

    kind = "studentt"

    def __init__(self, tau: float, nu: float):
        _validate_positive("tau", tau)
        if nu <= 2.0:
            raise ValueError(f"nu must exceed 2 for finite variance, got {nu}")
        self.tau = float(tau)
        self.nu = float(nu)
        # t(s) = exp(log_norm) * (1 + (tau/nu) s^2)^{-(nu+1)/2}, integral 1
        log_norm = (
            0.5 * math.log(self.tau)
            - 0.5 * math.log(math.pi * self.nu)
            + math.lgamma((self.nu + 1.0) / 2.0)
            - math.lgamma(self.nu / 2.0)
        )
        self.const = -2.0 * log_norm
        # additive constant of the dual, fixed by tightness of the envelope
        self.h_const = (
            self.const + (self.nu + 1.0) * math.log((self.nu + 1.0) * self.tau / self.nu)
            - (self.nu + 1.0)
        )

    def neg2_log(self, s):
        return (self.nu + 1.0) * np.log1p((self.tau / self.nu) * np.square(s)) + self.const

    def gamma_min(self, s):
        return (self.nu / self.tau + np.square(s)) / (self.nu + 1.0)

    def h_dual(self, gamma):
        return self.h_convex(gamma) + self.h_concave(gamma)

    def h_convex(self, gamma):
        gamma = np.asarray(gamma, dtype=np.float64)
        if np.any(gamma <= 0):
            raise ValueError("gamma must be positive")
        return self.nu / (self.tau * gamma) + self.h_const

    def h_concave(self, gamma):
        gamma = np.asarray(gamma, dtype=np.float64)
        if np.any(gamma <= 0):
            raise ValueError("gamma must be positive")
        return (self.nu + 1.0) * np.log(gamma)

    def refit_tangent(self, p):
        """Tangent slope e > 0 touching h_concave at gamma_min(p)."""
        p = np.asarray(p, dtype=np.float64)
        if np.any(p < 0):
            raise ValueError("p must be nonnegative")
        return (self.nu + 1.0) / self.gamma_min(p)

    def g_star_concave(self, e):
        """Fenchel offset of the tangent: h_concave(g) = min_e e*g - g_star(e)."""
        e = np.asarray(e, dtype=np.float64)
        if np.any(e <= 0):
            raise ValueError("e must be positive")
        nu1 = self.nu + 1.0
        return nu1 - nu1 * np.log(nu1 / e)

    def convexified_neg2_log(self, s, e):
        """Convex majorant of neg2_log at tangent slope e.

        Closed form of min_gamma s^2/gamma + h_convex(gamma) + e*gamma
        minus the tangent offset g_star_concave(e).
        """
        e = np.asarray(e, dtype=np.float64)
        if np.any(e <= 0):
            raise ValueError("e must be positive")
        return (
            2.0 * np.sqrt(e * (np.square(s) + self.nu / self.tau))
            + self.h_const
            - self.g_star_concave(e)
        )

    def value_and_slope(self, p):
        p = np.asarray(p, dtype=np.float64)
        if np.any(p <= 0):
            raise ValueError("p must be positive")
        ratio = (self.tau / self.nu) * np.square(p)
        value = (self.nu + 1.0) * np.log1p(ratio) + self.const
        slope = 2.0 * (self.nu + 1.0) * self.tau * p / (self.nu + self.tau * np.square(p))
        return value, slope

    def convexified_value_and_slope(self, p, e):
        p = np.asarray(p, dtype=np.float64)
        if np.any(p <= 0):
            raise ValueError("p must be positive")
        root = np.sqrt(e * (np.square(p) + self.nu / self.tau))
        value = 2.0 * root + self.h_const - self.g_star_concave(e)
        slope = 2.0 * np.asarray(e) * p / root
        return value, slope


def split_h(pot: StudentT):
    """Return (h_convex, h_concave) callables of a Student's t dual."""
    if not isinstance(pot, StudentT):
        raise TypeError(f"split_h applies to StudentT potentials, got {type(pot).__name__}")
    return pot.h_convex, pot.h_concave
