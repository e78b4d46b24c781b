"""Matrix-free Gaussian linear algebra for the reconstruction model.

The posterior precision over the image is

    A(pi) = X^T X / sigma^2 + B^T diag(pi) B,

applied purely through operator products (X selects observed pixels, B is
the orthonormal wavelet transform).  Systems A x = r are solved by
Jacobi-preconditioned conjugate gradients.  Posterior coefficient
variances are either exact (full observation: A diagonalizes in the
wavelet basis) or estimated by averaging squared coefficients of exact
Gaussian samples x ~ N(0, A^{-1}), each obtained by solving A x = r for a
randomized right-hand side whose covariance is A.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from . import wavelet

Z_FLOOR = 1e-10


class SolverError(RuntimeError):
    """Raised when a solve produces non-finite values."""


class RngStream:
    """Deterministic, splittable random stream.

    Substreams are independent Philox generators keyed by
    (seed, tag, counter); output depends only on that triple, never on
    draw order elsewhere, so parallel and serial schedules agree.
    """

    def __init__(self, seed: int, tag: str):
        self.seed = int(seed)
        self.tag = str(tag)

    def generator(self, counter: int = 0) -> np.random.Generator:
        digest = hashlib.blake2b(
            f"{self.tag}/{int(counter)}".encode(),
            digest_size=16,
            key=self.seed.to_bytes(8, "little", signed=False),
        ).digest()
        return np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))

    def child(self, tag_suffix: str) -> "RngStream":
        return RngStream(self.seed, f"{self.tag}.{tag_suffix}")


@dataclass(frozen=True)
class ObservationOp:
    """Linear observation operator: identity (full view) or pixel mask."""

    shape: tuple  # (height, width) of the image domain
    indices: np.ndarray | None = None  # flat observed positions; None = identity

    def __post_init__(self):
        if self.indices is not None:
            idx = np.asarray(self.indices, dtype=np.int64)
            n = self.shape[0] * self.shape[1]
            if idx.ndim != 1 or np.unique(idx).size != idx.size:
                raise ValueError("mask indices must be unique and 1-D")
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ValueError("mask indices out of range")
            object.__setattr__(self, "indices", idx)

    @classmethod
    def identity(cls, shape) -> "ObservationOp":
        return cls(tuple(shape), None)

    @classmethod
    def mask(cls, shape, indices) -> "ObservationOp":
        return cls(tuple(shape), indices)

    @property
    def is_identity(self) -> bool:
        return self.indices is None

    @property
    def n(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def m(self) -> int:
        return self.n if self.indices is None else self.indices.size

    def apply(self, image: np.ndarray) -> np.ndarray:
        if image.shape != self.shape:
            raise ValueError(f"image shape {image.shape} != {self.shape}")
        flat = image.ravel()
        return flat.copy() if self.indices is None else flat[self.indices]

    def apply_t(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.m,):
            raise ValueError(f"vector length {vec.shape} != m={self.m}")
        if self.indices is None:
            return vec.reshape(self.shape).copy()
        out = np.zeros(self.n)
        out[self.indices] = vec
        return out.reshape(self.shape)

    def xtx_diag(self) -> np.ndarray:
        """Diagonal of X^T X as an image (observation indicator)."""
        if self.indices is None:
            return np.ones(self.shape)
        return self.apply_t(np.ones(self.m))

    def fill_image(self, vec: np.ndarray, fill_value: float | None = None) -> np.ndarray:
        """Embed observations into the image domain, filling holes.

        Missing pixels default to the mean of the observed values.
        """
        if self.indices is None:
            return vec.reshape(self.shape).astype(np.float64)
        if fill_value is None:
            fill_value = float(np.mean(vec)) if vec.size else 0.0
        out = np.full(self.n, fill_value)
        out[self.indices] = vec
        return out.reshape(self.shape)


@dataclass
class PrecisionOp:
    """The posterior precision A(pi), applied matrix-free to images."""

    observation: ObservationOp
    layout: wavelet.WaveletLayout
    pi: np.ndarray
    sigma2: float

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64)
        if self.pi.shape != (self.layout.n,):
            raise ValueError("pi length does not match layout")
        if np.any(self.pi < 0):
            raise ValueError("pi must be nonnegative")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")

    def apply(self, x: np.ndarray) -> np.ndarray:
        obs = self.observation
        data_term = obs.apply_t(obs.apply(x)) / self.sigma2
        prior_term = wavelet.inverse(self.pi * wavelet.forward(x, self.layout), self.layout)
        return data_term + prior_term

    def jacobi_diag(self) -> np.ndarray:
        """Cheap diagonal proxy: exact data part plus the mean prior weight."""
        return self.observation.xtx_diag() / self.sigma2 + float(np.mean(self.pi))


def pcg_solve(
    op: PrecisionOp,
    rhs: np.ndarray,
    tol: float = 1e-8,
    max_iters: int = 1000,
    x0: np.ndarray | None = None,
):
    """Preconditioned conjugate gradients for A x = rhs.

    Returns (x, final relative residual, iterations).  The residual is
    recomputed from scratch at exit so the report is trustworthy.  Raises
    SolverError if non-finite values appear.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return np.zeros_like(rhs), 0.0, 0
    inv_diag = 1.0 / op.jacobi_diag()

    x = np.zeros_like(rhs) if x0 is None else x0.astype(np.float64).copy()
    r = rhs - op.apply(x) if x0 is not None else rhs.copy()
    z = inv_diag * r
    p = z.copy()
    rho = float(np.vdot(r, z))
    iters = 0
    for _ in range(max_iters):
        if rho <= 0.0:
            break  # preconditioned residual at machine zero; cannot progress
        q = op.apply(p)
        denom = float(np.vdot(p, q))
        if not np.isfinite(denom):
            raise SolverError("conjugate gradients produced non-finite curvature")
        if denom <= 0.0:
            # exhausted float precision (residual at machine zero) or a
            # genuinely indefinite operator; only the former is benign
            if float(np.linalg.norm(r)) <= 1e-12 * rhs_norm:
                break
            raise SolverError(f"conjugate gradients broke down (p'Ap = {denom})")
        alpha = rho / denom
        x += alpha * p
        r -= alpha * q
        iters += 1
        if float(np.linalg.norm(r)) <= tol * rhs_norm:
            break
        z = inv_diag * r
        rho_new = float(np.vdot(r, z))
        p = z + (rho_new / rho) * p
        rho = rho_new
    if not np.all(np.isfinite(x)):
        raise SolverError("conjugate gradients produced non-finite iterate")
    true_res = float(np.linalg.norm(rhs - op.apply(x))) / rhs_norm
    return x, true_res, iters


def exact_variances_denoising(pi: np.ndarray, sigma2: float) -> np.ndarray:
    """Coefficient variances for full observation: 1 / (1/sigma2 + pi).

    With X the identity the precision diagonalizes in the wavelet basis,
    so no sampling is needed.
    """
    pi = np.asarray(pi, dtype=np.float64)
    return 1.0 / (1.0 / sigma2 + pi)


def sample_variances(
    op: PrecisionOp, n_samples: int, cg_iters: int, rng: RngStream
) -> np.ndarray:
    """Monte Carlo coefficient variances via randomized-perturbation solves.

    Each sample solves A x = r with r = X^T eps1 / sigma + B^T sqrt(pi) eps2,
    which has covariance A, so x is an exact N(0, A^{-1}) draw up to solver
    tolerance.  Sample k draws from substream counter k; accumulation runs
    in sample order, so results are reproducible bit for bit.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    obs = op.observation
    layout = op.layout
    sqrt_pi = np.sqrt(op.pi)
    sigma = np.sqrt(op.sigma2)
    acc = np.zeros(layout.n)
    for k in range(n_samples):
        gen = rng.generator(k)
        eps1 = gen.standard_normal(obs.m)
        eps2 = gen.standard_normal(layout.n)
        r = obs.apply_t(eps1) / sigma + wavelet.inverse(sqrt_pi * eps2, layout)
        x, _, _ = pcg_solve(op, r, tol=0.0, max_iters=cg_iters)
        acc += np.square(wavelet.forward(x, layout))
    return np.maximum(acc / n_samples, Z_FLOOR)
