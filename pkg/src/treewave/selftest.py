"""Built-in verification battery for installed deployments.

A compact subset of the full test suite's oracle checks: transform
round-trips, envelope tightness of the potentials, belief propagation
against exhaustive enumeration, conjugate gradients and exact variances
against dense factorizations, and an analytic-vs-numeric gradient check
of the inner objective.  Prints one PASS/FAIL line per check.
"""

import numpy as np

from . import lingauss, tree, wavelet
from .engine import Engine, ModelConfig
from .lingauss import ObservationOp, PrecisionOp, RngStream
from .potentials import Gaussian, Laplace, StudentT


def _check(name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] {name}" + (f" ({detail})" if detail else ""))
    return bool(ok)


def _wavelet_roundtrip(rng, quick):
    size, levels = (16, 3) if quick else (64, 5)
    layout = wavelet.make_layout(size, size, levels)
    worst = 0.0
    for _ in range(10):
        u = rng.standard_normal((size, size))
        v = rng.standard_normal((size, size))
        s = wavelet.forward(u, layout)
        worst = max(worst, float(np.max(np.abs(wavelet.inverse(s, layout) - u))))
        ip_gap = abs(float(s @ wavelet.forward(v, layout)) - float(np.vdot(u, v)))
        worst = max(worst, ip_gap / (np.linalg.norm(u) * np.linalg.norm(v)))
    return _check("wavelet round-trip / orthonormality", worst <= 1e-10, f"worst {worst:.2e}")


def _potential_tightness(quick):
    grid = np.exp(np.linspace(np.log(1e-8), np.log(1e8), 400_000))
    s_vals = np.linspace(-10, 10, 11 if quick else 41)
    worst = 0.0
    pots = [Laplace(2.0), StudentT(1.3, 2.1), Gaussian(0.7)]
    for pot in pots:
        g = np.append(grid, pot.gamma_min(0.0))  # include any fixed point
        hv = pot.h_dual(g)
        for s in s_vals:
            envelope = float(np.min(s * s / g + hv))
            worst = max(worst, abs(envelope - float(pot.neg2_log(s))))
    return _check("potential envelope tightness", worst <= 1e-6, f"worst {worst:.2e}")


def _bp_vs_enumeration(rng):
    worst = 0.0
    for _ in range(5):
        level = np.array([1, 2, 2, 3, 3, 3, 3])
        parent = np.array([-1, 0, 0, 1, 1, 2, 2])
        topo = tree.TreeTopology(level, parent)
        theta = np.clip(rng.uniform(0.1, 0.9, size=(2, 3)), 0.1, 0.9)
        theta[:, 0] = theta[0, 0]
        params = tree.TreeParams(theta)
        ev = rng.normal(scale=1.5, size=(7, 2))
        marg = tree.bp_infer(topo, params, ev)
        # enumerate all 2^7 configurations
        n = topo.n_nodes
        states = (np.arange(2**n)[:, None] >> np.arange(n)) & 1
        logp = np.zeros(2**n)
        lroot = params.log_root_prior()
        logp += lroot[states[:, 0]]
        for j in range(1, n):
            lcpt = params.log_cpt(int(level[j]))
            logp += lcpt[states[:, j], states[:, parent[j]]]
        logp += np.take_along_axis(ev[None, :, :], states[:, :, None], axis=2)[:, :, 0].sum(axis=1)
        z = np.exp(logp - logp.max())
        q1_exact = (z * states.T).sum(axis=1) / z.sum()
        logz_exact = float(np.log(z.sum()) + logp.max())
        worst = max(worst, float(np.max(np.abs(marg.q1 - q1_exact))))
        worst = max(worst, abs(marg.logZ - logz_exact))
    return _check("belief propagation vs enumeration", worst <= 1e-10, f"worst {worst:.2e}")


def _pcg_vs_dense(rng):
    layout = wavelet.make_layout(8, 8, 2)
    n = layout.n
    obs = ObservationOp.mask((8, 8), np.sort(rng.permutation(n)[: n // 2]))
    pi = rng.uniform(0.5, 3.0, size=n)
    op = PrecisionOp(obs, layout, pi, 0.1)
    eye = np.eye(n)
    A = np.stack([op.apply(eye[i].reshape(8, 8)).ravel() for i in range(n)], axis=1)
    rhs = rng.standard_normal((8, 8))
    x, res, _ = lingauss.pcg_solve(op, rhs, tol=1e-12, max_iters=500)
    x_dense = np.linalg.solve(A, rhs.ravel()).reshape(8, 8)
    gap = float(np.max(np.abs(x - x_dense))) / (1.0 + float(np.max(np.abs(x_dense))))
    zd = lingauss.exact_variances_denoising(pi, 0.1)
    op_full = PrecisionOp(ObservationOp.identity((8, 8)), layout, pi, 0.1)
    A_full = np.stack([op_full.apply(eye[i].reshape(8, 8)).ravel() for i in range(n)], axis=1)
    Bm = np.stack([wavelet.forward(eye[i].reshape(8, 8), layout) for i in range(n)], axis=1)
    z_dense = np.diag(Bm @ np.linalg.inv(A_full) @ Bm.T)
    gap_z = float(np.max(np.abs(zd - z_dense)))
    ok = gap <= 1e-6 and gap_z <= 1e-10
    return _check("conjugate gradients / exact variances vs dense", ok,
                  f"solve {gap:.2e}, var {gap_z:.2e}")


def _pls_gradient(rng):
    config = ModelConfig(model="lap-tree", mode="vb", levels=2, sigma2=0.05,
                         outer=1, inner_rounds=1, pls_iters=5, seed=3)
    obs = ObservationOp.identity((8, 8))
    truth = rng.uniform(0.2, 0.8, size=(8, 8))
    y = obs.apply(truth) + 0.1 * rng.standard_normal(64)
    eng = Engine(y, obs, config)
    u = eng.u + 0.05 * rng.standard_normal((8, 8))
    f0, s, p, resid, slope = eng._pls_objective(u)
    g = eng._pls_gradient(s, p, resid, slope)
    h = 1e-6
    worst = 0.0
    for _ in range(10):
        i, j = rng.integers(0, 8, size=2)
        d = np.zeros((8, 8))
        d[i, j] = 1.0
        num = (eng._pls_value(u + h * d) - eng._pls_value(u - h * d)) / (2 * h)
        worst = max(worst, abs(num - g[i, j]) / (1.0 + abs(num)))
    return _check("inner objective gradient vs finite differences", worst <= 1e-5,
                  f"worst {worst:.2e}")


def run_selftest(quick: bool = False) -> int:
    rng = np.random.default_rng(0)
    results = [
        _wavelet_roundtrip(rng, quick),
        _potential_tightness(quick),
        _bp_vs_enumeration(rng),
        _pcg_vs_dense(rng),
        _pls_gradient(rng),
    ]
    ok = all(results)
    print("selftest:", "all checks passed" if ok else "FAILURES PRESENT")
    return 0 if ok else 1
