"""Double-loop variational engine for wavelet scale-mixture image models.

The engine minimizes an upper bound on the negative log evidence of a
linear-Gaussian observation model with a structured sparsity prior on
wavelet coefficients.  Decoupling happens twice:

  * Gaussian-envelope relaxation of each coefficient potential introduces
    per-coefficient variances gamma; averaging over the binary state
    posterior makes the image-domain subproblem Gaussian with precision
    A(pi), pi = (1-q)/gamma0 + q/gamma1.
  * Fenchel duality on the log determinant of A introduces the variance
    surrogate z, refreshed once per outer iteration (exact for full
    observation, randomized-solve estimates otherwise).

With z fixed, the inner loop alternates a smooth penalized least squares
solve for the mean image (nonlinear conjugate gradients on penalties
evaluated at p = sqrt(z + s^2)), an exact belief propagation update of
the state posterior, and closed-form hyperparameter updates.  Student's t
penalties are replaced by convex tangent majorants whose slopes e are
refit alongside z, so every inner problem stays convex.

MAP estimation reuses the same loop with z pinned at a small smoothing
floor and no variance refits; the factorial prior drops the state
posterior entirely.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import lingauss, tree, wavelet
from .lingauss import ObservationOp, PrecisionOp, RngStream, SolverError
from .potentials import Gaussian, Laplace, StudentT

MODEL_IDS = ("lap-fact", "t-fact", "lap-tree", "t-tree")

HYPER_MIN = 1e-6
HYPER_MAX = 1e8

#: default iteration budgets for full-scale runs
DEFAULT_OUTER = 15
DEFAULT_INNER_ROUNDS = 3
DEFAULT_PLS_ITERS = 150
DEFAULT_PM_SAMPLES = 30
DEFAULT_PM_CG_ITERS = 70


@dataclass
class ModelConfig:
    """Model selection and iteration budgets for one reconstruction run."""

    model: str = "lap-tree"
    mode: str = "vb"
    learn_hypers: bool = False
    levels: int = 8
    sigma2: float = 0.01
    nu: float = 2.1
    outer: int = DEFAULT_OUTER
    inner_rounds: int = DEFAULT_INNER_ROUNDS
    pls_iters: int = DEFAULT_PLS_ITERS
    pm_samples: int = DEFAULT_PM_SAMPLES
    pm_cg_iters: int = DEFAULT_PM_CG_ITERS
    seed: int = 0
    variance_source: str = "auto"  # auto | exact | pm
    z_smooth: float = 1e-6
    phi_rel_tol: float = 1e-6
    init_em_iters: int = 5

    def __post_init__(self):
        if self.model not in MODEL_IDS:
            raise ValueError(f"model must be one of {MODEL_IDS}, got {self.model!r}")
        if self.mode not in ("vb", "map"):
            raise ValueError(f"mode must be 'vb' or 'map', got {self.mode!r}")
        if self.variance_source not in ("auto", "exact", "pm"):
            raise ValueError(f"bad variance_source {self.variance_source!r}")
        if min(self.outer, self.inner_rounds, self.pls_iters, self.pm_samples,
               self.pm_cg_iters, self.levels) < 1:
            raise ValueError("iteration budgets and levels must be positive")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")

    @property
    def is_tree(self) -> bool:
        return self.model.endswith("tree")

    @property
    def family(self) -> str:
        return "t" if self.model.startswith("t") else "lap"

    @property
    def is_vb(self) -> bool:
        return self.mode == "vb"


@dataclass
class Hypers:
    """Per-level potential parameters plus the tree CPT.

    ``state0``/``state1`` meaning depends on the model:
      lap-fact: state0 = Laplace rates tau_l, state1 unused;
      t-fact:   state0 = Student's t scales tau_l, state1 unused;
      lap-tree: state0/state1 = low/high Laplace rates;
      t-tree:   state0 = low-state Gaussian precisions, state1 = high
                Student's t scales.
    The scaling band always carries a single Gaussian precision.
    """

    model: str
    nu: float
    state0: np.ndarray
    state1: np.ndarray | None
    xi_scaling: float
    tree: tree.TreeParams | None

    def copy(self) -> "Hypers":
        return Hypers(
            self.model,
            self.nu,
            self.state0.copy(),
            None if self.state1 is None else self.state1.copy(),
            self.xi_scaling,
            None if self.tree is None else tree.TreeParams(self.tree.theta.copy()),
        )

    @property
    def kinds(self) -> tuple[str, str | None]:
        return {
            "lap-fact": ("laplace", None),
            "t-fact": ("studentt", None),
            "lap-tree": ("laplace", "laplace"),
            "t-tree": ("gaussian", "studentt"),
        }[self.model]


def _make_potential(kind: str, param: float, nu: float):
    if kind == "laplace":
        return Laplace(param)
    if kind == "gaussian":
        return Gaussian(param)
    if kind == "studentt":
        return StudentT(param, nu)
    raise ValueError(f"unknown potential kind {kind!r}")


class PotentialBank:
    """Vectorized penalty evaluation over the canonical coefficient vector.

    Detail levels share one potential per (state, level); the scaling
    block carries its own Gaussian.  Student's t penalties are evaluated
    through their convex tangent majorant whenever tangent slopes are
    supplied, which is always the case inside the engine.
    """

    def __init__(self, layout: wavelet.WaveletLayout, hypers: Hypers):
        self.layout = layout
        self.hypers = hypers
        kind0, kind1 = hypers.kinds
        L = layout.levels
        self.pot0 = [_make_potential(kind0, hypers.state0[l - 1], hypers.nu) for l in range(1, L + 1)]
        self.pot1 = (
            None
            if kind1 is None
            else [_make_potential(kind1, hypers.state1[l - 1], hypers.nu) for l in range(1, L + 1)]
        )
        self.scaling_pot = Gaussian(hypers.xi_scaling)
        self.student_state = 0 if kind0 == "studentt" else (1 if kind1 == "studentt" else None)

    def _detail_slices(self):
        ns = self.layout.n_scaling
        for l in range(1, self.layout.levels + 1):
            sl = self.layout.level_slice(l)
            yield l, sl, slice(sl.start - ns, sl.stop - ns)

    def _eval(self, pot, p_slice, e_slice):
        if isinstance(pot, StudentT) and e_slice is not None:
            return pot.convexified_value_and_slope(p_slice, e_slice)
        return pot.value_and_slope(p_slice)

    def penalty_value_slope(self, p, q1_detail, e0=None, e1=None):
        """Total penalty and its per-coefficient derivative w.r.t. p.

        Returns (value, slope) where value sums state-weighted penalties
        over all coefficients and slope has the full coefficient length.
        """
        ns = self.layout.n_scaling
        value = 0.0
        slope = np.empty(self.layout.n)
        v, sl = self.scaling_pot.value_and_slope(p[:ns])
        value += float(np.sum(v))
        slope[:ns] = sl
        for l, gsl, dsl in self._detail_slices():
            pl = p[gsl]
            q = q1_detail[dsl]
            v0, s0 = self._eval(self.pot0[l - 1], pl, None if e0 is None else e0[dsl])
            if self.pot1 is None:
                value += float(np.sum(v0))
                slope[gsl] = s0
            else:
                v1, s1 = self._eval(self.pot1[l - 1], pl, None if e1 is None else e1[dsl])
                value += float((1.0 - q) @ v0 + q @ v1)
                slope[gsl] = (1.0 - q) * s0 + q * s1
        return value, slope

    def evidence(self, p, e0=None, e1=None) -> np.ndarray:
        """Per-detail-node log potential values at both states."""
        if self.pot1 is None:
            raise ValueError("evidence requires a pair-potential model")
        ns = self.layout.n_scaling
        ev = np.empty((self.layout.n_detail, 2))
        for l, gsl, dsl in self._detail_slices():
            pl = p[gsl]
            v0, _ = self._eval(self.pot0[l - 1], pl, None if e0 is None else e0[dsl])
            v1, _ = self._eval(self.pot1[l - 1], pl, None if e1 is None else e1[dsl])
            ev[dsl, 0] = -0.5 * v0
            ev[dsl, 1] = -0.5 * v1
        return ev

    def state_weights(self, p):
        """Per-coefficient precision weights 1/gamma_min at each state."""
        ns = self.layout.n_scaling
        w0 = np.empty(self.layout.n)
        w0[:ns] = self.scaling_pot.xi
        w1 = None if self.pot1 is None else np.zeros(self.layout.n)
        for l, gsl, _ in self._detail_slices():
            pl = p[gsl]
            w0[gsl] = 1.0 / self.pot0[l - 1].gamma_min(pl)
            if w1 is not None:
                w1[gsl] = 1.0 / self.pot1[l - 1].gamma_min(pl)
        return w0, w1

    def refit_tangents(self, p):
        """Fresh tangent slopes for every Student's t state at the current p."""
        if self.student_state is None:
            return None, None
        e = np.empty(self.layout.n_detail)
        pots = self.pot0 if self.student_state == 0 else self.pot1
        for l, gsl, dsl in self._detail_slices():
            e[dsl] = pots[l - 1].refit_tangent(p[gsl])
        return (e, None) if self.student_state == 0 else (None, e)


def _clamp_hyper(x: float) -> float:
    return float(min(max(x, HYPER_MIN), HYPER_MAX))


def solve_student_tau(p, q, nu, tau_init, grad_tol=1e-10, max_iters=100):
    """Minimize the Student's t hyperparameter objective over log tau.

    The objective (normalized by the total responsibility mass) is

        f(x) = (1/sum q) * sum_j q_j [ (nu+1) log(1 + (p_j^2/nu) e^x) - x ],

    smooth and convex in x = log tau.  A safeguarded Newton iteration
    (bisection fallback inside an expanding bracket) drives |f'| below
    ``grad_tol``.  Returns tau unchanged when there is no mass.
    """
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    qsum = float(q.sum())
    if qsum <= 1e-12:
        return float(tau_init)
    a = np.square(p) / nu
    w = q / qsum

    def grad_hess(x):
        t = a * math.exp(x)
        frac = t / (1.0 + t)
        g = (nu + 1.0) * float(w @ frac) - 1.0
        h = (nu + 1.0) * float(w @ (frac / (1.0 + t)))
        return g, h

    x_lo = math.log(HYPER_MIN) - 1.0
    x_hi = math.log(HYPER_MAX) + 1.0
    x = min(max(math.log(max(tau_init, 1e-300)), x_lo), x_hi)
    g, h = grad_hess(x)
    # expand a sign-change bracket around the start
    lo, hi = x, x
    glo, ghi = g, g
    step = 1.0
    while glo > 0.0 and lo > x_lo:
        lo = max(lo - step, x_lo)
        step *= 2.0
        glo, _ = grad_hess(lo)
    step = 1.0
    while ghi < 0.0 and hi < x_hi:
        hi = min(hi + step, x_hi)
        step *= 2.0
        ghi, _ = grad_hess(hi)
    for _ in range(max_iters):
        if abs(g) <= grad_tol or hi - lo < 1e-15:
            break
        if g > 0.0:
            hi = x
        else:
            lo = x
        x_new = x - g / h if h > 0.0 else x
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        x = x_new
        g, h = grad_hess(x)
    return _clamp_hyper(math.exp(min(max(x, x_lo), x_hi)))


@dataclass
class TraceRecord:
    outer: int
    rnd: int
    stage: str
    phi: float
    extra: dict = field(default_factory=dict)


@dataclass
class RunResult:
    u: np.ndarray
    marginals: tree.TreeMarginals | None
    hypers: Hypers
    phi_trace: list
    trace: list
    outer_iters: int
    diagnostics: dict


class Engine:
    """One reconstruction problem: observation, model config, state.

    Instances own their state; run() drives the full double loop and
    returns the posterior mean (VB) or mode (MAP) estimate.
    """

    def __init__(
        self,
        y: np.ndarray,
        observation: ObservationOp,
        config: ModelConfig,
        hypers: Hypers | None = None,
    ):
        self.config = config
        self.obs = observation
        if config.variance_source == "exact" and not observation.is_identity:
            raise ValueError("exact variances require a full (identity) observation")
        self.layout = wavelet.make_layout(*observation.shape, config.levels)
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (observation.m,):
            raise ValueError(f"y must have length m={observation.m}, got {y.shape}")
        self.y = y
        self.topo = tree.topology_from_layout(self.layout) if config.is_tree else None
        if hypers is None:
            hypers = init_hypers(y, observation, self.layout, config)
        if hypers.model != config.model:
            raise ValueError("hypers were built for a different model")
        self.hypers = hypers.copy()
        self.bank = PotentialBank(self.layout, self.hypers)
        self._pm_rng = RngStream(config.seed, "pm")
        self.trace: list[TraceRecord] = []
        self._init_state()

    # ----- state initialization -------------------------------------------

    def _init_state(self):
        cfg = self.config
        self.u = self.obs.fill_image(self.y)
        self.s = wavelet.forward(self.u, self.layout)
        self.q1d = np.zeros(self.layout.n_detail)
        self.marginals = None
        self.e0 = self.e1 = None

        # provisional tangents and state posterior at p = |s|, floored at
        # the smoothing level so flat fill regions stay differentiable
        p0 = np.sqrt(cfg.z_smooth + np.square(self.s))
        self.e0, self.e1 = self.bank.refit_tangents(p0)
        if cfg.is_tree:
            self._run_bp(p0)

        if not cfg.is_vb:
            self.z = np.full(self.layout.n, cfg.z_smooth)
        elif self._variance_exact():
            self.z = lingauss.exact_variances_denoising(self._pi_at(p0), cfg.sigma2)
        else:
            self.z = np.full(self.layout.n, cfg.sigma2)

        p = self._p()
        self.e0, self.e1 = self.bank.refit_tangents(p)
        if cfg.is_tree:
            self._run_bp(p)

    def _variance_exact(self) -> bool:
        src = self.config.variance_source
        if src == "auto":
            return self.obs.is_identity
        return src == "exact"

    # ----- small helpers ---------------------------------------------------

    def _p(self) -> np.ndarray:
        return np.sqrt(self.z + np.square(self.s))

    def _q1_full(self) -> np.ndarray:
        q = np.zeros(self.layout.n)
        q[self.layout.n_scaling:] = self.q1d
        return q

    def _pi_at(self, p: np.ndarray) -> np.ndarray:
        w0, w1 = self.bank.state_weights(p)
        q = self._q1_full()
        if w1 is None:
            return w0
        return (1.0 - q) * w0 + q * w1

    def effective_pi(self) -> np.ndarray:
        """State-averaged precision weights at the current effective point."""
        return self._pi_at(self._p())

    def _run_bp(self, p: np.ndarray):
        ev = self.bank.evidence(p, self.e0, self.e1)
        self.marginals = tree.bp_infer(self.topo, self.hypers.tree, ev)
        self.q1d = self.marginals.q1

    def _kl(self) -> float:
        if self.marginals is None:
            return 0.0
        return tree.kl_current(self.topo, self.hypers.tree, self.marginals)

    def phi_inner(self) -> float:
        """Bound value up to the z-dependent Fenchel offset.

        Valid for comparisons while z is fixed: data misfit plus
        state-averaged penalties at p = sqrt(z + s^2) plus twice the
        divergence of the state posterior from the prior.
        """
        resid = self.y - self.obs.apply(self.u)
        value, _ = self.bank.penalty_value_slope(self._p(), self.q1d, self.e0, self.e1)
        return float(resid @ resid) / self.config.sigma2 + value + 2.0 * self._kl()

    def _record(self, outer, rnd, stage, **extra):
        phi = self.phi_inner()
        if not np.isfinite(phi):
            raise SolverError(f"non-finite bound value after stage {stage!r}")
        self.trace.append(TraceRecord(outer, rnd, stage, phi, extra))
        return phi

    # ----- inner loop ------------------------------------------------------

    def _pls_objective(self, u):
        s = wavelet.forward(u, self.layout)
        p = np.sqrt(self.z + np.square(s))
        resid = self.y - self.obs.apply(u)
        value, slope = self.bank.penalty_value_slope(p, self.q1d, self.e0, self.e1)
        f = float(resid @ resid) / self.config.sigma2 + value
        return f, s, p, resid, slope

    def _pls_value(self, u):
        s = wavelet.forward(u, self.layout)
        p = np.sqrt(self.z + np.square(s))
        resid = self.y - self.obs.apply(u)
        value, _ = self.bank.penalty_value_slope(p, self.q1d, self.e0, self.e1)
        return float(resid @ resid) / self.config.sigma2 + value

    def _pls_gradient(self, s, p, resid, slope):
        g = -(2.0 / self.config.sigma2) * self.obs.apply_t(resid)
        g += wavelet.inverse(slope * s / p, self.layout)
        return g

    def inner_pls(self):
        """Penalized least squares for the mean image.

        Polak-Ribiere nonlinear conjugate gradients with restarts and a
        backtracking line search enforcing sufficient decrease, so the
        objective never increases.  Returns (iterations, final gradient
        norm).
        """
        cfg = self.config
        u = self.u
        f, s, p, resid, slope = self._pls_objective(u)
        g = self._pls_gradient(s, p, resid, slope)
        d = -g
        gg = float(np.vdot(g, g))
        step = 1.0 / (1.0 + 2.0 / cfg.sigma2)
        iters = 0
        stall = 0
        for _ in range(cfg.pls_iters):
            slope_dir = float(np.vdot(g, d))
            if slope_dir >= 0.0:  # restart on a non-descent direction
                d = -g
                slope_dir = -gg
            if gg <= 1e-24:
                break
            # backtracking Armijo line search
            t = step
            accepted = False
            for _bt in range(40):
                f_try = self._pls_value(u + t * d)
                if f_try <= f + 1e-4 * t * slope_dir:
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                if np.array_equal(d, -g):
                    break  # no progress possible at float precision
                d = -g
                step = max(step, 1e-12)
                continue
            u = u + t * d
            f_prev = f
            f, s, p, resid, slope = self._pls_objective(u)
            g_new = self._pls_gradient(s, p, resid, slope)
            gg_new = float(np.vdot(g_new, g_new))
            beta = max(0.0, float(np.vdot(g_new, g_new - g)) / gg) if gg > 0 else 0.0
            d = -g_new + beta * d
            g, gg = g_new, gg_new
            step = min(t * 2.0, 1e6)
            iters += 1
            if f_prev - f <= 1e-12 * (1.0 + abs(f)):
                stall += 1
                if stall >= 3:
                    break
            else:
                stall = 0
        self.u = u
        self.s = wavelet.forward(u, self.layout)
        return iters, math.sqrt(gg)

    def update_q_delta(self):
        """Refresh the state posterior from the current effective point."""
        self._run_bp(self._p())

    def update_hypers_closed_form(self):
        """Inner-loop hyperparameter updates (everything but Student's t tau).

        Laplace rates and Gaussian precisions have closed-form minimizers
        of their bound fragments; the tree CPT update is the expected
        count ratio.  Levels with no responsibility mass keep their value.
        """
        hyp = self.hypers
        kind0, kind1 = hyp.kinds
        p = self._p()
        ns = self.layout.n_scaling
        for l in range(1, self.layout.levels + 1):
            gsl = self.layout.level_slice(l)
            dsl = slice(gsl.start - ns, gsl.stop - ns)
            pl = p[gsl]
            q1 = self.q1d[dsl]
            for state, kind, arr in ((0, kind0, hyp.state0), (1, kind1, hyp.state1)):
                if kind not in ("laplace", "gaussian"):
                    continue
                qr = q1 if state == 1 else 1.0 - q1
                mass = float(qr.sum())
                if mass <= 1e-12:
                    continue
                if kind == "laplace":
                    denom = float(qr @ pl)
                    if denom > 0.0:
                        arr[l - 1] = _clamp_hyper(mass / denom)
                else:
                    denom = float(qr @ np.square(pl))
                    if denom > 0.0:
                        arr[l - 1] = _clamp_hyper(mass / denom)
        denom = float(np.sum(np.square(p[:ns])))
        if denom > 0.0:
            hyp.xi_scaling = _clamp_hyper(ns / denom)
        if self.config.is_tree and self.marginals is not None:
            hyp.tree = tree.update_theta(self.topo, self.marginals, hyp.tree)
        self.bank = PotentialBank(self.layout, hyp)

    def update_student_tau(self):
        """Once-per-outer Newton update of every Student's t scale.

        Operates on the raw (non-convexified) penalty fragment; tangents
        must be refit afterwards.
        """
        hyp = self.hypers
        kind0, kind1 = hyp.kinds
        p = self._p()
        ns = self.layout.n_scaling
        for l in range(1, self.layout.levels + 1):
            gsl = self.layout.level_slice(l)
            dsl = slice(gsl.start - ns, gsl.stop - ns)
            pl = p[gsl]
            q1 = self.q1d[dsl]
            if kind0 == "studentt":
                hyp.state0[l - 1] = solve_student_tau(pl, 1.0 - q1, hyp.nu, hyp.state0[l - 1])
            if kind1 == "studentt":
                hyp.state1[l - 1] = solve_student_tau(pl, q1, hyp.nu, hyp.state1[l - 1])
        self.bank = PotentialBank(self.layout, hyp)

    # ----- outer loop ------------------------------------------------------

    def outer_refit(self, first: bool):
        """Variance surrogate refresh plus Student's t tangent maintenance.

        The first outer iteration keeps the bootstrap z from engine
        construction.  Never called in MAP mode.
        """
        cfg = self.config
        if not first:
            pi = self.effective_pi()
            if self._variance_exact():
                if not self.obs.is_identity:
                    raise ValueError("exact variances require full observation")
                self.z = lingauss.exact_variances_denoising(pi, cfg.sigma2)
            else:
                op = PrecisionOp(self.obs, self.layout, pi, cfg.sigma2)
                self.z = lingauss.sample_variances(
                    op, cfg.pm_samples, cfg.pm_cg_iters, self._pm_rng
                )
        if self.config.family == "t" and cfg.learn_hypers:
            self.update_student_tau()
        if self.config.family == "t":
            self.e0, self.e1 = self.bank.refit_tangents(self._p())

    def _inner_rounds(self, outer_idx: int, n_rounds: int) -> bool:
        """Run inner rounds; returns True if converged early."""
        cfg = self.config
        phi_prev = None
        for rnd in range(1, n_rounds + 1):
            iters, gnorm = self.inner_pls()
            self._record(outer_idx, rnd, "pls", iters=iters, grad_norm=gnorm)
            if cfg.is_tree:
                self.update_q_delta()
                self._record(outer_idx, rnd, "bp")
            if cfg.learn_hypers:
                self.update_hypers_closed_form()
                self._record(outer_idx, rnd, "hypers")
            phi = self.trace[-1].phi
            if phi_prev is not None and abs(phi_prev - phi) <= cfg.phi_rel_tol * abs(phi):
                return True
            phi_prev = phi
        return False

    def run(self) -> RunResult:
        cfg = self.config
        outer_done = 0
        if cfg.is_vb:
            for it in range(1, cfg.outer + 1):
                self.outer_refit(first=(it == 1))
                self._record(it, 0, "outer")
                self._inner_rounds(it, cfg.inner_rounds)
                outer_done = it
        else:
            # MAP: z stays at the smoothing floor, no variance refits; the
            # whole budget is spent as one long expectation-maximization
            # alternation of least squares, state inference and (optionally)
            # hyperparameter updates.
            self._record(1, 0, "outer")
            self._inner_rounds(1, cfg.outer * cfg.inner_rounds)
            outer_done = 1
        phi_values = [rec.phi for rec in self.trace]
        diagnostics = {
            "final_phi": phi_values[-1] if phi_values else float("nan"),
            "n_stages": len(self.trace),
        }
        return RunResult(
            u=self.u,
            marginals=self.marginals,
            hypers=self.hypers.copy(),
            phi_trace=phi_values,
            trace=self.trace,
            outer_iters=outer_done,
            diagnostics=diagnostics,
        )

    # ----- dense diagnostics (tests, tiny problems) -------------------------

    def dense_operator_pieces(self):
        """Dense X, B and the observation vector for small problems."""
        n = self.layout.n
        if n > 256:
            raise ValueError("dense diagnostics limited to n <= 256")
        eye = np.eye(n)
        B = np.stack([wavelet.forward(eye[i].reshape(self.obs.shape), self.layout) for i in range(n)], axis=1)
        if self.obs.is_identity:
            X = np.eye(n)
        else:
            X = np.zeros((self.obs.m, n))
            X[np.arange(self.obs.m), self.obs.indices] = 1.0
        return X, B

    def phi_dense_current(self) -> float:
        """Full bound value with an exact log determinant (small problems)."""
        X, B = self.dense_operator_pieces()
        p = self._p()
        ns = self.layout.n_scaling
        gamma0 = np.empty(self.layout.n)
        gamma1 = np.empty(self.layout.n)
        h0 = np.empty(self.layout.n)
        h1 = np.zeros(self.layout.n)
        gamma0[:ns] = 1.0 / self.hypers.xi_scaling
        h0[:ns] = self.bank.scaling_pot.h_dual(gamma0[:ns])
        gamma1[:ns] = gamma0[:ns]
        for l in range(1, self.layout.levels + 1):
            gsl = self.layout.level_slice(l)
            pot0 = self.bank.pot0[l - 1]
            gamma0[gsl] = pot0.gamma_min(p[gsl])
            h0[gsl] = pot0.h_dual(gamma0[gsl])
            if self.bank.pot1 is not None:
                pot1 = self.bank.pot1[l - 1]
                gamma1[gsl] = pot1.gamma_min(p[gsl])
                h1[gsl] = pot1.h_dual(gamma1[gsl])
            else:
                gamma1[gsl] = gamma0[gsl]
        q = self._q1_full()
        pi = (1.0 - q) / gamma0 + q / gamma1
        h_avg = float((1.0 - q) @ h0 + q @ h1)
        return phi_dense(self.y, X, B, self.config.sigma2, pi, h_avg, self._kl())


def phi_dense(y, X, B, sigma2, pi, h_expected, kl) -> float:
    """Evidence bound with exact log determinant, for dense toy problems.

    Upper-bounds -2 log P(y) for any positive pi produced from valid
    envelope variances, any expected dual value, and any state posterior
    divergence: the Gaussian integral over the image is carried out
    exactly.
    """
    X = np.asarray(X, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m, n = X.shape
    A = X.T @ X / sigma2 + B.T @ (np.asarray(pi)[:, None] * B)
    rhs = X.T @ y / sigma2
    u_hat = np.linalg.solve(A, rhs)
    resid = y - X @ u_hat
    s_hat = B @ u_hat
    quad = float(resid @ resid) / sigma2 + float(s_hat @ (np.asarray(pi) * s_hat))
    sign, logdet = np.linalg.slogdet(A)
    if sign <= 0:
        raise ValueError("precision matrix must be positive definite")
    return (
        m * math.log(2.0 * math.pi * sigma2)
        - n * math.log(2.0 * math.pi)
        + logdet
        + quad
        + h_expected
        + 2.0 * kl
    )


# ----- hyperparameter initialization ---------------------------------------


def init_hypers(
    y: np.ndarray,
    observation: ObservationOp,
    layout: wavelet.WaveletLayout,
    config: ModelConfig,
) -> Hypers:
    """Fit prior hyperparameters to the raw observations.

    Missing pixels are filled with the observed mean, the transform is
    applied, and per-level parameters are moment-matched (Laplace rate =
    count / sum |s|; Gaussian precision = count / sum s^2; Student's t
    scale by the Newton solve with unit responsibilities).  Tree models
    then refine the two-state split and CPT by a few rounds of
    expectation maximization on the raw coefficients.
    """
    u0 = observation.fill_image(np.asarray(y, dtype=np.float64))
    s = wavelet.forward(u0, layout)
    p = np.abs(s)
    ns = layout.n_scaling
    L = layout.levels
    nu = config.nu

    denom = float(np.sum(np.square(s[:ns])))
    xi_scaling = _clamp_hyper(ns / denom) if denom > 0 else 1.0

    tau_lap = np.ones(L)
    xi_gauss = np.ones(L)
    for l in range(1, L + 1):
        sl = layout.level_slice(l)
        abs_sum = float(np.sum(p[sl]))
        sq_sum = float(np.sum(np.square(p[sl])))
        count = sl.stop - sl.start
        if abs_sum > 0:
            tau_lap[l - 1] = _clamp_hyper(count / abs_sum)
        if sq_sum > 0:
            xi_gauss[l - 1] = _clamp_hyper(count / sq_sum)

    if config.model == "lap-fact":
        return Hypers("lap-fact", nu, tau_lap, None, xi_scaling, None)

    if config.model == "t-fact":
        tau_t = np.ones(L)
        for l in range(1, L + 1):
            sl = layout.level_slice(l)
            start = nu / max((nu - 2.0), 1e-3) * xi_gauss[l - 1]
            tau_t[l - 1] = solve_student_tau(p[sl], np.ones(sl.stop - sl.start), nu, start)
        return Hypers("t-fact", nu, tau_t, None, xi_scaling, None)

    # tree models: asymmetric split around the moment fit, then EM
    topo = tree.topology_from_layout(layout)
    theta = tree.TreeParams.initial(L)
    if config.model == "lap-tree":
        state0 = np.clip(2.0 * tau_lap, HYPER_MIN, HYPER_MAX)
        state1 = np.clip(0.5 * tau_lap, HYPER_MIN, HYPER_MAX)
    else:
        state0 = np.clip(2.0 * xi_gauss, HYPER_MIN, HYPER_MAX)
        state1 = np.empty(L)
        for l in range(1, L + 1):
            sl = layout.level_slice(l)
            start = 0.5 * nu / max((nu - 2.0), 1e-3) * xi_gauss[l - 1]
            state1[l - 1] = solve_student_tau(p[sl], np.ones(sl.stop - sl.start), nu, start)
    hyp = Hypers(config.model, nu, state0, state1, xi_scaling, theta)

    for _ in range(config.init_em_iters):
        bank = PotentialBank(layout, hyp)
        ev = np.empty((layout.n_detail, 2))
        for l in range(1, L + 1):
            gsl = layout.level_slice(l)
            dsl = slice(gsl.start - ns, gsl.stop - ns)
            ev[dsl, 0] = -0.5 * bank.pot0[l - 1].neg2_log(s[gsl])
            ev[dsl, 1] = -0.5 * bank.pot1[l - 1].neg2_log(s[gsl])
        marg = tree.bp_infer(topo, hyp.tree, ev)
        for l in range(1, L + 1):
            gsl = layout.level_slice(l)
            dsl = slice(gsl.start - ns, gsl.stop - ns)
            pl = p[gsl]
            q1 = marg.q1[dsl]
            q0 = 1.0 - q1
            if config.model == "lap-tree":
                if q0.sum() > 1e-12 and float(q0 @ pl) > 0:
                    hyp.state0[l - 1] = _clamp_hyper(float(q0.sum()) / float(q0 @ pl))
                if q1.sum() > 1e-12 and float(q1 @ pl) > 0:
                    hyp.state1[l - 1] = _clamp_hyper(float(q1.sum()) / float(q1 @ pl))
            else:
                sq = float(q0 @ np.square(pl))
                if q0.sum() > 1e-12 and sq > 0:
                    hyp.state0[l - 1] = _clamp_hyper(float(q0.sum()) / sq)
                hyp.state1[l - 1] = solve_student_tau(pl, q1, nu, hyp.state1[l - 1])
        hyp.tree = tree.update_theta(topo, marg, hyp.tree)
    return hyp


def raw_data_log_prior(
    s: np.ndarray, layout: wavelet.WaveletLayout, hyp: Hypers
) -> float:
    """log prior mass of a raw coefficient vector under tree-model hypers.

    The detail part is the evidence-weighted forest partition function;
    the scaling block contributes its Gaussian terms.  Used to monitor
    the expectation-maximization fit.
    """
    if hyp.tree is None:
        raise ValueError("raw_data_log_prior applies to tree models")
    topo = tree.topology_from_layout(layout)
    bank = PotentialBank(layout, hyp)
    ns = layout.n_scaling
    ev = np.empty((layout.n_detail, 2))
    for l in range(1, layout.levels + 1):
        gsl = layout.level_slice(l)
        dsl = slice(gsl.start - ns, gsl.stop - ns)
        ev[dsl, 0] = -0.5 * bank.pot0[l - 1].neg2_log(s[gsl])
        ev[dsl, 1] = -0.5 * bank.pot1[l - 1].neg2_log(s[gsl])
    marg = tree.bp_infer(topo, hyp.tree, ev)
    scal = -0.5 * float(np.sum(bank.scaling_pot.neg2_log(s[:ns])))
    return marg.logZ + scal
