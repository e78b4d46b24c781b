"""Latent binary quad-tree prior: exact inference and CPT updates.

Detail coefficients carry binary high/low state variables arranged in a
forest of trees whose directed edges run from coarse to fine levels.  The
prior is parameterized per level by the conditional probability of the
high state given the parent state; all roots share one marginal high
probability.

Inference on the evidence-weighted forest (prior times per-node likelihood
factors) is exact: one upward and one downward sum-product sweep per tree,
vectorized over all nodes of a level.  Messages live in log space with
pairwise log-add-exp, so depth-8 forests with strong evidence stay finite.
"""

from dataclasses import dataclass, field

import numpy as np

THETA_MIN = 1e-4

_CONSISTENCY_TOL = 1e-10


@dataclass(frozen=True)
class TreeTopology:
    """Forest structure over detail nodes.

    ``level`` is 1-based with 1 the root level; every non-root's parent
    must sit exactly one level up.  Node indices are local to the forest
    (0 .. n_nodes-1).
    """

    level: np.ndarray
    parent: np.ndarray
    depth: int = field(init=False)
    level_nodes: tuple = field(init=False)

    def __post_init__(self):
        level = np.asarray(self.level, dtype=np.int64)
        parent = np.asarray(self.parent, dtype=np.int64)
        object.__setattr__(self, "level", level)
        object.__setattr__(self, "parent", parent)
        if level.ndim != 1 or parent.shape != level.shape:
            raise ValueError("level and parent must be 1-D arrays of equal length")
        depth = int(level.max()) if level.size else 0
        object.__setattr__(self, "depth", depth)
        roots = parent < 0
        if not np.array_equal(roots, level == 1):
            raise ValueError("exactly the level-1 nodes must be parentless")
        if np.any(level < 1):
            raise ValueError("levels are 1-based")
        nonroot = ~roots
        if np.any(parent[nonroot] >= level.size):
            raise ValueError("parent index out of range")
        if np.any(level[parent[nonroot]] != level[nonroot] - 1):
            raise ValueError("every parent must be one level above its child")
        object.__setattr__(
            self,
            "level_nodes",
            tuple(np.flatnonzero(level == l) for l in range(1, depth + 1)),
        )

    @property
    def n_nodes(self) -> int:
        return self.level.size

    @property
    def roots(self) -> np.ndarray:
        return self.level_nodes[0]


def topology_from_layout(layout) -> TreeTopology:
    """Forest over a wavelet layout's detail coefficients (local indices)."""
    ns = layout.n_scaling
    level = layout.level[ns:].astype(np.int64)
    parent = layout.parent[ns:].copy()
    parent[parent >= 0] -= ns
    return TreeTopology(level, parent)


class TreeParams:
    """Level-shared CPT: theta[r, l-1] = P(state 1 at level l | parent state r).

    Column 0 stores the shared root high probability in both rows.
    Entries are clamped inside (0, 1) so log probabilities stay finite.
    """

    def __init__(self, theta: np.ndarray):
        theta = np.array(theta, dtype=np.float64)
        if theta.ndim != 2 or theta.shape[0] != 2 or theta.shape[1] < 1:
            raise ValueError(f"theta must have shape (2, L), got {theta.shape}")
        if theta[0, 0] != theta[1, 0]:
            raise ValueError("both rows of the root column must hold the root probability")
        self.theta = np.clip(theta, THETA_MIN, 1.0 - THETA_MIN)

    @property
    def rho_root(self) -> float:
        return float(self.theta[0, 0])

    @property
    def depth(self) -> int:
        return self.theta.shape[1]

    @classmethod
    def initial(cls, depth: int, rho_root: float = 0.5, theta0: float = 0.1, theta1: float = 0.9):
        theta = np.empty((2, depth))
        theta[0, :] = theta0
        theta[1, :] = theta1
        theta[:, 0] = rho_root
        return cls(theta)

    def log_cpt(self, lvl: int) -> np.ndarray:
        """(2, 2) table log P(child state k | parent state r) at level lvl."""
        t = self.theta[:, lvl - 1]
        return np.stack([np.log1p(-t), np.log(t)])  # [k, r]

    def log_root_prior(self) -> np.ndarray:
        rho = self.rho_root
        return np.array([np.log1p(-rho), np.log(rho)])


@dataclass
class TreeMarginals:
    """Exact posterior summaries of the evidence-weighted forest.

    ``qpair[j, k, r]`` is the joint probability of node j in state k and
    its parent in state r; rows of root nodes are zero.  ``exp_log_q`` is
    the expectation of the posterior's own log mass function, kept so the
    divergence from the prior can be re-evaluated after CPT updates.
    """

    q1: np.ndarray
    qpair: np.ndarray
    logZ: float
    exp_log_q: float


def _validate_marginals(topo: TreeTopology, q: np.ndarray, qpair: np.ndarray):
    if np.any(q < -_CONSISTENCY_TOL) or np.any(q > 1.0 + _CONSISTENCY_TOL):
        raise FloatingPointError("node marginals left [0, 1]")
    nonroot = np.flatnonzero(topo.parent >= 0)
    if nonroot.size == 0:
        return
    pair = qpair[nonroot]
    if np.max(np.abs(pair.sum(axis=(1, 2)) - 1.0)) > _CONSISTENCY_TOL:
        raise FloatingPointError("pairwise marginals do not normalize")
    child_marg = pair.sum(axis=2)[:, 1]
    if np.max(np.abs(child_marg - q[nonroot])) > _CONSISTENCY_TOL:
        raise FloatingPointError("pairwise/child marginal mismatch")
    parent_marg = pair.sum(axis=1)[:, 1]
    if np.max(np.abs(parent_marg - q[topo.parent[nonroot]])) > _CONSISTENCY_TOL:
        raise FloatingPointError("pairwise/parent marginal mismatch")


def bp_infer(topo: TreeTopology, params: TreeParams, evidence: np.ndarray) -> TreeMarginals:
    """Exact sum-product inference on the forest.

    ``evidence[j]`` holds (log potential at state 0, log potential at
    state 1) for node j.  Returns single and pairwise marginals, the log
    partition function of the evidence-weighted forest, and the posterior
    log-mass expectation.
    """
    evidence = np.asarray(evidence, dtype=np.float64)
    if evidence.shape != (topo.n_nodes, 2):
        raise ValueError(
            f"evidence must have shape ({topo.n_nodes}, 2), got {evidence.shape}"
        )
    if not np.all(np.isfinite(evidence)):
        raise ValueError("evidence must be finite")
    if params.depth < topo.depth:
        raise ValueError("params shallower than the forest")

    # All retained per-state quantities are max-normalized per node, with the
    # subtracted constants accumulated separately into per-subtree offsets;
    # deep forests with strong evidence would otherwise lose the probability
    # scale to float cancellation of huge common terms.
    n = topo.n_nodes
    raw = evidence.copy()  # evidence plus incoming normalized messages
    offset = np.zeros(n)  # accumulated normalizers of each node's subtree
    lbh = np.empty((n, 2))  # normalized upward beliefs, max entry 0
    msg = np.zeros((n, 2))  # normalized message to the parent, per parent state

    for lvl in range(topo.depth, 0, -1):
        nodes = topo.level_nodes[lvl - 1]
        r = raw[nodes]
        shift = np.max(r, axis=1)
        lbh[nodes] = r - shift[:, None]
        offset[nodes] += shift
        if lvl > 1:
            lcpt = params.log_cpt(lvl)
            lb = lbh[nodes]
            # m[j, r] = logsumexp_k ( log P(k | r) + lbh[j, k] )
            m = np.logaddexp(lcpt[0][None, :] + lb[:, 0, None], lcpt[1][None, :] + lb[:, 1, None])
            msg[nodes] = m
            pa = topo.parent[nodes]
            np.add.at(raw, pa, m)
            np.add.at(offset, pa, offset[nodes])

    roots = topo.roots
    log_prior = params.log_root_prior()
    root_belief = log_prior[None, :] + lbh[roots]
    root_lse = np.logaddexp(root_belief[:, 0], root_belief[:, 1])
    logZ = float(np.sum(root_lse + offset[roots]))

    # Downward sweep on normalized quantities; per-node offsets are common
    # to both states and cancel in every normalization below.
    alpha = np.zeros((n, 2))
    alpha[roots] = log_prior[None, :] - root_lse[:, None]
    log_q = alpha + lbh
    log_q -= np.logaddexp(log_q[:, 0], log_q[:, 1])[:, None]
    qpair = np.zeros((n, 2, 2))
    for lvl in range(2, topo.depth + 1):
        nodes = topo.level_nodes[lvl - 1]
        pa = topo.parent[nodes]
        lcpt = params.log_cpt(lvl)
        # parent belief with this child's own message removed
        log_f = alpha[pa] + lbh[pa] - msg[nodes]
        lp = log_f[:, None, :] + lcpt[None, :, :] + lbh[nodes][:, :, None]
        norm = np.logaddexp(
            np.logaddexp(lp[:, 0, 0], lp[:, 0, 1]), np.logaddexp(lp[:, 1, 0], lp[:, 1, 1])
        )
        qpair[nodes] = np.exp(lp - norm[:, None, None])
        a_raw = np.logaddexp(
            log_f[:, None, 0] + lcpt[None, :, 0], log_f[:, None, 1] + lcpt[None, :, 1]
        )
        alpha[nodes] = a_raw - np.max(a_raw, axis=1)[:, None]
        lq = alpha[nodes] + lbh[nodes]
        log_q[nodes] = lq - np.logaddexp(lq[:, 0], lq[:, 1])[:, None]

    q = np.exp(log_q)
    q1 = q[:, 1]
    _validate_marginals(topo, q1, qpair)

    marg = TreeMarginals(q1=q1, qpair=qpair, logZ=logZ, exp_log_q=0.0)
    expected_evidence = float((1.0 - q1) @ evidence[:, 0] + q1 @ evidence[:, 1])
    marg.exp_log_q = expected_log_prior(topo, params, marg) + expected_evidence - logZ
    return marg


def expected_log_prior(topo: TreeTopology, params: TreeParams, marg: TreeMarginals) -> float:
    """E_Q[log P(states)] from single and pairwise marginals."""
    log_prior = params.log_root_prior()
    q1r = marg.q1[topo.roots]
    total = float(np.sum((1.0 - q1r) * log_prior[0] + q1r * log_prior[1]))
    for lvl in range(2, topo.depth + 1):
        nodes = topo.level_nodes[lvl - 1]
        lcpt = params.log_cpt(lvl)
        total += float(np.sum(marg.qpair[nodes] * lcpt[None, :, :]))
    return total


def kl_to_prior(marg: TreeMarginals, evidence: np.ndarray) -> float:
    """KL divergence of the posterior from the prior.

    Valid only for marginals produced by :func:`bp_infer` from the same
    evidence: equals expected evidence minus the log partition function.
    """
    evidence = np.asarray(evidence, dtype=np.float64)
    q1 = marg.q1
    return float((1.0 - q1) @ evidence[:, 0] + q1 @ evidence[:, 1] - marg.logZ)


def kl_current(topo: TreeTopology, params: TreeParams, marg: TreeMarginals) -> float:
    """KL divergence of stored marginals from the prior at (possibly new) params."""
    return marg.exp_log_q - expected_log_prior(topo, params, marg)


def update_theta(topo: TreeTopology, marg: TreeMarginals, prev: TreeParams) -> TreeParams:
    """Closed-form CPT update from posterior marginals.

    The root probability becomes the mean root high-state marginal; each
    deeper level's column r becomes the expected fraction of high children
    under parent state r.  Levels with no mass at a parent state keep the
    previous value.
    """
    theta = prev.theta.copy()
    rho = float(np.mean(marg.q1[topo.roots]))
    theta[:, 0] = rho
    for lvl in range(2, topo.depth + 1):
        nodes = topo.level_nodes[lvl - 1]
        pair = marg.qpair[nodes]
        for r in (0, 1):
            den = float(pair[:, 0, r].sum() + pair[:, 1, r].sum())
            if den > 1e-12:
                theta[r, lvl - 1] = pair[:, 1, r].sum() / den
    return TreeParams(theta)
