import numpy as np
import pytest

from treewave import tree, wavelet


def enumerate_forest(topo, params, evidence):
    """Brute-force reference: per-tree enumeration over all state vectors.

    Returns (q1, qpair, logZ, kl) computed directly from the definition.
    Trees of the forest are handled independently and combined.
    """
    n = topo.n_nodes
    children = [[] for _ in range(n)]
    tree_id = np.full(n, -1)
    for j in np.argsort(topo.level, kind="stable"):
        p = topo.parent[j]
        if p < 0:
            tree_id[j] = j
        else:
            children[p].append(j)
            tree_id[j] = tree_id[p]

    q1 = np.zeros(n)
    qpair = np.zeros((n, 2, 2))
    logZ = 0.0
    kl = 0.0
    lroot = params.log_root_prior()
    for root in np.flatnonzero(topo.parent < 0):
        nodes = np.flatnonzero(tree_id == tree_id[root])
        k = nodes.size
        assert k <= 20, "enumeration oracle limited to small trees"
        states = (np.arange(2**k)[:, None] >> np.arange(k)) & 1
        local = {j: i for i, j in enumerate(nodes)}
        logp = lroot[states[:, local[root]]].astype(float)
        for j in nodes:
            if topo.parent[j] >= 0:
                lcpt = params.log_cpt(int(topo.level[j]))
                logp += lcpt[states[:, local[j]], states[:, local[topo.parent[j]]]]
            logp += evidence[j][states[:, local[j]]]
        mx = logp.max()
        w = np.exp(logp - mx)
        Z = float(w.sum())
        logZ += float(np.log(Z) + mx)
        post = w / Z
        for j in nodes:
            q1[j] = float(post @ states[:, local[j]])
            if topo.parent[j] >= 0:
                for kk in (0, 1):
                    for rr in (0, 1):
                        sel = (states[:, local[j]] == kk) & (
                            states[:, local[topo.parent[j]]] == rr
                        )
                        qpair[j, kk, rr] = float(post[sel].sum())
        # direct sum of Q log(Q/P) over configurations
        logprior = lroot[states[:, local[root]]].astype(float)
        for j in nodes:
            if topo.parent[j] >= 0:
                lcpt = params.log_cpt(int(topo.level[j]))
                logprior += lcpt[states[:, local[j]], states[:, local[topo.parent[j]]]]
        logpost = logp - (np.log(Z) + mx)
        kl += float(post @ (logpost - logprior))
    return q1, qpair, logZ, kl


def random_forest(rng, max_tree_nodes=14, max_depth=5, quad=False):
    """Random forest with per-tree size caps so enumeration stays feasible."""
    level = []
    parent = []
    n_roots = int(rng.integers(1, 4))
    for _ in range(n_roots):
        root = len(level)
        tree_size = 1
        level.append(1)
        parent.append(-1)
        frontier = [root]
        depth = int(rng.integers(2, max_depth + 1))
        for l in range(2, depth + 1):
            new_frontier = []
            for node in frontier:
                n_children = 4 if quad else int(rng.integers(0, 3))
                for _ in range(n_children):
                    if tree_size >= max_tree_nodes:
                        break
                    child = len(level)
                    level.append(l)
                    parent.append(node)
                    new_frontier.append(child)
                    tree_size += 1
            frontier = new_frontier
            if not frontier:
                break
    return tree.TreeTopology(np.array(level), np.array(parent))


def random_params(rng, depth):
    theta = rng.uniform(0.05, 0.95, size=(2, depth))
    theta[:, 0] = theta[0, 0]
    return tree.TreeParams(theta)


class TestTopology:
    def test_from_layout_matches_quad_structure(self):
        lay = wavelet.make_layout(16, 16, 3)
        topo = tree.topology_from_layout(lay)
        assert topo.n_nodes == lay.n_detail
        assert topo.depth == 3
        assert topo.roots.size == 3 * (16 * 16) // 4**3
        counts = np.bincount(topo.parent[topo.parent >= 0], minlength=topo.n_nodes)
        internal = topo.level < 3
        assert np.all(counts[internal] == 4)

    def test_rejects_bad_parent_level(self):
        with pytest.raises(ValueError):
            tree.TreeTopology(np.array([1, 3]), np.array([-1, 0]))

    def test_rejects_root_with_wrong_level(self):
        with pytest.raises(ValueError):
            tree.TreeTopology(np.array([2]), np.array([-1]))


class TestParams:
    def test_clamping(self):
        params = tree.TreeParams(np.array([[0.0, 1.0], [0.0, 0.5]]))
        assert params.theta.min() >= tree.THETA_MIN
        assert params.theta.max() <= 1 - tree.THETA_MIN

    def test_root_column_must_match(self):
        with pytest.raises(ValueError):
            tree.TreeParams(np.array([[0.3, 0.5], [0.4, 0.5]]))

    def test_initial(self):
        params = tree.TreeParams.initial(4)
        assert params.rho_root == 0.5
        np.testing.assert_allclose(params.theta[0, 1:], 0.1)
        np.testing.assert_allclose(params.theta[1, 1:], 0.9)


class TestBpSingleNode:
    def test_flat_evidence_returns_prior(self):
        topo = tree.TreeTopology(np.array([1]), np.array([-1]))
        params = tree.TreeParams(np.array([[0.3], [0.3]]))
        marg = tree.bp_infer(topo, params, np.array([[0.0, 0.0]]))
        assert marg.q1[0] == pytest.approx(0.3, abs=1e-14)
        assert marg.logZ == pytest.approx(0.0, abs=1e-14)

    def test_two_term_enumeration(self):
        topo = tree.TreeTopology(np.array([1]), np.array([-1]))
        params = tree.TreeParams(np.array([[0.5], [0.5]]))
        marg = tree.bp_infer(topo, params, np.array([[0.0, np.log(3.0)]]))
        assert marg.q1[0] == pytest.approx(0.75, abs=1e-12)
        assert marg.logZ == pytest.approx(np.log(2.0), abs=1e-12)


class TestBpVsEnumeration:
    def test_random_forests(self):
        rng = np.random.default_rng(0)
        for trial in range(40):
            topo = random_forest(rng, quad=bool(trial % 3 == 0))
            params = random_params(rng, topo.depth)
            ev = rng.normal(scale=2.0, size=(topo.n_nodes, 2))
            marg = tree.bp_infer(topo, params, ev)
            q1, qpair, logZ, _ = enumerate_forest(topo, params, ev)
            np.testing.assert_allclose(marg.q1, q1, atol=1e-10)
            np.testing.assert_allclose(marg.qpair, qpair, atol=1e-10)
            assert marg.logZ == pytest.approx(logZ, abs=1e-10)

    def test_extreme_evidence_stays_finite(self):
        lay = wavelet.make_layout(256, 256, 8)
        topo = tree.topology_from_layout(lay)
        rng = np.random.default_rng(1)
        params = tree.TreeParams.initial(8)
        ev = rng.normal(scale=200.0, size=(topo.n_nodes, 2))
        marg = tree.bp_infer(topo, params, ev)
        assert np.all(np.isfinite(marg.q1))
        assert np.isfinite(marg.logZ)

    def test_marginal_consistency_invariants(self):
        rng = np.random.default_rng(2)
        topo = random_forest(rng, quad=True)
        params = random_params(rng, topo.depth)
        ev = rng.normal(size=(topo.n_nodes, 2))
        marg = tree.bp_infer(topo, params, ev)
        nonroot = np.flatnonzero(topo.parent >= 0)
        sums = marg.qpair[nonroot].sum(axis=(1, 2))
        np.testing.assert_allclose(sums, 1.0, atol=1e-10)
        np.testing.assert_allclose(
            marg.qpair[nonroot].sum(axis=2)[:, 1], marg.q1[nonroot], atol=1e-10
        )
        np.testing.assert_allclose(
            marg.qpair[nonroot].sum(axis=1)[:, 1],
            marg.q1[topo.parent[nonroot]],
            atol=1e-10,
        )

    def test_evidence_shape_validated(self):
        topo = tree.TreeTopology(np.array([1, 2]), np.array([-1, 0]))
        params = tree.TreeParams.initial(2)
        with pytest.raises(ValueError):
            tree.bp_infer(topo, params, np.zeros((1, 2)))
        with pytest.raises(ValueError):
            tree.bp_infer(topo, params, np.full((2, 2), np.nan))


class TestKl:
    def test_flat_evidence_gives_zero(self):
        rng = np.random.default_rng(3)
        topo = random_forest(rng)
        params = random_params(rng, topo.depth)
        ev = np.zeros((topo.n_nodes, 2))
        marg = tree.bp_infer(topo, params, ev)
        assert tree.kl_to_prior(marg, ev) == pytest.approx(0.0, abs=1e-12)

    def test_constant_per_node_evidence_gives_zero(self):
        rng = np.random.default_rng(4)
        topo = random_forest(rng)
        params = random_params(rng, topo.depth)
        shift = rng.normal(size=topo.n_nodes)
        ev = np.stack([shift, shift], axis=1)
        marg = tree.bp_infer(topo, params, ev)
        assert tree.kl_to_prior(marg, ev) == pytest.approx(0.0, abs=1e-10)

    def test_single_node_value(self):
        topo = tree.TreeTopology(np.array([1]), np.array([-1]))
        params = tree.TreeParams(np.array([[0.5], [0.5]]))
        ev = np.array([[0.0, np.log(3.0)]])
        marg = tree.bp_infer(topo, params, ev)
        assert tree.kl_to_prior(marg, ev) == pytest.approx(
            0.75 * np.log(3.0) - np.log(2.0), abs=1e-12
        )

    def test_matches_direct_enumeration(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            topo = random_forest(rng)
            params = random_params(rng, topo.depth)
            ev = rng.normal(scale=1.5, size=(topo.n_nodes, 2))
            marg = tree.bp_infer(topo, params, ev)
            _, _, _, kl = enumerate_forest(topo, params, ev)
            assert tree.kl_to_prior(marg, ev) == pytest.approx(kl, abs=1e-9)
            assert tree.kl_to_prior(marg, ev) >= -1e-9

    def test_kl_current_matches_at_bp_params(self):
        rng = np.random.default_rng(6)
        topo = random_forest(rng)
        params = random_params(rng, topo.depth)
        ev = rng.normal(size=(topo.n_nodes, 2))
        marg = tree.bp_infer(topo, params, ev)
        assert tree.kl_current(topo, params, marg) == pytest.approx(
            tree.kl_to_prior(marg, ev), abs=1e-9
        )

    def test_kl_current_tracks_param_changes(self):
        # moving the CPT away from the fitted posterior increases divergence
        rng = np.random.default_rng(7)
        topo = random_forest(rng, quad=True)
        params = random_params(rng, topo.depth)
        ev = rng.normal(size=(topo.n_nodes, 2))
        marg = tree.bp_infer(topo, params, ev)
        fitted = tree.update_theta(topo, marg, params)
        assert tree.kl_current(topo, fitted, marg) <= tree.kl_current(topo, params, marg) + 1e-12


class TestUpdateTheta:
    def test_root_mean(self):
        level = np.ones(4, dtype=int)
        topo = tree.TreeTopology(level, np.full(4, -1))
        marg = tree.TreeMarginals(
            q1=np.array([0.2, 0.4, 0.6, 0.8]),
            qpair=np.zeros((4, 2, 2)),
            logZ=0.0,
            exp_log_q=0.0,
        )
        params = tree.update_theta(topo, marg, tree.TreeParams.initial(1))
        assert params.rho_root == pytest.approx(0.5, abs=1e-14)

    def test_symmetric_pair_tables(self):
        topo = tree.TreeTopology(np.array([1, 2, 2]), np.array([-1, 0, 0]))
        qpair = np.zeros((3, 2, 2))
        qpair[1:] = 0.25
        marg = tree.TreeMarginals(
            q1=np.array([0.5, 0.5, 0.5]), qpair=qpair, logZ=0.0, exp_log_q=0.0
        )
        params = tree.update_theta(topo, marg, tree.TreeParams.initial(2))
        np.testing.assert_allclose(params.theta[:, 1], 0.5, atol=1e-14)

    def test_zero_mass_keeps_previous(self):
        topo = tree.TreeTopology(np.array([1, 2]), np.array([-1, 0]))
        qpair = np.zeros((2, 2, 2))
        qpair[1, :, 1] = [0.5, 0.5]  # all mass at parent state 1
        marg = tree.TreeMarginals(
            q1=np.array([1.0, 0.5]), qpair=qpair, logZ=0.0, exp_log_q=0.0
        )
        prev = tree.TreeParams(np.array([[0.5, 0.123], [0.5, 0.9]]))
        params = tree.update_theta(topo, marg, prev)
        assert params.theta[0, 1] == pytest.approx(0.123)  # untouched column
        assert params.theta[1, 1] == pytest.approx(0.5)

    def test_matches_numeric_minimizer_of_expected_log_prior(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            topo = random_forest(rng, quad=True)
            params = random_params(rng, topo.depth)
            ev = rng.normal(size=(topo.n_nodes, 2))
            marg = tree.bp_infer(topo, params, ev)
            updated = tree.update_theta(topo, marg, params)

            def objective(theta_rl, r, lvl):
                trial = tree.TreeParams(updated.theta.copy())
                trial.theta[r, lvl - 1] = theta_rl
                if lvl == 1:
                    trial.theta[:, 0] = theta_rl
                return -tree.expected_log_prior(topo, trial, marg)

            grid = np.linspace(1e-4, 1 - 1e-4, 4001)
            for lvl in range(1, topo.depth + 1):
                for r in (0, 1):
                    values = np.array([objective(t, r, lvl) for t in grid])
                    best = grid[np.argmin(values)]
                    got = updated.theta[r, lvl - 1]
                    assert abs(best - got) < 5e-4 or values.min() >= objective(got, r, lvl) - 1e-9

    def test_update_never_increases_divergence_term(self):
        # replacing the posterior by the BP minimizer cannot increase the
        # bound fragment (expected negative evidence plus divergence)
        rng = np.random.default_rng(9)
        for _ in range(10):
            topo = random_forest(rng)
            params = random_params(rng, topo.depth)
            ev_old = rng.normal(size=(topo.n_nodes, 2))
            marg_old = tree.bp_infer(topo, params, ev_old)
            ev_new = rng.normal(size=(topo.n_nodes, 2))

            def fragment(marg):
                expected_ev = float(
                    (1 - marg.q1) @ ev_new[:, 0] + marg.q1 @ ev_new[:, 1]
                )
                return -2.0 * expected_ev + 2.0 * tree.kl_current(topo, params, marg)

            marg_new = tree.bp_infer(topo, params, ev_new)
            assert fragment(marg_new) <= fragment(marg_old) + 1e-9
