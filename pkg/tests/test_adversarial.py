import math

import numpy as np
import pytest

from lexalign.adversarial import (
    EPS,
    DiscriminatorParams,
    TrainerConfig,
    TrainingDivergedError,
    disc_forward,
    disc_loss_and_grad,
    init_discriminator,
    init_state,
    load_checkpoint,
    map_adv_loss_and_grad,
    mean_similarity_criterion,
    named_rng,
    read_history_csv,
    save_checkpoint,
    train,
    train_iteration,
    write_history_csv,
)
from lexalign.embeddings import generate_synthetic_pair
from lexalign.numerics import finite_difference_check, orthogonality_error, random_orthogonal
from lexalign.similarity import CSLS, InnerProduct


def hand_forward(disc, x):
    """Row-by-row forward pass written independently of the vectorized code."""
    out = []
    for row in x:
        h1 = [sum(row[i] * disc.w1[i, j] for i in range(len(row))) + disc.b1[j] for j in range(disc.hidden_dim)]
        a1 = [v if v > 0 else disc.leaky_slope * v for v in h1]
        h2 = [sum(a1[i] * disc.w2[i, j] for i in range(len(a1))) + disc.b2[j] for j in range(disc.hidden_dim)]
        a2 = [v if v > 0 else disc.leaky_slope * v for v in h2]
        logit = sum(a2[i] * disc.w3[i, 0] for i in range(len(a2))) + disc.b3[0]
        out.append(1.0 / (1.0 + math.exp(-logit)))
    return np.array(out)


def small_setup(seed, d=4, hidden=8, batch=5):
    rng = np.random.default_rng(seed)
    disc = init_discriminator(d, hidden, 0.2, rng)
    # larger weights so the leaky branch and the output nonlinearity both matter
    for k in ("w1", "w2", "w3"):
        getattr(disc, k)[...] *= 3.0
    return disc, rng.standard_normal((batch, d)), rng.standard_normal((batch, d)), rng


class TestForward:
    def test_zero_params(self):
        disc = DiscriminatorParams.zeros(4, 8)
        np.testing.assert_array_equal(disc_forward(disc, np.random.default_rng(0).standard_normal((6, 4))), 0.5)

    def test_rows_independent(self):
        disc = init_discriminator(4, 16, rng=0)
        x = np.random.default_rng(1).standard_normal((32, 4))
        full = disc_forward(disc, x)
        single = np.array([disc_forward(disc, x[i:i + 1])[0] for i in range(32)])
        # BLAS picks different kernels for 1-row and 32-row products
        assert np.max(np.abs(full - single)) <= 1e-14

    def test_hand_oracle(self):
        disc = init_discriminator(4, 8, rng=2)
        x = np.random.default_rng(3).standard_normal((1, 4))
        assert abs(disc_forward(disc, x)[0] - hand_forward(disc, x)[0]) <= 1e-12

    def test_clamped(self):
        disc = DiscriminatorParams.zeros(2, 3)
        disc.b3[0] = 100.0
        assert disc_forward(disc, np.ones((1, 2)))[0] == 1 - EPS

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            disc_forward(init_discriminator(4, 8, rng=0), np.ones((2, 3)))

    def test_default_architecture(self):
        disc = init_discriminator(300, rng=0)
        assert disc.w1.shape == (300, 2048) and disc.w2.shape == (2048, 2048) and disc.w3.shape == (2048, 1)


class TestDiscLoss:
    def test_half(self):
        disc = DiscriminatorParams.zeros(4, 8)
        loss, _ = disc_loss_and_grad(disc, np.ones((3, 4)), np.zeros((5, 4)))
        assert loss == pytest.approx(2 * math.log(2), abs=1e-15)

    def test_duplication_invariant(self):
        disc, f, r, _ = small_setup(0)
        a, _ = disc_loss_and_grad(disc, f, r)
        b, _ = disc_loss_and_grad(disc, np.vstack([f, f]), np.vstack([r, r]))
        assert a == pytest.approx(b, rel=1e-14)

    def test_matches_formula(self):
        disc, f, r, _ = small_setup(1)
        loss, _ = disc_loss_and_grad(disc, f, r)
        pf, pr = hand_forward(disc, f), hand_forward(disc, r)
        assert loss == pytest.approx(-np.mean(np.log(pf)) - np.mean(np.log(1 - pr)), rel=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_gradients(self, seed):
        disc, f, r, _ = small_setup(seed)
        _, grads = disc_loss_and_grad(disc, f, r)
        for name, g in grads.items():
            rep = finite_difference_check(lambda _: disc_loss_and_grad(disc, f, r)[0], getattr(disc, name), g)
            assert rep.max_rel_error <= 1e-4, (name, rep)

    def test_empty_batch(self):
        disc, f, _, _ = small_setup(0)
        with pytest.raises(ValueError):
            disc_loss_and_grad(disc, f, np.empty((0, 4)))


class TestMapLoss:
    @pytest.mark.parametrize("seed", range(20))
    def test_single_map_gradient(self, seed):
        disc, s, t, rng = small_setup(seed)
        w = random_orthogonal(4, rng) + 0.1 * rng.standard_normal((4, 4))
        _, g = map_adv_loss_and_grad([w], disc, s, t)
        rep = finite_difference_check(lambda m: map_adv_loss_and_grad([m], disc, s, t)[0], w, g)
        assert rep.max_rel_error <= 1e-4, rep

    @pytest.mark.parametrize("seed", range(20))
    def test_chain_gradient(self, seed):
        disc, s, _, rng = small_setup(seed)
        w = random_orthogonal(4, rng) + 0.1 * rng.standard_normal((4, 4))
        z = random_orthogonal(4, rng) + 0.1 * rng.standard_normal((4, 4))
        _, g = map_adv_loss_and_grad([w, z], disc, s, s)
        rep = finite_difference_check(lambda m: map_adv_loss_and_grad([m, z], disc, s, s)[0], w, g)
        assert rep.max_rel_error <= 1e-4, rep

    def test_identity_composition(self):
        disc, s, t, _ = small_setup(3)
        w = random_orthogonal(4, 9)
        a, _ = map_adv_loss_and_grad([w, np.eye(4)], disc, s, t)
        b, _ = map_adv_loss_and_grad([w], disc, s, t)
        assert a == b

    def test_frozen_second_map(self):
        disc, s, _, _ = small_setup(4)
        w, z = random_orthogonal(4, 1), random_orthogonal(4, 2)
        loss_a, g = map_adv_loss_and_grad([w, z], disc, s, s)
        loss_b, _ = map_adv_loss_and_grad([w, z + 0.1], disc, s, s)
        assert loss_a != loss_b
        assert g.shape == w.shape  # one gradient block, for the first map only

    def test_half_loss(self):
        disc = DiscriminatorParams.zeros(4, 8)
        loss, g = map_adv_loss_and_grad([np.eye(4)], disc, np.ones((2, 4)), np.ones((2, 4)))
        assert loss == pytest.approx(2 * math.log(2), abs=1e-15)
        np.testing.assert_array_equal(g, 0.0)

    def test_chain_length(self):
        disc, s, t, _ = small_setup(0)
        with pytest.raises(ValueError):
            map_adv_loss_and_grad([], disc, s, t)
        with pytest.raises(ValueError):
            map_adv_loss_and_grad([np.eye(3)], disc, s, t)


def scripted_iteration(w, z, d1, d2, s, t, lr, beta):
    """Reference for one iteration, written as a straight-line script."""
    d1, d2 = d1.copy(), d2.copy()
    _, g = disc_loss_and_grad(d1, s @ w.T, t)
    for k in g:
        setattr(d1, k, getattr(d1, k) - lr * g[k])
    _, g = disc_loss_and_grad(d2, s @ w.T @ z.T, s)
    for k in g:
        setattr(d2, k, getattr(d2, k) - lr * g[k])
    _, gw = map_adv_loss_and_grad([w], d1, s, t)
    w = w - lr * gw
    _, gw = map_adv_loss_and_grad([w, z], d2, s, s)
    w = w - lr * gw
    _, gz = map_adv_loss_and_grad([z], d2, s @ w.T, s)
    z = z - lr * gz
    w = (1 + beta) * w - beta * w @ w.T @ w
    z = (1 + beta) * z - beta * z @ z.T @ z
    return w, z, d1, d2


class TestIteration:
    def setup_method(self):
        self.pair = generate_synthetic_pair(0, 200, 4, 0.01, clusters=5)
        self.cfg = TrainerConfig(batch_size=6, hidden_dim=8, seed=3, beta=0.01, lr0=0.1)

    def test_scripted_oracle(self):
        state = init_state(self.cfg, 4)
        rng = np.random.default_rng(11)
        ref_rng = np.random.default_rng(11)
        s = self.pair.source.vectors[ref_rng.integers(200, size=6)]
        t = self.pair.target.vectors[ref_rng.integers(200, size=6)]
        w, z, d1, d2 = scripted_iteration(state.w, state.z, state.d1, state.d2, s, t, 0.1, 0.01)
        train_iteration(state, self.cfg, self.pair.source, self.pair.target, rng)
        assert np.max(np.abs(state.w - w)) <= 1e-10
        assert np.max(np.abs(state.z - z)) <= 1e-10
        for k in DiscriminatorParams.PARAM_NAMES:
            assert np.max(np.abs(getattr(state.d1, k) - getattr(d1, k))) <= 1e-10
            assert np.max(np.abs(getattr(state.d2, k) - getattr(d2, k))) <= 1e-10

    def test_zero_lr(self):
        cfg = TrainerConfig(batch_size=6, hidden_dim=8, lr0=0.0, beta=0.0)
        state = init_state(cfg, 4)
        before = state.copy()
        train_iteration(state, cfg, self.pair.source, self.pair.target, np.random.default_rng(0))
        assert np.array_equal(state.w, before.w) and np.array_equal(state.z, before.z)
        for k in DiscriminatorParams.PARAM_NAMES:
            assert np.array_equal(getattr(state.d1, k), getattr(before.d1, k))

    def test_zero_lr_orthogonal_init_fixed(self):
        cfg = TrainerConfig(batch_size=6, hidden_dim=8, lr0=0.0, beta=0.01)
        state = init_state(cfg, 4)
        w0 = state.w.copy()
        train_iteration(state, cfg, self.pair.source, self.pair.target, np.random.default_rng(0))
        assert np.max(np.abs(state.w - w0)) <= 1e-12

    def test_beta_zero_skips_orthogonalization(self):
        cfg = TrainerConfig(batch_size=6, hidden_dim=8, seed=3, beta=0.0)
        state = init_state(cfg, 4)
        rng = np.random.default_rng(11)
        ref_rng = np.random.default_rng(11)
        s = self.pair.source.vectors[ref_rng.integers(200, size=6)]
        t = self.pair.target.vectors[ref_rng.integers(200, size=6)]
        w, z, _, _ = scripted_iteration(state.w, state.z, state.d1, state.d2, s, t, 0.1, 0.0)
        train_iteration(state, cfg, self.pair.source, self.pair.target, rng)
        assert np.max(np.abs(state.w - w)) <= 1e-10

    def test_alternate_schedule(self):
        cfg = TrainerConfig(batch_size=6, hidden_dim=8, w_schedule="alternate")
        state = init_state(cfg, 4)
        rng = np.random.default_rng(0)
        for _ in range(4):
            train_iteration(state, cfg, self.pair.source, self.pair.target, rng)
        assert state.iteration == 4

    def test_sample_vocab_limit(self):
        cfg = TrainerConfig(batch_size=64, hidden_dim=8, sample_vocab_limit=3, lr0=0.0, beta=0.0)
        state = init_state(cfg, 4)
        src = self.pair.source.vectors.copy()
        src[3:] = np.nan  # any row past the limit would make the losses non-finite
        train_iteration(state, cfg, src, self.pair.target, np.random.default_rng(0))
        assert state.iteration == 1

    def test_nonfinite_loss(self):
        cfg = TrainerConfig(batch_size=4, hidden_dim=8)
        state = init_state(cfg, 4)
        bad = np.full((10, 4), np.nan)
        with pytest.raises(TrainingDivergedError):
            train_iteration(state, cfg, bad, bad, np.random.default_rng(0))

    def test_orthogonalization_never_hurts(self):
        cfg = TrainerConfig(batch_size=16, hidden_dim=16, beta=0.01)
        state = init_state(cfg, 4)
        rng = np.random.default_rng(0)
        import lexalign.adversarial as adv

        recorded = []
        real_step = adv.orthogonalize_step

        def spy(w, beta):
            out = real_step(w, beta)
            recorded.append((orthogonality_error(w), orthogonality_error(out)))
            return out

        adv.orthogonalize_step = spy
        try:
            for _ in range(200):
                train_iteration(state, cfg, self.pair.source, self.pair.target, rng)
        finally:
            adv.orthogonalize_step = real_step
        assert len(recorded) == 400
        assert all(after <= before for before, after in recorded)


class TestCriterion:
    def test_perfect_alignment(self):
        p = generate_synthetic_pair(0, 300, 8, 0.0, shuffle_target=True)
        assert mean_similarity_criterion(p.ground_truth_rotation, p.source, p.target, 100, InnerProduct) == pytest.approx(1.0, abs=1e-9)

    def test_truth_beats_random(self):
        p = generate_synthetic_pair(1, 500, 8, 0.01, clusters=10)
        for metric in (InnerProduct, CSLS(10)):
            good = mean_similarity_criterion(p.ground_truth_rotation, p.source, p.target, 200, metric)
            bad = mean_similarity_criterion(random_orthogonal(8, 7), p.source, p.target, 200, metric)
            assert good > bad

    def test_clamp(self):
        p = generate_synthetic_pair(2, 50, 4, 0.01)
        w = random_orthogonal(4, 0)
        for metric in (InnerProduct, CSLS(5)):
            assert mean_similarity_criterion(w, p.source, p.target, 10_000, metric) == \
                mean_similarity_criterion(w, p.source, p.target, 50, metric)

    def test_range(self):
        p = generate_synthetic_pair(3, 100, 6, 0.1)
        v = mean_similarity_criterion(random_orthogonal(6, 1), p.source, p.target, 100, InnerProduct)
        assert -1.0 <= v <= 1.0


class TestTrain:
    def setup_method(self):
        self.pair = generate_synthetic_pair(0, 300, 4, 0.01, clusters=6)

    def cfg(self, **kw):
        base = dict(batch_size=16, hidden_dim=16, steps_per_epoch=30, epochs=3, seed=5, criterion_k=300)
        base.update(kw)
        return TrainerConfig(**base)

    def test_zero_epochs(self):
        st = train(self.cfg(epochs=0), self.pair.source, self.pair.target)
        assert st.history == []
        init = named_rng(5, "init")
        np.testing.assert_array_equal(st.best_w, random_orthogonal(4, init))
        np.testing.assert_array_equal(st.best_z, random_orthogonal(4, init))

    def test_deterministic(self):
        a = train(self.cfg(), self.pair.source, self.pair.target)
        b = train(self.cfg(), self.pair.source, self.pair.target)
        assert a.history == b.history
        assert np.array_equal(a.best_w, b.best_w)

    def test_history_and_lr(self):
        st = train(self.cfg(epochs=4), self.pair.source, self.pair.target)
        assert [r.epoch for r in st.history] == [0, 1, 2, 3]
        assert st.current_lr == pytest.approx(0.1 * 0.95**4)

    def test_best_checkpoint(self):
        st = train(self.cfg(epochs=4), self.pair.source, self.pair.target)
        crit = [r.criterion for r in st.history]
        assert st.best_criterion == max(crit)
        assert st.best_epoch == int(np.argmax(crit))
        again = mean_similarity_criterion(st.best_w, self.pair.source, self.pair.target, 300, CSLS(10))
        assert abs(again - st.best_criterion) <= 1e-9

    def test_dimension_mismatch(self):
        other = generate_synthetic_pair(0, 300, 5)
        with pytest.raises(ValueError):
            train(self.cfg(), self.pair.source, other.target)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainerConfig(lr_decay_per_epoch=0.0)
        with pytest.raises(ValueError):
            TrainerConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainerConfig(w_schedule="sometimes")
        with pytest.raises(ValueError):
            TrainerConfig(restarts=0)

    def test_restart_zero_matches_single_run(self):
        single = train(self.cfg(), self.pair.source, self.pair.target)
        multi = train(self.cfg(restarts=3), self.pair.source, self.pair.target)
        assert len(multi.restart_criteria) == 3
        assert multi.restart_criteria[0] == single.best_criterion
        assert multi.best_criterion == max(multi.restart_criteria)
        assert multi.restart == multi.restart_criteria.index(max(multi.restart_criteria))
        if multi.restart == 0:
            assert np.array_equal(multi.best_w, single.best_w)

    def test_restarts_differ(self):
        a = init_state(self.cfg(), 4, restart=0)
        b = init_state(self.cfg(), 4, restart=1)
        assert not np.allclose(a.w, b.w)


def test_checkpoint_round_trip(tmp_path):
    w, z = random_orthogonal(5, 0), np.random.default_rng(1).standard_normal((5, 5))
    path = tmp_path / "map.txt"
    save_checkpoint(path, w, z)
    assert path.read_text().splitlines()[0] == "LEXALIGN-MAP v1 5"
    w2, z2 = load_checkpoint(path)
    assert np.array_equal(w, w2) and np.array_equal(z, z2)


def test_checkpoint_malformed(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("LEXALIGN-MAP v1 2\n1 0\n0 1\nZ\n1 0\n")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_history_csv(tmp_path):
    pair = generate_synthetic_pair(0, 100, 4, 0.01)
    st = train(TrainerConfig(batch_size=8, hidden_dim=8, steps_per_epoch=5, epochs=2, criterion_k=50),
               pair.source, pair.target)
    path = tmp_path / "history.csv"
    write_history_csv(path, st.history)
    assert path.read_text().splitlines()[0] == "epoch,criterion,d1_loss,d2_loss,w_loss,z_loss"
    assert read_history_csv(path) == st.history
