import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embaug import numerics as nx
from embaug.dagan import GeneratorInd
from embaug.layers import get_weights
from embaug.mil import (
    GanOnline,
    GatedAttention,
    MilConfig,
    MilModel,
    NoAug,
    PatchPrecomputed,
    attention_weights,
    augment_instances,
    load_model,
    mil_forward,
    model_bytes,
    parse_model_bytes,
    pool,
    save_model,
    train_mil,
)
from embaug.numerics import ContractError, DimensionError, Tensor
from embaug.rng import Stream
from embaug.synthdata import Bag, DatasetConfig, OracleAugmenter, ParseError, make_dataset


def small_model(d=6, K=3, seed=0):
    return MilModel(d, K, d_att=8, hidden=5, rng=Stream(seed))


class TestAttention:
    att = GatedAttention(6, 8, Stream(1))

    def test_single_instance(self):
        np.testing.assert_array_equal(attention_weights(self.att, Stream(2).normal((1, 6))), [1.0])

    def test_identical_instances_uniform(self):
        H = np.repeat(Stream(3).normal((1, 6)), 7, axis=0)
        np.testing.assert_allclose(attention_weights(self.att, H), np.full(7, 1 / 7), rtol=1e-15)

    @given(st.integers(1, 40), st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_positive_normalised_equivariant(self, n, seed):
        H = Stream(seed).normal((n, 6)) * 3
        a = attention_weights(self.att, H)
        assert np.all(a > 0)
        assert abs(a.sum() - 1.0) <= 1e-12
        perm = Stream(seed, ("perm",)).permutation(n)
        assert np.array_equal(attention_weights(self.att, H[perm]), a[perm])

    def test_graph_path_matches(self):
        H = Stream(4).normal((9, 6))
        np.testing.assert_allclose(self.att.weights(Tensor(H)).data[:, 0], attention_weights(self.att, H),
                                   rtol=1e-13)

    def test_matches_written_out_formula(self):
        H = Stream(5).normal((4, 6))
        V, U, w = self.att.V, self.att.U, self.att.w
        s = [float(w.W.data[:, 0] @ (np.tanh(h @ V.W.data + V.b.data) * (1 / (1 + np.exp(-(h @ U.W.data + U.b.data)))))
                   + w.b.data[0]) for h in H]
        e = [math.exp(x) for x in s]
        np.testing.assert_allclose(attention_weights(self.att, H), [x / sum(e) for x in e], rtol=1e-13)

    def test_empty_bag(self):
        with pytest.raises(ContractError):
            attention_weights(self.att, np.zeros((0, 6)))


class TestPool:
    def test_single(self):
        h = np.array([[1.0, -2.0, 3.0]])
        np.testing.assert_array_equal(pool(h, np.array([1.0])), h[0])

    def test_identical(self):
        H = np.tile([0.5, 0.25], (4, 1))
        np.testing.assert_allclose(pool(H, np.full(4, 0.25)), [0.5, 0.25], rtol=1e-15)

    @given(st.integers(1, 30), st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_convex_combination(self, n, seed):
        rng = Stream(seed)
        H = rng.normal((n, 5))
        a = rng.uniform(0.01, 1, n)
        a = a / a.sum()
        out = pool(H, a)
        assert out.shape == (5,)
        assert np.all(out >= H.min(axis=0) - 1e-12) and np.all(out <= H.max(axis=0) + 1e-12)

    def test_mismatch(self):
        with pytest.raises(DimensionError):
            pool(np.zeros((3, 2)), np.ones(2) / 2)


class TestForward:
    def test_hand_trace_two_instances(self):
        model = MilModel(2, K=2, d_att=1, hidden=1)
        att = model.attention
        att.V.W.data[:] = [[1.0], [0.0]]
        att.U.W.data[:] = [[0.0], [1.0]]
        att.w.W.data[:] = [[2.0]]
        model.fc1.W.data[:] = [[1.0], [-1.0]]
        model.fc1.b.data[:] = [0.1]
        model.fc2.W.data[:] = [[1.0, -1.0]]
        model.fc2.b.data[:] = [0.0, 0.5]
        H = np.array([[1.0, 2.0], [-1.0, 0.5]])

        sig = lambda x: 1 / (1 + math.exp(-x))
        s = [2.0 * math.tanh(h[0]) * sig(h[1]) for h in H]
        a = [math.exp(x) / sum(math.exp(y) for y in s) for x in s]
        g = [a[0] * H[0, k] + a[1] * H[1, k] for k in range(2)]
        hid = g[0] - g[1] + 0.1
        hid = hid if hid > 0 else 0.2 * hid
        z = [hid, -hid + 0.5]
        expect = [math.exp(v) / (math.exp(z[0]) + math.exp(z[1])) for v in z]
        np.testing.assert_allclose(mil_forward(model, H), expect, rtol=1e-13)

    def test_sums_to_one_and_repeatable(self):
        model = small_model()
        H = Stream(1).normal((11, 6))
        p = mil_forward(model, H)
        assert abs(p.sum() - 1.0) <= 1e-12
        assert mil_forward(model, H).tobytes() == p.tobytes()

    def test_instance_order_invariant(self):
        model = small_model()
        H = Stream(2).normal((13, 6))
        perm = Stream(3).permutation(13)
        np.testing.assert_array_equal(mil_forward(model, H[perm]), mil_forward(model, H))

    def test_gan_p_zero_is_noop(self):
        model = small_model()
        H = Stream(4).normal((5, 6))
        mode = GanOnline(GeneratorInd(6, Stream(0)), p_apply=0.0)
        np.testing.assert_array_equal(mil_forward(model, H, mode, Stream(1)), mil_forward(model, H))

    def test_gan_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            mil_forward(small_model(), np.zeros((3, 6)), GanOnline(GeneratorInd(5)), Stream(0))

    def test_graph_path_matches_numpy(self):
        model = small_model()
        H = Stream(5).normal((7, 6))
        logits, _ = model.logits(Tensor(H))
        np.testing.assert_allclose(nx.softmax(logits, axis=1).data[0], model.predict_proba(H), rtol=1e-13)

    def test_gradients_match_finite_differences(self):
        model = small_model()
        H = Stream(6).normal((5, 6))
        label = 1

        def loss():
            logits, _ = model.logits(Tensor(H))
            return nx.sum(nx.mul(nx.log_softmax(logits, axis=1), -np.eye(3)[label][None, :]))

        params = model.parameters()
        nx.zero_grad(params)
        nx.backward(loss())
        for p in params:
            num = nx.numerical_gradient(lambda: loss().item(), p.data)
            err = np.linalg.norm(p.grad - num) / max(np.linalg.norm(num), 1e-12)
            assert err < 1e-5, (p.shape, err)


class TestAugModes:
    def test_patch_bank_layout(self):
        oracle = OracleAugmenter.random(Stream(0), 8)
        H = Stream(1).normal((4, 8))
        bank = PatchPrecomputed(oracle, 5).precompute(H, Stream(2))
        assert bank.shape == (6, 4, 8)
        np.testing.assert_array_equal(bank[0], H)

    def test_patch_pick_is_from_bank(self):
        oracle = OracleAugmenter.random(Stream(0), 8)
        mode = PatchPrecomputed(oracle, 3)
        H = Stream(1).normal((50, 8))
        bank = mode.precompute(H, Stream(2))
        out = augment_instances(mode, H, Stream(3), bank)
        for i in range(50):
            assert any(np.array_equal(out[i], bank[k, i]) for k in range(4))

    def test_gan_partial_apply_keeps_some_originals(self):
        H = Stream(1).normal((200, 4)) + 5
        out = augment_instances(GanOnline(GeneratorInd(4), 0.5), H, Stream(2))  # zero generator -> zeros
        kept = np.all(out == H, axis=1)
        assert 60 < kept.sum() < 140
        assert np.all(out[~kept] == 0)

    def test_invalid_modes(self):
        with pytest.raises(ContractError):
            GanOnline(GeneratorInd(4), 1.5)
        with pytest.raises(ContractError):
            PatchPrecomputed(OracleAugmenter.random(Stream(0), 8), 0)


@pytest.fixture(scope="module")
def tiny_split():
    ds = make_dataset(5, DatasetConfig(n_bags=20, d=8, mean_bag_size=12, sigma=0.2))
    return ds.bags[:10], ds.bags[10:], ds


class TestTraining:
    def test_zero_epochs_returns_init(self, tiny_split):
        train, val, _ = tiny_split
        cfg = MilConfig(epochs=0, d_att=8, hidden=8, seed=3)
        res = train_mil(train, val, NoAug(), cfg, K=5)
        fresh = MilModel(8, 5, 8, 8, rng=Stream(3, ("mil", "none")).child("init"))
        assert model_bytes(res.model) == model_bytes(fresh)
        assert res.log.best_epoch == -1

    def test_overfits_ten_bags(self, tiny_split):
        train = tiny_split[0]
        # validate on the training bags so model selection does not stop short of memorisation
        res = train_mil(train, train, NoAug(), MilConfig(epochs=200, lr=1e-3, weight_decay=0.0, seed=0), K=5)
        pred = [int(np.argmax(res.model.predict_proba(b.instances))) for b in train]
        assert pred == [b.label for b in train]

    @pytest.mark.parametrize("mode", ["none", "patch", "gan"])
    def test_deterministic(self, tiny_split, mode):
        train, val, ds = tiny_split
        aug = {"none": NoAug(), "patch": PatchPrecomputed(ds.oracle, 2),
               "gan": GanOnline(GeneratorInd(8, Stream(0)))}[mode]
        cfg = MilConfig(epochs=3, lr=1e-3, d_att=8, hidden=8, seed=4)
        a, b = train_mil(train, val, aug, cfg, K=5), train_mil(train, val, aug, cfg, K=5)
        assert a.log == b.log
        assert model_bytes(a.model) == model_bytes(b.model)

    def test_empty_split(self, tiny_split):
        with pytest.raises(ContractError):
            train_mil([], tiny_split[1])

    def test_best_weights_have_best_val_nll(self, tiny_split):
        from embaug.mil import bag_nll
        train, val, _ = tiny_split
        res = train_mil(train, val, NoAug(), MilConfig(epochs=8, lr=3e-3, d_att=8, hidden=8), K=5)
        assert bag_nll(res.model, val) == pytest.approx(res.log.best_val_nll, rel=1e-12)
        assert res.log.best_val_nll <= min(res.log.val_nll)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = MilModel(6, 5, d_att=7, hidden=9, rng=Stream(0))
        path = save_model(model, tmp_path / "m.eam")
        back = load_model(path)
        assert (back.d, back.d_att, back.K, back.hidden) == (6, 7, 5, 9)
        for a, b in zip(get_weights(model.parameters()), get_weights(back.parameters())):
            assert a.tobytes() == b.tobytes()
        assert path.with_suffix(".meta.json").exists()

    def test_corruptions(self):
        buf = model_bytes(small_model())
        with pytest.raises(ParseError) as exc:
            parse_model_bytes(b"EAG1" + buf[4:])
        assert exc.value.offset == 0
        with pytest.raises(ParseError, match="version"):
            parse_model_bytes(buf[:4] + (2).to_bytes(4, "little") + buf[8:])
        with pytest.raises(ParseError, match="truncated"):
            parse_model_bytes(buf[:10])
        with pytest.raises(ParseError):
            parse_model_bytes(buf[:-8])
