import numpy as np
import pytest

from multimask_inpaint.layout import LayoutTensor
from multimask_inpaint.rca import (
    AttentionInputs,
    HookHandle,
    UnsupportedBackboneError,
    all_ones_provider,
    attention_logits,
    install_hooks,
    rca_attention,
    rca_attention_backward,
    rca_attention_with_cache,
    rectify,
)


def random_instance(rng, heads=1, n_tokens=3, h=2, w=2, d=4):
    q = rng.normal(size=(heads, h * w, d))
    k = rng.normal(size=(heads, n_tokens, d))
    v = rng.normal(size=(heads, n_tokens, d))
    return AttentionInputs(q=q, k=k, v=v, spatial=(h, w))


def random_layout(rng, n_tokens, h, w):
    """Random layout where every cell keeps at least one active token."""
    bits = (rng.random((n_tokens, h, w)) < 0.5).astype(np.uint8)
    for i in range(h):
        for j in range(w):
            if not bits[:, i, j].any():
                bits[int(rng.integers(n_tokens)), i, j] = 1
    return LayoutTensor(bits=bits, resolution=(h, w))


def masked_softmax_oracle(inputs, layout):
    """Scalar-loop reference: per-cell softmax over active tokens only."""
    heads, hw, d = inputs.q.shape
    n_tok = inputs.n_tokens
    h, w = inputs.spatial
    out = np.zeros((heads, hw, d))
    for hd in range(heads):
        for c in range(hw):
            logits = []
            for t in range(n_tok):
                s = 0.0
                for e in range(d):
                    s += inputs.q[hd, c, e] * inputs.k[hd, t, e]
                logits.append(s * inputs.scale)
            active = [t for t in range(n_tok) if layout is None or layout.bits[t, c // w, c % w]]
            mx = max(logits[t] for t in active)
            exps = {t: np.exp(logits[t] - mx) for t in active}
            z = sum(exps.values())
            for t in active:
                for e in range(d):
                    out[hd, c, e] += (exps[t] / z) * inputs.v[hd, t, e]
    return out


class TestAttentionLogits:
    def test_unit_vectors_dot_products(self):
        q = np.eye(2)[None]  # 2 cells, d=2
        k = np.eye(2)[None]
        inputs = AttentionInputs(q=q, k=k, v=k, spatial=(1, 2), scale=1.0)
        logits = attention_logits(inputs)
        assert logits.shape == (1, 2, 1, 2)
        np.testing.assert_allclose(logits[0, :, 0, :], np.eye(2))

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(0)
        inputs = random_instance(rng, n_tokens=2, h=2, w=2, d=3)
        logits = attention_logits(inputs)
        for t in range(2):
            for c in range(4):
                expect = float(np.dot(inputs.q[0, c], inputs.k[0, t])) * inputs.scale
                assert abs(logits[0, t, c // 2, c % 2] - expect) < 1e-6

    def test_scale_is_inverse_sqrt_d(self):
        rng = np.random.default_rng(1)
        q = rng.normal(size=(1, 4, 16))
        k = rng.normal(size=(1, 3, 16))
        inputs = AttentionInputs(q=q, k=k, v=k, spatial=(2, 2))
        explicit = AttentionInputs(q=q, k=k, v=k, spatial=(2, 2), scale=1 / 4.0)
        np.testing.assert_allclose(attention_logits(inputs), attention_logits(explicit))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            AttentionInputs(q=np.zeros((1, 4, 3)), k=np.zeros((1, 2, 5)),
                            v=np.zeros((1, 2, 5)), spatial=(2, 2))


class TestRectify:
    def test_all_ones_is_noop(self):
        rng = np.random.default_rng(2)
        inputs = random_instance(rng)
        logits = attention_logits(inputs)
        layout = LayoutTensor.all_ones(3, (2, 2))
        rect = rectify(logits, layout)
        np.testing.assert_array_equal(rect.logits, logits)

    def test_case_split(self):
        # 2 tokens, 1x2 cells, token0 active only at cell0
        logits = np.arange(4, dtype=np.float64).reshape(1, 2, 1, 2)
        bits = np.array([[[1, 0]], [[1, 1]]], dtype=np.uint8)
        rect = rectify(logits, LayoutTensor(bits=bits, resolution=(1, 2)))
        sentinel = np.finfo(np.float64).min
        assert rect.logits[0, 0, 0, 0] == logits[0, 0, 0, 0]
        assert rect.logits[0, 0, 0, 1] == sentinel
        assert (rect.logits[0, 1] == logits[0, 1]).all()

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        inputs = random_instance(rng)
        layout = random_layout(rng, 3, 2, 2)
        once = rectify(attention_logits(inputs), layout).logits
        twice = rectify(once, layout).logits
        np.testing.assert_array_equal(once, twice)

    def test_fully_masked_cell_policy(self):
        logits = np.zeros((1, 2, 1, 1))
        dead = LayoutTensor(bits=np.zeros((2, 1, 1), dtype=np.uint8), resolution=(1, 1))
        with pytest.raises(ValueError):
            rectify(logits, dead)
        rect = rectify(logits, dead, on_fully_masked="fallback")
        assert np.isfinite(rect.logits).all()

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(4)
        inputs = random_instance(rng, n_tokens=4)
        layout = random_layout(rng, 4, 2, 2)
        logits = attention_logits(inputs)
        perm = rng.permutation(4)
        a = rectify(logits, layout).logits[:, perm]
        b = rectify(logits[:, perm],
                    LayoutTensor(bits=layout.bits[perm], resolution=(2, 2))).logits
        np.testing.assert_array_equal(a, b)


class TestRcaAttention:
    def test_all_ones_equals_vanilla(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            inputs = random_instance(rng, heads=2, n_tokens=5, h=3, w=2, d=4)
            vanilla = rca_attention(inputs, layout=None)
            ones = rca_attention(inputs, LayoutTensor.all_ones(5, (3, 2)))
            assert np.abs(vanilla - ones).max() <= 1e-6

    def test_matches_masked_softmax_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            inputs = random_instance(rng, n_tokens=4, h=4, w=4, d=3)
            layout = random_layout(rng, 4, 4, 4)
            got = rca_attention(inputs, layout)
            want = masked_softmax_oracle(inputs, layout)
            assert np.abs(got - want).max() < 1e-6

    def test_zero_weight_guarantee_exact(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            inputs = random_instance(rng, n_tokens=4, h=2, w=2, d=3)
            layout = random_layout(rng, 4, 2, 2)
            _, cache = rca_attention_with_cache(inputs, layout)
            weights = cache["weights"].reshape(1, 4, 4)
            for t in range(4):
                for c in range(4):
                    if layout.bits[t, c // 2, c % 2] == 0:
                        assert weights[0, t, c] == 0.0

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(8)
        inputs = random_instance(rng, n_tokens=6, h=3, w=3, d=4)
        layout = random_layout(rng, 6, 3, 3)
        _, cache = rca_attention_with_cache(inputs, layout)
        sums = cache["weights"].sum(axis=1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-6)

    def test_exclusive_cell_is_convex_combination_of_span(self):
        rng = np.random.default_rng(9)
        # token 0 exclusive at cell 0; tokens 1,2 act like specials (all ones)
        bits = np.ones((3, 1, 2), dtype=np.uint8)
        bits[0, 0, 1] = 0
        inputs = random_instance(rng, n_tokens=3, h=1, w=2, d=3)
        layout = LayoutTensor(bits=bits, resolution=(1, 2))
        _, cache = rca_attention_with_cache(inputs, layout)
        w = cache["weights"]
        assert w[0, 0, 1] == 0.0
        assert abs(w[0, :, 1].sum() - 1.0) < 1e-12


class TestGradients:
    def finite_difference(self, inputs, layout, d_out, eps=1e-3):
        grads = []
        for name in ("q", "k", "v"):
            arr = getattr(inputs, name)
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            while not it.finished:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + eps
                up = (rca_attention(inputs, layout) * d_out).sum()
                arr[idx] = orig - eps
                down = (rca_attention(inputs, layout) * d_out).sum()
                arr[idx] = orig
                g[idx] = (up - down) / (2 * eps)
                it.iternext()
            grads.append(g)
        return grads

    def test_analytic_matches_central_differences(self):
        rng = np.random.default_rng(10)
        for trial in range(5):
            inputs = random_instance(rng, n_tokens=2, h=2, w=2, d=3)
            layout = random_layout(rng, 2, 2, 2)
            d_out = rng.normal(size=(1, 4, 3))
            out, cache = rca_attention_with_cache(inputs, layout)
            dq, dk, dv = rca_attention_backward(cache, d_out)
            fq, fk, fv = self.finite_difference(inputs, layout, d_out)
            for got, want in ((dq, fq), (dk, fk), (dv, fv)):
                denom = np.maximum(np.abs(want), 1e-4)
                assert (np.abs(got - want) / denom).max() < 1e-2

    def test_fully_inactive_token_gets_zero_kv_grads(self):
        rng = np.random.default_rng(11)
        bits = np.ones((3, 2, 2), dtype=np.uint8)
        bits[1] = 0  # token 1 inactive everywhere
        inputs = random_instance(rng, n_tokens=3, h=2, w=2, d=3)
        layout = LayoutTensor(bits=bits, resolution=(2, 2))
        _, cache = rca_attention_with_cache(inputs, layout)
        dq, dk, dv = rca_attention_backward(cache, np.ones((1, 4, 3)))
        assert np.abs(dk[0, 1]).max() == 0.0
        assert np.abs(dv[0, 1]).max() == 0.0


class FakeSite:
    def __init__(self, resolution):
        self.resolution = resolution
        self.layout_provider = None
        self.calls = 0

    def query(self):
        self.calls += 1
        if self.layout_provider is None:
            return None
        return self.layout_provider(self.resolution)


class FakeBackbone:
    def __init__(self):
        self.sites = [FakeSite((8, 8)), FakeSite((4, 4))]

    def cross_attention_sites(self):
        return self.sites

    def forward(self):
        return [s.query() for s in self.sites]


class TestHooks:
    def test_install_then_remove_restores(self):
        bb = FakeBackbone()
        before = bb.forward()
        handle = install_hooks(bb, all_ones_provider(4))
        during = bb.forward()
        handle.remove()
        after = bb.forward()
        assert before == [None, None] and after == [None, None]
        assert all(l is not None and l.is_all_ones() for l in during)

    def test_provider_queried_once_per_resolution_per_forward(self):
        bb = FakeBackbone()
        seen = []

        def provider(res):
            seen.append(tuple(res))
            return None

        with install_hooks(bb, provider):
            bb.forward()
        assert sorted(seen) == [(4, 4), (8, 8)]

    def test_unsupported_backbone(self):
        with pytest.raises(UnsupportedBackboneError):
            install_hooks(object(), all_ones_provider(4))

    def test_double_remove_is_safe(self):
        bb = FakeBackbone()
        handle = install_hooks(bb, all_ones_provider(4))
        handle.remove()
        handle.remove()
        assert bb.forward() == [None, None]


class TestDebugDump:
    def test_attention_heatmap_written(self, tmp_path):
        from multimask_inpaint.rca import dump_attention_heatmap

        rng = np.random.default_rng(0)
        inputs = random_instance(rng, heads=2, n_tokens=4, h=3, w=3, d=4)
        _, cache = rca_attention_with_cache(inputs, random_layout(rng, 4, 3, 3))
        path = tmp_path / "attn" / "layer0.png"
        dump_attention_heatmap(cache["weights"], (3, 3), path)
        assert path.exists() and path.stat().st_size > 0
