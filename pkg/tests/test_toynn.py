import numpy as np
import pytest

from multimask_inpaint.toynn import (
    AdamW,
    Embedding,
    Gelu,
    Linear,
    Param,
    ResidualMLP,
    checksum,
    clip_grad_norm,
    cross_entropy,
    global_grad_norm,
    n_params,
    softmax,
    trainable_params,
    warmup_constant_lr,
)


def fd_param_grad(f, param, eps=1e-6):
    g = np.zeros_like(param.value)
    it = np.nditer(param.value, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = param.value[idx]
        param.value[idx] = orig + eps
        up = f()
        param.value[idx] = orig - eps
        down = f()
        param.value[idx] = orig
        g[idx] = (up - down) / (2 * eps)
        it.iternext()
    return g


class TestLinearLora:
    def test_lora_starts_as_identity_delta(self):
        rng = np.random.default_rng(0)
        plain = Linear(4, 3, np.random.default_rng(7))
        lora = Linear(4, 3, np.random.default_rng(7), lora_rank=2, lora_alpha=2)
        x = rng.normal(size=(5, 4))
        np.testing.assert_allclose(plain.forward(x), lora.forward(x))

    def test_param_grads_match_finite_differences(self):
        rng = np.random.default_rng(1)
        layer = Linear(3, 2, rng, lora_rank=2, lora_alpha=4)
        # move B off zero so A's gradient is visible
        layer.lora_b.value[:] = rng.normal(size=layer.lora_b.value.shape)
        x = rng.normal(size=(4, 3))
        w = rng.normal(size=(4, 2))

        def loss():
            return float((layer.forward(x) * w).sum())

        loss()
        layer.backward(w)
        for p in (layer.lora_a, layer.lora_b):
            fd = fd_param_grad(loss, p)
            np.testing.assert_allclose(p.grad, fd, atol=1e-5)

    def test_input_grad_matches_fd(self):
        rng = np.random.default_rng(2)
        layer = Linear(3, 3, rng, lora_rank=1, lora_alpha=1)
        layer.lora_b.value[:] = rng.normal(size=layer.lora_b.value.shape)
        x = rng.normal(size=(2, 3))
        w = rng.normal(size=(2, 3))
        layer.forward(x)
        dx = layer.backward(w)
        fd = np.zeros_like(x)
        eps = 1e-6
        for idx in np.ndindex(*x.shape):
            x2 = x.copy(); x2[idx] += eps
            x3 = x.copy(); x3[idx] -= eps
            fd[idx] = ((layer.forward(x2) * w).sum() - (layer.forward(x3) * w).sum()) / (2 * eps)
        np.testing.assert_allclose(dx, fd, atol=1e-5)

    def test_base_frozen_by_default(self):
        layer = Linear(4, 4, np.random.default_rng(3), lora_rank=2)
        names = [p.name for p in trainable_params(layer.params)]
        assert all("lora" in n for n in names)


class TestResidualMLP:
    def test_grads_match_fd(self):
        rng = np.random.default_rng(4)
        block = ResidualMLP(3, 5, rng, lora_rank=2, lora_alpha=2)
        for layer in (block.fc1, block.fc2):
            layer.lora_b.value[:] = 0.1 * rng.normal(size=layer.lora_b.value.shape)
        x = rng.normal(size=(2, 3))
        w = rng.normal(size=(2, 3))

        def loss():
            return float((block.forward(x) * w).sum())

        loss()
        block.backward(w)
        for p in trainable_params(block.params):
            fd = fd_param_grad(loss, p)
            np.testing.assert_allclose(p.grad, fd, atol=1e-5, err_msg=p.name)


class TestCrossEntropy:
    def test_uniform_logits_equals_log_vocab(self):
        v = 17
        logits = np.zeros((1, 4, v))
        targets = np.array([[1, 2, 3, 4]])
        mask = np.array([[False, True, True, False]])
        loss, _ = cross_entropy(logits, targets, mask)
        assert abs(loss - np.log(v)) < 1e-9

    def test_one_hot_logits_near_zero_loss(self):
        targets = np.array([[2, 0]])
        logits = np.full((1, 2, 4), -100.0)
        logits[0, 0, 2] = 100.0
        logits[0, 1, 0] = 100.0
        loss, _ = cross_entropy(logits, targets, np.ones((1, 2), dtype=bool))
        assert loss < 1e-6

    def test_masked_out_positions_do_not_matter(self):
        rng = np.random.default_rng(5)
        logits = rng.normal(size=(1, 5, 8))
        targets = rng.integers(0, 8, size=(1, 5))
        mask = np.array([[False, True, False, True, False]])
        base, dlogits = cross_entropy(logits, targets, mask)
        perturbed = logits.copy()
        perturbed[0, 0] += 100.0
        perturbed[0, 2] -= 3.0
        again, _ = cross_entropy(perturbed, targets, mask)
        assert again == base
        assert np.abs(dlogits[0, 0]).max() == 0.0

    def test_grad_matches_fd(self):
        rng = np.random.default_rng(6)
        logits = rng.normal(size=(2, 3, 5))
        targets = rng.integers(0, 5, size=(2, 3))
        mask = rng.random((2, 3)) < 0.7
        mask[0, 0] = True
        loss, dlogits = cross_entropy(logits, targets, mask)
        eps = 1e-6
        for idx in [(0, 0, 1), (1, 2, 4), (0, 1, 0), (1, 0, 3)]:
            up = logits.copy(); up[idx] += eps
            dn = logits.copy(); dn[idx] -= eps
            fd = (cross_entropy(up, targets, mask)[0] - cross_entropy(dn, targets, mask)[0]) / (2 * eps)
            assert abs(dlogits[idx] - fd) < 1e-6

    def test_no_active_labels_raises(self):
        with pytest.raises(ValueError):
            cross_entropy(np.zeros((1, 2, 3)), np.zeros((1, 2), dtype=int),
                          np.zeros((1, 2), dtype=bool))


class TestOptimizer:
    def test_adamw_decreases_quadratic(self):
        rng = np.random.default_rng(7)
        p = Param(rng.normal(size=(4,)), trainable=True)
        opt = AdamW([p], lr=0.05, weight_decay=0.0)
        for _ in range(200):
            opt.zero_grad()
            p.grad[:] = 2 * (p.value - 1.0)
            opt.step()
        np.testing.assert_allclose(p.value, 1.0, atol=1e-2)

    def test_clip_grad_norm(self):
        p = Param(np.zeros(3), trainable=True)
        p.grad[:] = np.array([3.0, 4.0, 0.0])
        before, after = clip_grad_norm([p], 1.0)
        assert abs(before - 5.0) < 1e-12
        assert abs(after - 1.0) < 1e-12
        assert abs(global_grad_norm([p]) - 1.0) < 1e-12

    def test_clip_noop_under_limit(self):
        p = Param(np.zeros(2), trainable=True)
        p.grad[:] = np.array([0.3, 0.4])
        before, after = clip_grad_norm([p], 1.0)
        assert before == after == pytest.approx(0.5)

    def test_warmup_schedule(self):
        total = 200
        assert warmup_constant_lr(0, total, 2e-4) == 0.0
        warmup_steps = max(1, round(0.01 * total))
        assert warmup_constant_lr(warmup_steps, total, 2e-4) == pytest.approx(2e-4)
        assert warmup_constant_lr(150, total, 2e-4) == pytest.approx(2e-4)

    def test_checksum_tracks_changes(self):
        p = Param(np.ones(3))
        q = Param(np.zeros(2), trainable=True)
        before = checksum([p])
        q.value[0] = 5.0
        assert checksum([p]) == before
        p.value[0] = 2.0
        assert checksum([p]) != before


class TestEmbeddingSoftmax:
    def test_embedding_lookup(self):
        emb = Embedding(5, 3, np.random.default_rng(8))
        out = emb.forward(np.array([0, 4, 2]))
        np.testing.assert_array_equal(out[1], emb.table.value[4])

    def test_softmax_rows_normalize(self):
        rng = np.random.default_rng(9)
        s = softmax(rng.normal(size=(3, 7)))
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
