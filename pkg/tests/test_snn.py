import numpy as np
import pytest
import torch

from tdmcl.errors import DivergenceError
from tdmcl.snn import (
    MaskedConv2d,
    MaskedLinear,
    PlifNeuron,
    PlifState,
    encode_direct,
    init_conv,
    loss_for,
    make_optimizer,
    plif_step,
    spike_fn,
    surrogate_spike_grad,
    train_step,
)


def logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


class TestPlifStep:
    def test_zero_dynamics(self):
        state = PlifState(membrane=np.zeros(3), tau_raw=0.0, v_th=1.0)
        state, spikes = plif_step(state, np.zeros(3))
        assert np.all(state.membrane == 0.0)
        assert np.all(spikes == 0.0)

    def test_integrate_fire_and_reset(self):
        # sigma(0) = 0.5 decay; U = 0.5*1.0 + 0.6 = 1.1 >= 1.0 -> fire, reset
        state = PlifState(membrane=np.array([1.0]), tau_raw=0.0, v_th=1.0)
        assert state.decay == pytest.approx(0.5)
        state, spikes = plif_step(state, np.array([0.6]))
        assert spikes[0] == 1.0
        assert state.membrane[0] == 0.0  # next step starts at zero

    def test_membrane_value_pre_threshold(self):
        # same arithmetic, threshold moved out of reach: U must equal 1.1
        state = PlifState(membrane=np.array([1.0]), tau_raw=0.0, v_th=2.0)
        state, spikes = plif_step(state, np.array([0.6]))
        assert spikes[0] == 0.0
        assert state.membrane[0] == pytest.approx(1.1)

    def test_subthreshold_accumulation(self):
        state = PlifState(membrane=np.array([0.4]), tau_raw=0.0, v_th=1.0)
        state, spikes = plif_step(state, np.array([0.2]))
        assert spikes[0] == 0.0
        assert state.membrane[0] == pytest.approx(0.4)

    def test_nonfinite_membrane_raises(self):
        state = PlifState(membrane=np.array([0.0]), tau_raw=0.0)
        with pytest.raises(DivergenceError, match="plif"):
            plif_step(state, np.array([np.inf]))

    def test_decay_closed_form(self):
        # with zero input and no spikes, U after n steps is sigma(tau)^n * U0
        u0, tau_raw, steps = 0.9, 2.0, 5
        state = PlifState(membrane=np.array([u0]), tau_raw=tau_raw, v_th=10.0)
        for _ in range(steps):
            state, spikes = plif_step(state, np.array([0.0]))
            assert spikes[0] == 0.0
        expected = logistic(tau_raw) ** steps * u0
        assert state.membrane[0] == pytest.approx(expected, rel=1e-12)


class TestSurrogate:
    def test_peak_value(self):
        assert surrogate_spike_grad(1.0, 1.0, 4.0) == pytest.approx(1.0)

    def test_saturation(self):
        assert surrogate_spike_grad(100.0, 1.0, 4.0) == pytest.approx(0.0, abs=1e-12)
        assert surrogate_spike_grad(-100.0, 1.0, 4.0) == pytest.approx(0.0, abs=1e-12)

    def test_symmetry(self):
        hi = surrogate_spike_grad(1.5, 1.0, 4.0)
        lo = surrogate_spike_grad(0.5, 1.0, 4.0)
        assert hi == pytest.approx(lo, rel=1e-12)

    def test_requires_positive_beta(self):
        with pytest.raises(ValueError):
            surrogate_spike_grad(0.0, 1.0, 0.0)

    def test_matches_torch_backward(self):
        u = torch.linspace(-1.0, 3.0, 41, dtype=torch.float64, requires_grad=True)
        spike_fn(u, 1.0, 4.0).sum().backward()
        expected = surrogate_spike_grad(u.detach().numpy(), 1.0, 4.0)
        assert np.allclose(u.grad.numpy(), expected, rtol=1e-12, atol=1e-12)


class TestPlifNeuron:
    def test_identity_chain_saturated_rate(self):
        # strong constant drive -> a spike every step -> rate exactly 1
        neuron = PlifNeuron(tau_init=2.0, v_th=1.0)
        currents = torch.full((4, 2, 1, 1, 1), 2.5)
        spikes = neuron(currents).detach()
        assert float(spikes.mean()) == 1.0

    def test_spikes_binary(self, rng):
        neuron = PlifNeuron()
        currents = torch.from_numpy(rng.normal(0, 1.5, size=(4, 3, 2, 4, 4)).astype(np.float32))
        spikes = neuron(currents).detach()
        assert set(np.unique(spikes.numpy())) <= {0.0, 1.0}

    def test_fused_scan_matches_stepwise_reference(self, rng):
        x = torch.tensor(rng.normal(0, 1, (4, 5, 3, 6, 6)), dtype=torch.float64,
                         requires_grad=True)
        neuron = PlifNeuron(tau_init=1.3, v_th=0.7, beta=4.0).double()
        out_fast = neuron(x)
        weights = torch.tensor(rng.normal(0, 1, out_fast.shape), dtype=torch.float64)
        (out_fast * weights).sum().backward()
        gx_fast = x.grad.clone()
        gtau_fast = neuron.tau_raw.grad.clone()

        x.grad = None
        neuron.tau_raw.grad = None
        decay = torch.sigmoid(neuron.tau_raw)
        u = torch.zeros_like(x[0])
        outs = []
        for t in range(x.shape[0]):
            u = decay * u + x[t]
            s = spike_fn(u, 0.7, 4.0)
            u = u * (1.0 - s)
            outs.append(s)
        out_ref = torch.stack(outs, 0)
        assert torch.equal(out_ref, out_fast)
        (out_ref * weights).sum().backward()
        assert np.allclose(x.grad.numpy(), gx_fast.numpy(), atol=1e-12)
        assert float(neuron.tau_raw.grad) == pytest.approx(float(gtau_fast), abs=1e-9)

    def test_divergence_names_layer(self):
        neuron = PlifNeuron(name="t1b1.plif1")
        bad = torch.full((4, 1, 1, 1, 1), float("inf"))
        with pytest.raises(DivergenceError, match="t1b1.plif1"):
            neuron(bad)


class TestMaskedLayers:
    def _net(self, rng):
        conv = MaskedConv2d(2, 3, 3, stride=1, padding=1)
        init_conv(conv, rng)
        return conv

    def test_masked_weight_neutrality(self, rng):
        conv = self._net(rng)
        x = torch.from_numpy(rng.normal(0, 1, (4, 2, 2, 5, 5)).astype(np.float32))
        kill = (1, 0, 2, 2)
        with torch.no_grad():
            baseline = conv.weight[kill].item()
        conv.mask[kill] = 0.0
        conv.has_pruned = True
        masked_out = conv(x)
        with torch.no_grad():
            conv.weight[kill] = 0.0
        conv.mask[kill] = 1.0
        deleted_out = conv(x)
        assert torch.equal(masked_out, deleted_out)
        # and the masked weight gets exactly zero gradient
        with torch.no_grad():
            conv.weight[kill] = baseline
        conv.mask[kill] = 0.0
        out = conv(x)
        out.square().sum().backward()
        assert conv.weight.grad[kill].item() == 0.0
        assert bool((conv.weight.grad[conv.mask > 0] != 0).any())

    def test_determinism(self, rng):
        conv = self._net(rng)
        x = torch.from_numpy(rng.normal(0, 1, (4, 2, 2, 5, 5)).astype(np.float32))
        assert torch.equal(conv(x), conv(x))

    def test_linear_mask(self, rng):
        lin = MaskedLinear(4, 2)
        with torch.no_grad():
            lin.weight.copy_(torch.ones(2, 4))
        lin.mask[0, :] = 0.0
        lin.has_pruned = True
        out = lin(torch.ones(1, 4))
        assert out[0, 0].item() == 0.0
        assert out[0, 1].item() == 4.0


def _relaxed_chain(rng, sizes=(6, 5, 4), step=3):
    """Small dense spiking chain run in relaxed mode, float64, for grad checks."""
    torch_rng = np.random.default_rng(rng.integers(2**32))
    layers = []
    for i in range(len(sizes) - 1):
        lin = MaskedLinear(sizes[i], sizes[i + 1]).double()
        with torch.no_grad():
            lin.weight.copy_(torch.tensor(torch_rng.normal(0, 0.8, (sizes[i + 1], sizes[i]))))
            lin.bias.copy_(torch.tensor(torch_rng.normal(0, 0.1, sizes[i + 1])))
        layers.append(lin)
    neurons = [PlifNeuron(tau_init=1.5, v_th=0.8).double() for _ in layers]
    x = torch.tensor(torch_rng.normal(0, 1, (step, 2, sizes[0])))
    targets = torch.tensor(torch_rng.normal(0, 1, (2, sizes[-1])))

    def forward():
        h = x
        for lin, neu in zip(layers, neurons):
            cur = lin(h.reshape(-1, h.shape[-1])).reshape(*h.shape[:-1], -1)
            h = neu(cur.reshape(step, 2, -1, 1, 1), relaxed=True).reshape(step, 2, -1)
        return ((h.mean(dim=0) - targets) ** 2).mean()

    params = [p for lin in layers for p in (lin.weight, lin.bias)]
    params += [n.tau_raw for n in neurons]
    return forward, params


def test_relaxed_gradients_match_finite_differences(rng):
    forward, params = _relaxed_chain(rng)
    loss = forward()
    grads = torch.autograd.grad(loss, params)
    eps = 1e-6
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.detach().reshape(-1)
        idxs = range(flat.numel()) if flat.numel() <= 8 else \
            np.random.default_rng(0).choice(flat.numel(), 8, replace=False)
        for i in idxs:
            with torch.no_grad():
                orig = flat[i].item()
                flat[i] = orig + eps
                hi = forward().item()
                flat[i] = orig - eps
                lo = forward().item()
                flat[i] = orig
            fd = (hi - lo) / (2 * eps)
            an = g.reshape(-1)[i].item()
            denom = max(abs(fd), abs(an), 1e-8)
            worst = max(worst, abs(fd - an) / denom)
    assert worst < 1e-4


class TestTrainStep:
    def _graph(self, rng, n_classes=3):
        from tdmcl.topology import ColumnGraph

        graph = ColumnGraph(input_hw=16, input_channels=1, step_count=4)
        graph.grow_task_column(1, 0.05, (n_classes,), 0, "class", rng)
        return graph

    def test_all_masked_trainable_set(self, rng):
        graph = self._graph(rng)
        for block in graph.column(1).blocks:
            for _, layer in block.conv_layers():
                layer.mask.zero_()
                layer.has_pruned = True
                layer.weight.data.mul_(layer.mask)
        head = graph.column(1).head
        head.mask.zero_()
        head.has_pruned = True
        head.weight.data.zero_()
        before = {k: v.clone() for k, v in graph.state_dict().items() if k.endswith("weight")}
        convs = [layer.weight for b in graph.column(1).blocks for _, layer in b.conv_layers()]
        opt = make_optimizer(convs + [head.weight], lr=0.5, momentum=0.9)
        x = torch.from_numpy(rng.random((6, 1, 16, 16)).astype(np.float32))
        y = torch.from_numpy(rng.integers(0, 3, 6))
        loss = train_step(graph, 1, x, y, None, "cross-entropy", opt)
        assert np.isfinite(loss)
        after = {k: v for k, v in graph.state_dict().items() if k.endswith("weight")}
        for k in before:
            assert torch.equal(before[k], after[k]), k

    def test_loss_decreases_on_separable_toy(self, rng):
        graph = self._graph(rng, n_classes=2)
        # linearly separable: class 0 dark left half, class 1 bright right half
        n = 32
        x = np.zeros((n, 1, 16, 16), dtype=np.float32)
        y = np.arange(n) % 2
        x[y == 0, :, :, :8] = 1.0
        x[y == 1, :, :, 8:] = 1.0
        xt, yt = torch.from_numpy(x), torch.from_numpy(y.astype(np.int64))
        opt = make_optimizer(graph.task_parameters(1), lr=0.1, momentum=0.9)
        losses = [train_step(graph, 1, xt, yt, None, "cross-entropy", opt)
                  for _ in range(50)]
        assert np.mean(losses[-5:]) < np.mean(losses[:5]) * 0.8

    def test_nan_loss_raises(self, rng):
        graph = self._graph(rng)
        opt = make_optimizer(graph.task_parameters(1), lr=0.1, momentum=0.9)
        x = torch.full((4, 1, 16, 16), float("nan"))
        y = torch.zeros(4, dtype=torch.int64)
        with pytest.raises(DivergenceError):
            train_step(graph, 1, x, y, None, "cross-entropy", opt)


def test_encode_direct_constant_current():
    frame = torch.rand(3, 2, 4, 4)
    train = encode_direct(frame, 4)
    assert train.shape == (4, 3, 2, 4, 4)
    for t in range(4):
        assert torch.equal(train[t], frame)


def test_loss_for_kinds():
    logits = torch.tensor([[2.0, 0.0], [0.0, 2.0]])
    labels = torch.tensor([0, 1])
    assert loss_for("cross-entropy", logits, labels).item() < 0.2
    assert loss_for("mean-squared-error", logits, logits).item() == 0.0
    with pytest.raises(ValueError):
        loss_for("hinge", logits, labels)
