"""Time-stepped PLIF neurons, surrogate spike gradients, and masked layers.

Membrane update per step: U <- sigmoid(tau_raw) * U_prev + I, spike when
U >= v_th, reset-to-zero after firing. Layers carry an explicit {0,1} mask;
a masked weight contributes zero current and receives zero gradient.

Spike trains are tensors with a leading simulation-time axis of length
`step_count`; convolutions are applied to all steps at once (time folded
into batch) and only the neuron recurrence loops over steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DivergenceError

DEFAULT_V_TH = 1.0
DEFAULT_TAU_INIT = 2.0
DEFAULT_BETA = 4.0


def surrogate_spike_grad(u, v_th, beta):
    """Logistic-derivative surrogate d(spike)/dU; peak beta/4 at u == v_th."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    s = 1.0 / (1.0 + np.exp(-beta * (np.asarray(u, dtype=np.float64) - v_th)))
    out = beta * s * (1.0 - s)
    return float(out) if np.isscalar(u) else out


class _SpikeFn(torch.autograd.Function):
    @staticmethod
    def forward(ctx, u, v_th, beta):
        ctx.save_for_backward(u)
        ctx.v_th = v_th
        ctx.beta = beta
        return (u >= v_th).to(u.dtype)

    @staticmethod
    def backward(ctx, grad_out):
        (u,) = ctx.saved_tensors
        s = torch.sigmoid(ctx.beta * (u - ctx.v_th))
        return grad_out * ctx.beta * s * (1.0 - s), None, None


def spike_fn(u, v_th, beta, relaxed=False):
    """Heaviside spike with surrogate gradient; logistic primitive if relaxed."""
    if relaxed:
        return torch.sigmoid(beta * (u - v_th))
    return _SpikeFn.apply(u, v_th, beta)


@dataclass
class PlifState:
    """Single-layer neuron state for the functional single-step API."""

    membrane: np.ndarray
    tau_raw: float
    v_th: float = DEFAULT_V_TH

    @property
    def decay(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.tau_raw)))


def plif_step(state: PlifState, input_current, layer_name="plif"):
    """One membrane update: decay, integrate, spike, reset-to-zero."""
    current = np.asarray(input_current, dtype=np.float64)
    u = state.decay * np.asarray(state.membrane, dtype=np.float64) + current
    if not np.all(np.isfinite(u)):
        raise DivergenceError(f"non-finite membrane potential in layer '{layer_name}'")
    spikes = (u >= state.v_th).astype(np.float64)
    next_state = PlifState(membrane=u * (1.0 - spikes), tau_raw=state.tau_raw, v_th=state.v_th)
    return next_state, spikes


class _PlifScanFn(torch.autograd.Function):
    """Whole-window PLIF scan as one autograd node with hand-rolled BPTT.

    Forward: a_t = I_t + decay * u_{t-1}; s_t = H(a_t - v_th); u_t = a_t (1 - s_t).
    Backward uses the logistic surrogate g_t = beta * sig * (1 - sig) for both
    the spike output and the reset product, matching the step-by-step autograd
    formulation exactly while avoiding per-step graph nodes.
    """

    @staticmethod
    def forward(ctx, currents, tau_raw, v_th, beta, name):
        decay = float(torch.sigmoid(tau_raw.detach()))
        potentials = torch.empty_like(currents)
        spikes = torch.empty_like(currents)
        one = torch.tensor(1.0, dtype=currents.dtype)
        u = torch.empty_like(currents[0])
        for t in range(currents.shape[0]):
            a = potentials[t]
            if t == 0:
                a.copy_(currents[0])
            else:
                torch.add(currents[t], u, alpha=decay, out=a)
            s = spikes[t]
            torch.sub(a, v_th, out=s)
            torch.heaviside(s, one, out=s)
            torch.mul(a, s, out=u)     # u <- a * s
            torch.sub(a, u, out=u)     # u <- a - a*s  (reset-to-zero)
        # NaN/inf membranes are absorbing, so the last step sees any divergence
        if not torch.isfinite(potentials[-1]).all():
            raise DivergenceError(f"non-finite membrane potential in layer '{name}'")
        ctx.save_for_backward(potentials, spikes, tau_raw)
        ctx.v_th = v_th
        ctx.beta = beta
        return spikes

    @staticmethod
    def backward(ctx, grad_spikes):
        potentials, spikes, tau_raw = ctx.saved_tensors
        v_th, beta = ctx.v_th, ctx.beta
        decay = float(torch.sigmoid(tau_raw.detach()))
        grad_currents = torch.empty_like(potentials)
        grad_decay = 0.0
        lam_next = None
        g = torch.empty_like(potentials[0])
        tmp = torch.empty_like(potentials[0])
        for t in reversed(range(potentials.shape[0])):
            a, s = potentials[t], spikes[t]
            lam = grad_currents[t]
            torch.sub(a, v_th, out=g)
            g.mul_(beta)
            torch.sigmoid_(g)
            torch.mul(g, g, out=tmp)   # sig^2
            g.sub_(tmp).mul_(beta)     # g = beta * sig * (1 - sig)
            torch.mul(grad_spikes[t], g, out=lam)
            if lam_next is not None:
                # dL/du_t = decay * lam_{t+1}; chain through u_t = a_t (1 - s_t)
                torch.mul(a, g, out=tmp)
                tmp.neg_().add_(1.0).sub_(s)       # (1 - s) - a*g
                tmp.mul_(lam_next).mul_(decay)
                lam.add_(tmp)
            if t > 0:
                torch.mul(potentials[t - 1], spikes[t - 1], out=tmp)
                torch.sub(potentials[t - 1], tmp, out=tmp)  # u_{t-1}
                tmp.mul_(lam)
                grad_decay += float(tmp.sum())
            lam_next = lam
        grad_tau = grad_decay * decay * (1.0 - decay)
        return grad_currents, torch.full_like(tau_raw, grad_tau), None, None, None


class PlifNeuron(torch.nn.Module):
    """PLIF layer scanning a (step, batch, ...) current train into spikes."""

    def __init__(self, tau_init=DEFAULT_TAU_INIT, v_th=DEFAULT_V_TH, beta=DEFAULT_BETA, name="plif"):
        super().__init__()
        self.tau_raw = torch.nn.Parameter(torch.tensor(float(tau_init)))
        self.v_th = float(v_th)
        self.beta = float(beta)
        self.name = name

    def forward(self, currents, relaxed=False):
        if not relaxed:
            return _PlifScanFn.apply(currents, self.tau_raw, self.v_th, self.beta, self.name)
        decay = torch.sigmoid(self.tau_raw)
        u = torch.zeros_like(currents[0])
        spikes = []
        for t in range(currents.shape[0]):
            u = decay * u + currents[t]
            if not torch.isfinite(u).all():
                raise DivergenceError(f"non-finite membrane potential in layer '{self.name}'")
            s = spike_fn(u, self.v_th, self.beta, relaxed=True)
            u = u * (1.0 - s)
            spikes.append(s)
        return torch.stack(spikes, dim=0)


def _fold_time(x):
    t, b = x.shape[0], x.shape[1]
    return x.reshape(t * b, *x.shape[2:]), t, b


class MaskedConv2d(torch.nn.Module):
    """3x3/1x1 convolution over a spike train with a permanent {0,1} weight mask."""

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, bias=True):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.weight = torch.nn.Parameter(torch.zeros(out_channels, in_channels, kernel_size, kernel_size))
        self.register_buffer("mask", torch.ones_like(self.weight))
        self.bias = torch.nn.Parameter(torch.zeros(out_channels)) if bias else None
        self.has_pruned = False  # skip the mask multiply while all-ones

    def effective_weight(self):
        return self.weight * self.mask if self.has_pruned else self.weight

    def forward(self, x_train):
        flat, t, b = _fold_time(x_train)
        out = F.conv2d(flat, self.effective_weight(), self.bias,
                       stride=self.stride, padding=self.padding)
        return out.reshape(t, b, *out.shape[1:])

    def forward_static(self, x_train):
        """Inputs identical at every step: convolve one step, expand over time."""
        out = F.conv2d(x_train[0], self.effective_weight(), self.bias,
                       stride=self.stride, padding=self.padding)
        return out.unsqueeze(0).expand(x_train.shape[0], *out.shape)


class MaskedLinear(torch.nn.Module):
    def __init__(self, in_features, out_features, bias=True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = torch.nn.Parameter(torch.zeros(out_features, in_features))
        self.register_buffer("mask", torch.ones_like(self.weight))
        self.bias = torch.nn.Parameter(torch.zeros(out_features)) if bias else None
        self.has_pruned = False

    def effective_weight(self):
        return self.weight * self.mask if self.has_pruned else self.weight

    def forward(self, x):
        return F.linear(x, self.effective_weight(), self.bias)


def init_conv(layer: MaskedConv2d, rng: np.random.Generator, gain=1.0):
    fan_in = layer.in_channels * layer.kernel_size * layer.kernel_size
    std = gain * float(np.sqrt(2.0 / fan_in))
    w = rng.normal(0.0, std, size=tuple(layer.weight.shape)).astype(np.float32)
    with torch.no_grad():
        layer.weight.copy_(torch.from_numpy(w))
        if layer.bias is not None:
            layer.bias.zero_()


def init_linear(layer: MaskedLinear, rng: np.random.Generator, std=0.01):
    w = rng.normal(0.0, std, size=tuple(layer.weight.shape)).astype(np.float32)
    with torch.no_grad():
        layer.weight.copy_(torch.from_numpy(w))
        if layer.bias is not None:
            layer.bias.zero_()


def encode_direct(images: torch.Tensor, step_count: int) -> torch.Tensor:
    """Direct encoding: the frame is applied as constant current every step."""
    return images.unsqueeze(0).expand(step_count, *images.shape)


def rate_decode(spike_train: torch.Tensor) -> torch.Tensor:
    """Mean spike count over time and space -> (batch, channels) feature."""
    return spike_train.mean(dim=(0, 3, 4))


def make_optimizer(params, lr, momentum):
    return torch.optim.SGD([p for p in params if p.requires_grad], lr=lr, momentum=momentum)


def loss_for(kind: str, outputs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    if kind == "cross-entropy":
        return F.cross_entropy(outputs, targets)
    if kind == "mean-squared-error":
        return F.mse_loss(outputs, targets)
    raise ValueError(f"unknown loss kind '{kind}'")


def train_step(graph, task_id, images, targets, states, loss_kind, optimizer,
               relaxed=False, source_outputs=None):
    """One gradient-descent update through the surrogate; returns scalar loss."""
    optimizer.zero_grad(set_to_none=True)
    outputs = graph.forward_task(task_id, images, states=states, relaxed=relaxed,
                                 source_outputs=source_outputs)
    loss = loss_for(loss_kind, outputs, targets)
    if not torch.isfinite(loss):
        raise DivergenceError(f"NaN/Inf loss while training task {task_id}")
    loss.backward()
    optimizer.step()
    return float(loss.detach())
