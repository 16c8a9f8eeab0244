"""Hebbian traces, generality scores, threshold coefficients, and pruning.

Traces decay geometrically (trace <- alpha * trace + spike) over the probe
window; per-layer Hebbian matrices are the min-max normalized outer product
of end-of-window post x pre channel traces. A block's generality E sums, over
later tasks, the probability that the block is selected as a long-range
source. Threshold coefficients V = min(1, n/N) * (1 - exp(-2 (H + E))) drive
the soft-threshold transform w' = sign(w) * relu(|w| - V * q80(|w|)); weights
shrunk to zero are masked permanently.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch

from . import evolution
from .errors import ConfigError
from .topology import SOURCE_BLOCKS


@dataclass
class TraceState:
    trace: np.ndarray
    alpha: float


def update_trace(state: TraceState, spikes) -> TraceState:
    if not 0.0 <= state.alpha < 1.0:
        raise ConfigError(f"trace decay alpha must be in [0, 1), got {state.alpha}")
    new = state.alpha * np.asarray(state.trace, dtype=np.float64) + np.asarray(spikes, dtype=np.float64)
    return TraceState(trace=new, alpha=state.alpha)


def trace_over_window(spike_train: torch.Tensor, alpha: float) -> torch.Tensor:
    """End-of-window trace for a (step, batch, C, H, W) train."""
    trace = torch.zeros_like(spike_train[0])
    for t in range(spike_train.shape[0]):
        trace = alpha * trace + spike_train[t]
    return trace


def channel_trace(spike_train: torch.Tensor, alpha: float) -> torch.Tensor:
    """Per-channel mean of end-of-window traces over batch and space -> (C,)."""
    return trace_over_window(spike_train, alpha).mean(dim=(0, 2, 3))


def minmax_normalize(matrix: torch.Tensor) -> torch.Tensor:
    """Min-max to [0, 1]; a constant matrix normalizes to all-zeros."""
    lo, hi = matrix.min(), matrix.max()
    if hi <= lo:
        return torch.zeros_like(matrix)
    return (matrix - lo) / (hi - lo)


def hebbian_matrix(post_traces: torch.Tensor, pre_traces: torch.Tensor,
                   normalize=True) -> torch.Tensor:
    """Outer product of post x pre traces, min-max normalized per layer."""
    raw = torch.outer(post_traces.double(), pre_traces.double())
    return minmax_normalize(raw) if normalize else raw


def generality(choice_matrices: dict, task_k: int, block_b: int, upto_task: int) -> float:
    """E for (task k, block b): sum over later tasks' usage probabilities."""
    if block_b not in SOURCE_BLOCKS:
        return 0.0
    total = 0.0
    for t_prime in range(task_k + 1, upto_task + 1):
        matrix = choice_matrices.get(t_prime)
        if matrix is not None:
            total += evolution.usage_probability(matrix, task_k, block_b)
    return total


def threshold_coeffs(hebbian: torch.Tensor, e_score: float, n_runs: int, n_maturity: int) -> torch.Tensor:
    """V = min(1, n/N) * (1 - exp(-2 (H + E))), elementwise in [0, 1)."""
    if n_maturity <= 0:
        raise ConfigError(f"maturity constant N must be > 0, got {n_maturity}")
    maturity = min(1.0, n_runs / n_maturity)
    return maturity * (1.0 - torch.exp(-2.0 * (hebbian + e_score)))


@dataclass
class PruneStats:
    active_before: int
    active_after: int
    mean_v: float
    mean_h: float


def quantile_of_active(layer, q=0.8):
    active = layer.weight.detach().abs()[layer.mask > 0]
    if active.numel() == 0:
        return None
    return torch.quantile(active.double(), q)


def inhibit_and_prune(layer, v_coeffs: torch.Tensor, mean_h: float = 0.0) -> PruneStats:
    """Apply w' = sign(w) relu(|w| - V * q80) in place; mask zeros permanently.

    v_coeffs broadcasts against the weight shape ((C_out, C_in) expands over
    the spatial taps). Quantile q80 uses linear interpolation over |w| of the
    currently active weights. All-masked layers are a warned no-op.
    """
    active_before = int(layer.mask.sum().item())
    v = v_coeffs.to(layer.weight.dtype)
    while v.dim() < layer.weight.dim():
        v = v.unsqueeze(-1)
    v = v.expand_as(layer.weight)
    mean_v = float(v[layer.mask > 0].mean().item()) if active_before else 0.0
    if active_before == 0:
        warnings.warn("inhibit_and_prune called on a fully masked layer; no-op")
        return PruneStats(0, 0, 0.0, mean_h)
    q = quantile_of_active(layer, 0.8).to(layer.weight.dtype)
    with torch.no_grad():
        w = layer.weight
        shrink = v * q
        new_mag = torch.clamp(w.abs() - shrink, min=0.0)
        pruned_now = (w.abs() <= shrink) & (shrink > 0) & (layer.mask > 0)
        layer.weight.copy_(torch.sign(w) * new_mag * layer.mask)
        layer.mask[pruned_now] = 0.0
        layer.weight[layer.mask == 0] = 0.0
    layer.has_pruned = True
    active_after = int(layer.mask.sum().item())
    return PruneStats(active_before, active_after, mean_v, mean_h)


def collect_column_traces(graph, task_id, probe_images, alpha, batch_size=128):
    """Per-layer (pre, post) channel traces for `task_id`'s blocks on a probe.

    Probe batches run forward without gradients; per-batch channel traces are
    averaged with sample-count weights (ordered reduction, deterministic).
    """
    sums = {}
    total = 0
    with torch.no_grad():
        for start in range(0, probe_images.shape[0], batch_size):
            chunk = probe_images[start:start + batch_size]
            record = {}
            graph.forward_blocks(task_id, chunk, record=record, record_tasks={task_id})
            weight = chunk.shape[0]
            for b in range(1, 5):
                rec = record[(task_id, b)]
                triple = (channel_trace(rec["input"], alpha),
                          channel_trace(rec["mid"], alpha),
                          channel_trace(rec["out"], alpha))
                if (task_id, b) not in sums:
                    sums[(task_id, b)] = [t * weight for t in triple]
                else:
                    for i, t in enumerate(triple):
                        sums[(task_id, b)][i] += t * weight
            total += weight
    return {key: tuple(t / total for t in parts) for key, parts in sums.items()}


def block_hebbians(traces_for_block, normalize=True):
    """Hebbian matrices for (conv1, conv2, shortcut) from (in, mid, out) traces."""
    trace_in, trace_mid, trace_out = traces_for_block
    return {
        "conv1": hebbian_matrix(trace_mid, trace_in, normalize),
        "conv2": hebbian_matrix(trace_out, trace_mid, normalize),
        "shortcut": hebbian_matrix(trace_out, trace_in, normalize),
    }


def prune_task(graph, task_id, hebbians, e_scores, n_runs, n_maturity):
    """Inhibit/prune every conv layer of `task_id`'s blocks; returns stats rows.

    hebbians: {(block, layer_name): H tensor}; e_scores: {block: E}.
    """
    rows = []
    for b in range(1, 5):
        block = graph.column(task_id).blocks[b - 1]
        for name, layer in block.conv_layers():
            h = hebbians[(b, name)]
            v = threshold_coeffs(h, e_scores[b], n_runs, n_maturity)
            stats = inhibit_and_prune(layer, v, mean_h=float(h.mean().item()))
            rows.append({
                "task": task_id,
                "block": b,
                "layer": name,
                "active_before": stats.active_before,
                "active_after": stats.active_after,
                "mean_V": stats.mean_v,
                "mean_H": stats.mean_h,
                "E": e_scores[b],
            })
    return rows


def kernel_plasticity_table(graph, task_id, hebbians):
    """(mean H, pruned fraction) per conv kernel (output-channel filter)."""
    rows = []
    for b in range(1, 5):
        block = graph.column(task_id).blocks[b - 1]
        for name, layer in block.conv_layers():
            h = hebbians[(b, name)]
            mask = layer.mask
            for c_out in range(layer.out_channels):
                kernel_mask = mask[c_out]
                rows.append({
                    "task": task_id,
                    "block": b,
                    "layer": name,
                    "kernel": c_out,
                    "mean_H": float(h[c_out].mean().item()),
                    "pruned_fraction": 1.0 - float(kernel_mask.mean().item()),
                })
    return rows
