"""Per-task column growth, long-range wiring between columns, and censuses.

Each task owns a column of four residual spiking blocks whose channel ladder
is ceil(width_factor * (32, 64, 128, 256)). Long-range edges carry an earlier
block's spike train through a 1x1 adapter (with spatial rescale) into a later
column's block input; merged inputs are summed. Edges always point from a
lower task id to a higher one, so the graph is acyclic by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import GrowthError, WiringError
from .snn import (
    MaskedConv2d,
    MaskedLinear,
    PlifNeuron,
    encode_direct,
    init_conv,
    init_linear,
)

BASE_LADDER = (32, 64, 128, 256)
BLOCK_STRIDES = (1, 2, 2, 2)
DEST_BLOCKS = (2, 3, 4)
SOURCE_BLOCKS = (2, 3, 4)


def ladder_channels(width_factor: float) -> tuple[int, ...]:
    return tuple(int(math.ceil(width_factor * c)) for c in BASE_LADDER)


def block_spatial(input_hw: int, block_index: int) -> int:
    """Output height/width of a block given the column input resolution."""
    return input_hw >> (block_index - 1)


@dataclass(frozen=True)
class WiringChoice:
    """One decoded controller decision for a (dest block, source task) row."""

    dest_block: int
    source_task: int
    option: int  # 0..2 no connection, 3..5 source block 2/3/4

    @property
    def source_block(self):
        return None if self.option < 3 else self.option - 1


class BlockModule(torch.nn.Module):
    """Two 3x3 spiking conv layers plus a residual shortcut."""

    def __init__(self, task_id, block_index, in_channels, out_channels, stride,
                 tau_init, v_th, beta):
        super().__init__()
        self.task_id = task_id
        self.block_index = block_index
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        tag = f"t{task_id}b{block_index}"
        self.conv1 = MaskedConv2d(in_channels, out_channels, 3, stride=stride, padding=1)
        self.plif1 = PlifNeuron(tau_init, v_th, beta, name=f"{tag}.plif1")
        self.conv2 = MaskedConv2d(out_channels, out_channels, 3, stride=1, padding=1)
        self.plif2 = PlifNeuron(tau_init, v_th, beta, name=f"{tag}.plif2")
        if in_channels != out_channels or stride != 1:
            self.shortcut = MaskedConv2d(in_channels, out_channels, 1, stride=stride)
        else:
            self.shortcut = None

    def conv_layers(self):
        layers = [("conv1", self.conv1), ("conv2", self.conv2)]
        if self.shortcut is not None:
            layers.append(("shortcut", self.shortcut))
        return layers

    def init_weights(self, rng: np.random.Generator):
        init_conv(self.conv1, rng)
        init_conv(self.conv2, rng)
        if self.shortcut is not None:
            init_conv(self.shortcut, rng)

    def forward(self, x_train, relaxed=False, record=None, static_input=False):
        if static_input:
            cur1 = self.conv1.forward_static(x_train)
            residual = self.shortcut.forward_static(x_train) if self.shortcut is not None else x_train
        else:
            cur1 = self.conv1(x_train)
            residual = self.shortcut(x_train) if self.shortcut is not None else x_train
        mid = self.plif1(cur1, relaxed=relaxed)
        out = self.plif2(self.conv2(mid) + residual, relaxed=relaxed)
        if record is not None:
            record["input"] = x_train.detach()
            record["mid"] = mid.detach()
            record["out"] = out.detach()
        return out


class TaskColumn(torch.nn.Module):
    """Four blocks plus a non-spiking readout head for one task.

    The head reads time-rate-decoded block-4 spikes with the 2x2 spatial cells
    kept (flattened), so coarse position information survives the readout.
    """

    def __init__(self, task_id, in_channels, input_hw, width_factor, head_out,
                 state_dim, head_kind, tau_init, v_th, beta):
        super().__init__()
        self.task_id = task_id
        self.width_factor = width_factor
        self.head_kind = head_kind  # "class" | "vector" | "sequence"
        self.state_dim = state_dim
        self.head_out = head_out
        channels = ladder_channels(width_factor)
        self.channels = channels
        blocks = []
        prev = in_channels
        for b, (out_ch, stride) in enumerate(zip(channels, BLOCK_STRIDES), start=1):
            blocks.append(BlockModule(task_id, b, prev, out_ch, stride, tau_init, v_th, beta))
            prev = out_ch
        self.blocks = torch.nn.ModuleList(blocks)
        feat_dim = channels[-1] * block_spatial(input_hw, 4) ** 2
        self.head = MaskedLinear(feat_dim + state_dim, int(np.prod(head_out)))

    def init_weights(self, rng: np.random.Generator):
        for block in self.blocks:
            block.init_weights(rng)
        init_linear(self.head, rng)

    def readout(self, final_train, states):
        feat = final_train.mean(dim=0).flatten(start_dim=1)
        if self.state_dim:
            if states is None:
                raise WiringError(f"task {self.task_id} head expects a state vector input")
            feat = torch.cat([feat, states], dim=1)
        out = self.head(feat)
        if self.head_kind == "sequence":
            return out.reshape(out.shape[0], *self.head_out)
        return out


class LongRangeEdge(torch.nn.Module):
    """Adapter-mediated edge from (source task, source block) output into a
    (dest task, dest block) input; 1x1 projection with spatial rescale."""

    def __init__(self, source_task, source_block, dest_task, dest_block,
                 source_channels, dest_channels, input_hw):
        super().__init__()
        if source_task >= dest_task:
            raise WiringError(
                f"edge must point forward in task order, got {source_task} -> {dest_task}")
        self.source_task = source_task
        self.source_block = source_block
        self.dest_task = dest_task
        self.dest_block = dest_block
        src_hw = block_spatial(input_hw, source_block)
        dst_hw = block_spatial(input_hw, dest_block - 1)  # dest input = prev block output
        if src_hw >= dst_hw:
            self.up_factor = 1
            stride = src_hw // dst_hw
        else:
            self.up_factor = dst_hw // src_hw
            stride = 1
        self.adapter = MaskedConv2d(source_channels, dest_channels, 1, stride=stride)

    def init_weights(self, rng: np.random.Generator):
        init_conv(self.adapter, rng)

    def forward(self, source_train):
        x = source_train
        if self.up_factor > 1:
            x = x.repeat_interleave(self.up_factor, dim=3).repeat_interleave(self.up_factor, dim=4)
        return self.adapter(x)


def merge_inputs(native_input, long_range_inputs):
    """Element-wise sum of the native input and adapter-projected inputs."""
    merged = native_input
    for extra in long_range_inputs:
        if extra.shape != native_input.shape:
            raise WiringError(
                f"long-range input shape {tuple(extra.shape)} does not match "
                f"native input shape {tuple(native_input.shape)}")
        merged = merged + extra
    return merged


class ColumnGraph(torch.nn.Module):
    """All task columns, their long-range edges, and per-task readouts."""

    def __init__(self, input_hw=16, input_channels=3, step_count=4,
                 tau_init=2.0, v_th=1.0, beta=4.0):
        super().__init__()
        self.input_hw = input_hw
        self.input_channels = input_channels
        self.step_count = step_count
        self.tau_init = tau_init
        self.v_th = v_th
        self.beta = beta
        self.columns = torch.nn.ModuleDict()
        self.edges = torch.nn.ModuleList()

    # -- structure ---------------------------------------------------------

    @property
    def task_ids(self):
        return sorted(int(k) for k in self.columns.keys())

    def column(self, task_id) -> TaskColumn:
        return self.columns[str(task_id)]

    def grow_task_column(self, task_id, width_factor, head_out, state_dim,
                         head_kind, rng):
        existing = self.task_ids
        if existing and task_id != existing[-1] + 1 or not existing and task_id != 1:
            raise GrowthError(
                f"task ids must grow consecutively; have {existing}, got {task_id}")
        column = TaskColumn(task_id, self.input_channels, self.input_hw, width_factor,
                            head_out, state_dim, head_kind, self.tau_init, self.v_th, self.beta)
        column.init_weights(rng)
        self.columns[str(task_id)] = column
        return self

    def edges_into(self, dest_task, dest_block=None):
        found = []
        for edge in self.edges:
            if edge.dest_task == dest_task and (dest_block is None or edge.dest_block == dest_block):
                found.append(edge)
        return found

    def wire_edges(self, dest_task, choices, rng):
        """Materialize edges for connect-choices; no edge for no-connection."""
        created = []
        for choice in choices:
            if choice.source_task >= dest_task:
                raise WiringError(
                    f"choice references source task {choice.source_task} >= dest task {dest_task}")
            if choice.dest_block not in DEST_BLOCKS:
                raise WiringError(f"dest block must be one of {DEST_BLOCKS}, got {choice.dest_block}")
            if choice.source_block is None:
                continue
            src_col = self.column(choice.source_task)
            dst_col = self.column(dest_task)
            edge = LongRangeEdge(
                choice.source_task, choice.source_block, dest_task, choice.dest_block,
                source_channels=src_col.channels[choice.source_block - 1],
                dest_channels=dst_col.channels[choice.dest_block - 2],
                input_hw=self.input_hw)
            edge.init_weights(rng)
            self.edges.append(edge)
            created.append(edge)
        self.assert_acyclic()
        return created

    def remove_edges(self, edges):
        drop = {id(e) for e in edges}
        self.edges = torch.nn.ModuleList([e for e in self.edges if id(e) not in drop])

    def assert_acyclic(self):
        """Topological sort over (task, block) nodes; raises on a cycle."""
        nodes = [(t, b) for t in self.task_ids for b in range(1, 5)]
        deps = {node: set() for node in nodes}
        for t in self.task_ids:
            for b in range(2, 5):
                deps[(t, b)].add((t, b - 1))
        for edge in self.edges:
            deps[(edge.dest_task, edge.dest_block)].add((edge.source_task, edge.source_block))
        done, order = set(), []
        while len(order) < len(nodes):
            ready = [n for n in nodes if n not in done and deps[n] <= done]
            if not ready:
                raise WiringError("long-range wiring created a cycle")
            for n in ready:
                done.add(n)
                order.append(n)
        return order

    # -- forward -----------------------------------------------------------

    def forward_task(self, task_id, images, states=None, relaxed=False,
                     source_outputs=None, record=None, record_tasks=None):
        """Readout of `task_id` computed through columns <= task_id.

        source_outputs: optional {(task, block): spike train} cache; when given,
        columns other than `task_id` are not recomputed.
        record/record_tasks: capture per-block layer trains for trace probes.
        """
        outputs = self._run_columns(task_id, images, relaxed, source_outputs,
                                    record, record_tasks)
        final_train = outputs[(task_id, 4)]
        return self.column(task_id).readout(final_train, states)

    def ancestor_tasks(self, task_id):
        """Tasks whose columns feed `task_id` (transitively), plus itself."""
        needed = {task_id}
        for t in sorted(self.task_ids, reverse=True):
            if t in needed:
                for edge in self.edges_into(t):
                    needed.add(edge.source_task)
        return needed

    def _run_columns(self, upto_task, images, relaxed, source_outputs, record, record_tasks,
                     all_columns=False):
        block_out = dict(source_outputs) if source_outputs else {}
        needed = None if all_columns else self.ancestor_tasks(upto_task)
        input_train = encode_direct(images, self.step_count)
        for t in self.task_ids:
            if t > upto_task:
                break
            if needed is not None and t not in needed:
                continue
            if source_outputs and t != upto_task and (t, 4) in block_out:
                continue
            column = self.column(t)
            x = input_train
            for b in range(1, 5):
                extras = []
                for edge in self.edges_into(t, b):
                    src = block_out.get((edge.source_task, edge.source_block))
                    if src is None:
                        raise WiringError(
                            f"edge source ({edge.source_task},{edge.source_block}) not computed "
                            f"for dest ({t},{b})")
                    extras.append(edge(src))
                x = merge_inputs(x, extras)
                rec = None
                if record is not None and (record_tasks is None or t in record_tasks):
                    rec = record.setdefault((t, b), {})
                x = column.blocks[b - 1](x, relaxed=relaxed, record=rec, static_input=b == 1)
                block_out[(t, b)] = x
        return block_out

    def forward_blocks(self, upto_task, images, relaxed=False, record=None, record_tasks=None):
        """Spike trains of every block of columns <= upto_task (no readout)."""
        return self._run_columns(upto_task, images, relaxed, None, record, record_tasks,
                                 all_columns=True)

    # -- parameter accounting ------------------------------------------------

    def task_parameters(self, task_id, include_adapters=True):
        params = list(self.column(task_id).parameters())
        if include_adapters:
            for edge in self.edges_into(task_id):
                params.extend(edge.parameters())
        return params

    def parameter_census(self):
        """Active/total local weights per (task, block) plus long-range counts."""
        per_block = {}
        for t in self.task_ids:
            for b in range(1, 5):
                block = self.column(t).blocks[b - 1]
                total = active = 0
                for _, layer in block.conv_layers():
                    total += layer.weight.numel()
                    active += int(layer.mask.sum().item())
                per_block[(t, b)] = {
                    "total": total,
                    "active": active,
                    "sparsity": 1.0 - active / total if total else 0.0,
                }
        lr_params = sum(e.adapter.weight.numel() for e in self.edges)
        totals = {
            "local_total": sum(v["total"] for v in per_block.values()),
            "local_active": sum(v["active"] for v in per_block.values()),
            "long_range_params": lr_params,
            "edge_count": len(self.edges),
        }
        return per_block, totals
