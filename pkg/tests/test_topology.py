import numpy as np
import pytest
import torch

from tdmcl.errors import GrowthError, WiringError
from tdmcl.topology import (
    ColumnGraph,
    WiringChoice,
    block_spatial,
    ladder_channels,
    merge_inputs,
)


def make_graph(rng, tasks=1, width=0.25):
    graph = ColumnGraph(input_hw=16, input_channels=3, step_count=4)
    for t in range(1, tasks + 1):
        graph.grow_task_column(t, width, (5,), 0, "class", rng)
    return graph


class TestLadder:
    def test_paper_widths(self):
        assert ladder_channels(1.0) == (32, 64, 128, 256)

    def test_quarter_widths(self):
        assert ladder_channels(0.25) == (8, 16, 32, 64)

    def test_ceiling(self):
        assert ladder_channels(0.1) == (4, 7, 13, 26)


class TestGrowth:
    def test_grow_on_empty(self, rng):
        graph = make_graph(rng, tasks=1)
        assert graph.task_ids == [1]
        assert len(graph.edges) == 0
        assert [b.out_channels for b in graph.column(1).blocks] == [8, 16, 32, 64]

    def test_duplicate_task_rejected(self, rng):
        graph = make_graph(rng, tasks=2)
        with pytest.raises(GrowthError):
            graph.grow_task_column(2, 0.25, (5,), 0, "class", rng)

    def test_growth_leaves_earlier_columns_untouched(self, rng):
        graph = make_graph(rng, tasks=1)
        before = {k: v.clone() for k, v in graph.column(1).state_dict().items()}
        x = torch.from_numpy(rng.random((4, 3, 16, 16)).astype(np.float32))
        out_before = graph.forward_task(1, x)
        graph.grow_task_column(2, 0.25, (5,), 0, "class", rng)
        after = graph.column(1).state_dict()
        assert all(torch.equal(before[k], after[k]) for k in before)
        assert torch.equal(out_before, graph.forward_task(1, x))


class TestWiring:
    def test_no_connection_choices_add_no_edges(self, rng):
        graph = make_graph(rng, tasks=2)
        created = graph.wire_edges(2, [WiringChoice(2, 1, 0), WiringChoice(3, 1, 1),
                                       WiringChoice(4, 1, 2)], rng)
        assert created == []
        assert len(graph.edges) == 0

    def test_source_block3_into_dest_block2(self, rng):
        graph = make_graph(rng, tasks=2)
        created = graph.wire_edges(2, [WiringChoice(2, 1, 4)], rng)
        assert len(created) == 1
        edge = created[0]
        assert (edge.source_task, edge.source_block) == (1, 3)
        assert (edge.dest_task, edge.dest_block) == (2, 2)
        # block-3 output is 4x4, block-2 input is 16x16 -> 4x upsample
        assert edge.up_factor == 4
        x = torch.from_numpy(rng.random((2, 3, 16, 16)).astype(np.float32))
        out = graph.forward_task(2, x)
        assert out.shape == (2, 5)

    def test_two_sources_into_one_dest(self, rng):
        graph = make_graph(rng, tasks=3)
        created = graph.wire_edges(3, [WiringChoice(3, 1, 3), WiringChoice(3, 2, 5)], rng)
        assert len(created) == 2
        x = torch.from_numpy(rng.random((2, 3, 16, 16)).astype(np.float32))
        assert graph.forward_task(3, x).shape == (2, 5)
        assert len(graph.edges_into(3, 3)) == 2

    def test_backward_reference_rejected(self, rng):
        graph = make_graph(rng, tasks=2)
        with pytest.raises(WiringError):
            graph.wire_edges(2, [WiringChoice(2, 2, 3)], rng)

    def test_downsampling_adapter(self, rng):
        graph = make_graph(rng, tasks=2)
        (edge,) = graph.wire_edges(2, [WiringChoice(4, 1, 3)], rng)
        # block-2 output 8x8 -> block-4 input 4x4: stride-2 1x1 conv
        assert edge.up_factor == 1
        assert edge.adapter.stride == 2
        x = torch.from_numpy(rng.random((2, 3, 16, 16)).astype(np.float32))
        assert graph.forward_task(2, x).shape == (2, 5)

    def test_acyclic_after_wiring(self, rng):
        graph = make_graph(rng, tasks=3)
        graph.wire_edges(2, [WiringChoice(2, 1, 4)], rng)
        graph.wire_edges(3, [WiringChoice(4, 1, 5), WiringChoice(2, 2, 3)], rng)
        order = graph.assert_acyclic()
        assert len(order) == 12

    def test_remove_edges(self, rng):
        graph = make_graph(rng, tasks=2)
        created = graph.wire_edges(2, [WiringChoice(2, 1, 4), WiringChoice(3, 1, 3)], rng)
        graph.remove_edges(created[:1])
        assert len(graph.edges) == 1


class TestMergeInputs:
    def test_identity_without_extras(self):
        x = torch.rand(4, 2, 3, 5, 5)
        assert torch.equal(merge_inputs(x, []), x)

    def test_zero_extra_is_identity(self):
        x = torch.rand(4, 2, 3, 5, 5)
        assert torch.equal(merge_inputs(x, [torch.zeros_like(x)]), x)

    def test_sum_semantics(self):
        x = torch.rand(4, 2, 3, 5, 5)
        assert torch.allclose(merge_inputs(x, [x]), 2 * x)

    def test_shape_mismatch_raises(self):
        x = torch.rand(4, 2, 3, 5, 5)
        with pytest.raises(WiringError):
            merge_inputs(x, [torch.rand(4, 2, 3, 4, 4)])


class TestCensus:
    def test_fresh_column_zero_sparsity(self, rng):
        graph = make_graph(rng, tasks=1)
        per_block, totals = graph.parameter_census()
        assert all(v["sparsity"] == 0.0 for v in per_block.values())
        assert totals["local_active"] == totals["local_total"]
        assert totals["edge_count"] == 0

    def test_masking_half_a_layer(self, rng):
        graph = make_graph(rng, tasks=1)
        layer = graph.column(1).blocks[1].conv1
        n = layer.mask.numel()
        flat = layer.mask.reshape(-1)
        flat[: n // 2] = 0.0
        per_block, totals = graph.parameter_census()
        _, before_total = graph.parameter_census()
        assert per_block[(1, 2)]["active"] == per_block[(1, 2)]["total"] - n // 2
        assert totals["local_active"] == totals["local_total"] - n // 2

    def test_adapters_count_as_long_range(self, rng):
        graph = make_graph(rng, tasks=2)
        graph.wire_edges(2, [WiringChoice(2, 1, 4)], rng)
        _, totals = graph.parameter_census()
        assert totals["long_range_params"] == graph.edges[0].adapter.weight.numel()
        assert totals["edge_count"] == 1


class TestOldTaskStability:
    def test_forward_unchanged_by_later_growth_and_wiring(self, rng):
        graph = make_graph(rng, tasks=1)
        x = torch.from_numpy(rng.random((3, 3, 16, 16)).astype(np.float32))
        baseline = graph.forward_task(1, x)
        graph.grow_task_column(2, 0.25, (3,), 0, "vector", rng)
        graph.wire_edges(2, [WiringChoice(2, 1, 4), WiringChoice(4, 1, 5)], rng)
        assert torch.equal(graph.forward_task(1, x), baseline)

    def test_block_spatial_plan(self):
        assert [block_spatial(16, b) for b in (1, 2, 3, 4)] == [16, 8, 4, 2]

    def test_static_input_path_equals_general_path(self, rng):
        graph = make_graph(rng, tasks=1)
        x = torch.from_numpy(rng.random((2, 3, 16, 16)).astype(np.float32))
        from tdmcl.snn import encode_direct

        train = encode_direct(x, 4)
        block = graph.column(1).blocks[0]
        fast = block(train, static_input=True)
        slow = block(train.contiguous(), static_input=False)
        assert torch.allclose(fast, slow)
