"""Continual-learning protocol: grow, evolve wiring, train, feedback-prune.

Phase sequence (full mode, T tasks): task 1 emits a single `grow` record
(growth plus training fold into one phase); every later task emits `grow`
(structure only), `evolve` (episodes, finalized wiring, final training), and
`prune` (feedback inhibition/pruning of all earlier tasks) records. Direct
modes train each task in isolation; `direct-pruning` additionally
self-prunes each task with E = 0; `no-inhibition` keeps evolution but skips
pruning phases entirely.

All randomness flows through one numpy PCG64 generator whose state is
checkpointed at every phase boundary, so resume-from-checkpoint reproduces
the remainder of a run bit-identically. Checkpoints use the "TDMCL1"
container: magic, version, JSON manifest, raw float32 weight blobs,
bit-packed masks, trailing CRC32.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import evolution, plasticity, tasks
from .config import RunConfig, format_config, parse_config_text
from .errors import CheckpointError, DivergenceError
from .snn import make_optimizer, train_step
from .topology import ColumnGraph, WiringChoice

CHECKPOINT_MAGIC = b"TDMCL1"
CHECKPOINT_VERSION = 1


def apply_thread_cap():
    """Honor TDMCL_THREADS (worker parallelism cap; default machine cores)."""
    raw = os.environ.get("TDMCL_THREADS", "")
    if raw.strip():
        n = max(1, int(raw))
        torch.set_num_threads(n)
        os.environ.setdefault("OMP_NUM_THREADS", str(n))


@dataclass
class TaskArrays:
    """Torch views of one task's data plus its spec."""

    spec: tasks.TaskSpec
    train_images: torch.Tensor
    train_states: torch.Tensor | None
    train_targets: torch.Tensor
    test_images: torch.Tensor
    test_states: torch.Tensor | None
    test_targets: torch.Tensor

    @property
    def train_n(self):
        return self.train_images.shape[0]


def _to_arrays(data: tasks.TaskData) -> TaskArrays:
    def tt(split):
        images = torch.from_numpy(split.images)
        states = None if split.states is None else torch.from_numpy(split.states)
        if data.spec.output_kind == "class":
            targets = torch.from_numpy(split.targets).long()
        else:
            targets = torch.from_numpy(split.targets).float()
        return images, states, targets

    tr = tt(data.train)
    te = tt(data.test)
    return TaskArrays(data.spec, *tr, *te)


class MetricsLedger:
    """Append-only list of phase records; serializes to canonical JSON lines."""

    def __init__(self, records=None):
        self.records = list(records or [])

    def append(self, record):
        record = dict(record, index=len(self.records))
        self.records.append(record)
        return record

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n"
                       for r in self.records)

    @staticmethod
    def from_jsonl(text: str) -> "MetricsLedger":
        return MetricsLedger([json.loads(line) for line in text.splitlines() if line.strip()])

    def phase_tags(self):
        return [(r["phase"], r["task"]) for r in self.records]


def phase_plan(mode: str, n_tasks: int):
    plan = []
    for t in range(1, n_tasks + 1):
        plan.append(("grow", t))
        if mode in ("full", "no-inhibition") and t >= 2:
            plan.append(("evolve", t))
        if mode == "full" and t >= 2:
            plan.append(("prune", t))
        if mode == "direct-pruning":
            plan.append(("prune", t))
    return plan


class ContinualRun:
    """Owns one run: graph, controller states, rng, ledger, and position."""

    def __init__(self, config: RunConfig, suite=None):
        self.config = config
        if suite is None:
            suite = tasks.generate_suite(
                config.suite_seed, config.suite_train_size, config.suite_test_size,
                config.suite_overlap, config.suite_tau_cmd, config.run_tasks)
        self.suite = suite
        self.arrays = {d.spec.task_id: _to_arrays(d) for d in suite}
        self.graph = ColumnGraph(
            input_hw=tasks.GRID, input_channels=3, step_count=config.model_step,
            tau_init=config.model_tau_init, v_th=config.model_v_th, beta=config.model_beta)
        self.rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([config.run_seed, config.suite_seed])))
        self.ledger = MetricsLedger()
        self.plan = phase_plan(config.run_mode, config.run_tasks)
        self.position = 0
        self.choice_matrices: dict[int, evolution.ChoiceMatrix] = {}
        self.finalized_choices: dict[int, list[WiringChoice]] = {}
        self.train_counts: dict[int, int] = {}
        self.train_losses: dict[int, float] = {}
        self._source_cache = None
        self._cache_task = None

    # ------------------------------------------------------------------ phases

    @property
    def done(self) -> bool:
        return self.position >= len(self.plan)

    def run_all(self, out_dir=None, progress=None):
        while not self.done:
            self.step_phase(out_dir=out_dir, progress=progress)
        return self.ledger

    def step_phase(self, out_dir=None, progress=None):
        phase, task_id = self.plan[self.position]
        started = time.perf_counter()
        try:
            if phase == "grow":
                extras = self._phase_grow(task_id)
            elif phase == "evolve":
                extras = self._phase_evolve(task_id)
            else:
                extras = self._phase_prune(task_id)
        except DivergenceError as err:
            err.phase = f"{phase}:{task_id}"
            if out_dir is not None:
                err.checkpoint = str(self.save_checkpoint(Path(out_dir) / "diverged.bin"))
            raise
        record = self._make_record(phase, task_id, extras)
        self.ledger.append(record)
        self.position += 1
        if out_dir is not None:
            self.save_checkpoint(Path(out_dir) / "checkpoint.bin")
            (Path(out_dir) / "ledger.jsonl").write_text(self.ledger.to_jsonl())
        if progress is not None:
            progress(record, time.perf_counter() - started)
        return record

    def _phase_grow(self, task_id):
        spec = self.arrays[task_id].spec
        self.graph.grow_task_column(task_id, self.config.model_width_factor,
                                    spec.out_dim, spec.state_dim,
                                    {"class": "class", "vector": "vector",
                                     "sequence": "sequence"}[spec.output_kind], self.rng)
        train_now = task_id == 1 or self.config.run_mode.startswith("direct")
        if train_now:
            loss = self._train_task(task_id, self.config.train_epochs, self.rng)
            self.train_losses[task_id] = loss
            self.train_counts[task_id] = self.train_counts.get(task_id, 0) + 1
        return {"train_loss": self.train_losses.get(task_id)} if train_now else {}

    def _phase_evolve(self, task_id):
        matrix = evolution.init_choice_matrix(task_id)
        self.choice_matrices[task_id] = matrix
        column = self.graph.column(task_id)
        pristine = {k: v.detach().clone() for k, v in column.state_dict().items()}
        self._build_source_cache(task_id)
        episode_seeds = [int(s) for s in
                         self.rng.integers(0, 2 ** 63 - 1, size=self.config.evolution_episodes)]
        for seed in episode_seeds:
            ep_rng = np.random.Generator(np.random.PCG64(seed))
            choices = evolution.sample_wiring(matrix, ep_rng)
            column.load_state_dict(pristine)
            edges = self.graph.wire_edges(task_id, choices, ep_rng)
            try:
                loss = self._train_task(task_id, self.config.train_burst_epochs, ep_rng)
            finally:
                self.graph.remove_edges(edges)
            if not np.isfinite(loss):  # zero-epoch bursts carry no signal
                loss = 0.0
            evolution.record_episode(matrix, choices, loss)
            evolution.update_all_rows(matrix, self.config.evolution_gamma,
                                      self.config.evolution_hl_scope)
        final_choices = evolution.finalize_wiring(matrix)
        self.finalized_choices[task_id] = final_choices
        column.load_state_dict(pristine)
        self.graph.wire_edges(task_id, final_choices, self.rng)
        loss = self._train_task(task_id, self.config.train_epochs, self.rng)
        self.train_losses[task_id] = loss
        self.train_counts[task_id] = self.train_counts.get(task_id, 0) + 1
        self._drop_source_cache()
        return {"train_loss": loss,
                "no_connect_fraction": evolution.no_connect_fraction(final_choices)}

    def _phase_prune(self, task_id):
        if self.config.run_mode == "direct-pruning":
            targets = [task_id]  # self-prune with E = 0 right after training
        else:
            targets = [k for k in self.graph.task_ids if k < task_id]
        prune_rows = []
        for k in targets:
            hebbians, e_scores = self._plasticity_inputs(k, task_id)
            rows = plasticity.prune_task(self.graph, k, hebbians, e_scores,
                                         self.train_counts.get(k, 0),
                                         self.config.plasticity_N)
            prune_rows.extend(rows)
        return {"prune": self._aggregate_prune_rows(prune_rows)}

    def _plasticity_inputs(self, task_k, upto_task):
        probe = self._probe_images(task_k)
        traces = plasticity.collect_column_traces(self.graph, task_k, probe,
                                                  self.config.plasticity_alpha)
        hebbians = {}
        raws = {}
        for b in range(1, 5):
            for name, h in plasticity.block_hebbians(traces[(task_k, b)],
                                                     normalize=self.config.plasticity_hebbian_scope == "layer").items():
                key = (b, name)
                if self.config.plasticity_hebbian_scope == "layer":
                    hebbians[key] = h
                else:
                    raws[key] = h
        if self.config.plasticity_hebbian_scope == "network":
            lo = min(float(h.min()) for h in raws.values())
            hi = max(float(h.max()) for h in raws.values())
            for key, h in raws.items():
                hebbians[key] = torch.zeros_like(h) if hi <= lo else (h - lo) / (hi - lo)
        if self.config.run_mode == "direct-pruning":
            e_scores = {b: 0.0 for b in range(1, 5)}
        else:
            e_scores = {b: plasticity.generality(self.choice_matrices, task_k, b, upto_task)
                        for b in range(1, 5)}
        return hebbians, e_scores

    def _probe_images(self, task_k):
        arrays = self.arrays[task_k]
        n = arrays.train_n
        size = min(self.config.plasticity_probe_size, n)
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([self.config.suite_seed, task_k, 2])))
        idx = rng.choice(n, size=size, replace=False)
        return arrays.train_images[torch.from_numpy(np.sort(idx))]

    @staticmethod
    def _aggregate_prune_rows(rows):
        merged = {}
        for r in rows:
            key = (r["task"], r["block"])
            m = merged.setdefault(key, {"task": r["task"], "block": r["block"],
                                        "active_before": 0, "active_after": 0,
                                        "_v_sum": 0.0, "_h_sum": 0.0, "_w": 0,
                                        "E": r["E"]})
            m["active_before"] += r["active_before"]
            m["active_after"] += r["active_after"]
            m["_v_sum"] += r["mean_V"] * r["active_before"]
            m["_h_sum"] += r["mean_H"] * r["active_before"]
            m["_w"] += r["active_before"]
        out = []
        for key in sorted(merged):
            m = merged[key]
            w = max(m.pop("_w"), 1)
            m["mean_V"] = m.pop("_v_sum") / w
            m["mean_H"] = m.pop("_h_sum") / w
            out.append(m)
        return out

    # ------------------------------------------------------------------ training

    def _train_task(self, task_id, epochs, rng):
        arrays = self.arrays[task_id]
        params = self.graph.task_parameters(task_id)
        opt = make_optimizer(params, self.config.train_lr, self.config.train_momentum)
        n = arrays.train_n
        bs = self.config.train_batch_size
        last_epoch_losses = [float("nan")]
        for _epoch in range(epochs):
            order = rng.permutation(n)
            losses = []
            for start in range(0, n, bs):
                idx = torch.from_numpy(order[start:start + bs].copy())
                images = arrays.train_images[idx]
                targets = arrays.train_targets[idx]
                states = None if arrays.train_states is None else arrays.train_states[idx]
                source_outputs = self._cached_sources(idx)
                loss = train_step(self.graph, task_id, images, targets, states,
                                  arrays.spec.loss_kind, opt,
                                  source_outputs=source_outputs)
                losses.append(loss)
            last_epoch_losses = losses
        return float(np.mean(last_epoch_losses)) if epochs else float("nan")

    def _build_source_cache(self, task_id):
        """Freeze earlier columns' block outputs over task_id's train split."""
        if self.config.run_mode.startswith("direct") or task_id < 2:
            self._source_cache, self._cache_task = None, None
            return
        arrays = self.arrays[task_id]
        cache = {}
        with torch.no_grad():
            for start in range(0, arrays.train_n, 256):
                chunk = arrays.train_images[start:start + 256]
                block_out = self.graph.forward_blocks(task_id - 1, chunk)
                for (k, b), train in block_out.items():
                    if b == 1:
                        continue  # block 1 is never a long-range source
                    stored = train.to(torch.uint8).transpose(0, 1).contiguous()
                    cache.setdefault((k, b), []).append(stored)
        self._source_cache = {key: torch.cat(parts, dim=0) for key, parts in cache.items()}
        self._cache_task = task_id

    def _drop_source_cache(self):
        self._source_cache, self._cache_task = None, None

    def _cached_sources(self, idx):
        if self._source_cache is None:
            return None
        return {key: data[idx].transpose(0, 1).float()
                for key, data in self._source_cache.items()}

    # ------------------------------------------------------------------ evaluation

    def learned_tasks(self):
        return sorted(t for t, n in self.train_counts.items() if n >= 1)

    def evaluate_task(self, task_id, batch_size=250):
        arrays = self.arrays[task_id]
        outputs = []
        with torch.no_grad():
            for start in range(0, arrays.test_images.shape[0], batch_size):
                images = arrays.test_images[start:start + batch_size]
                states = None if arrays.test_states is None else \
                    arrays.test_states[start:start + batch_size]
                outputs.append(self.graph.forward_task(task_id, images, states=states))
        outputs = torch.cat(outputs, dim=0).numpy()
        return tasks.metric_value(arrays.spec, outputs, arrays.test_targets.numpy())

    def evaluate_all(self):
        return {t: self.evaluate_task(t) for t in self.learned_tasks()}

    # ------------------------------------------------------------------ records

    def _make_record(self, phase, task_id, extras):
        metrics = self.evaluate_all()
        per_block, totals = self.graph.parameter_census()
        decided = [c for t in sorted(self.finalized_choices)
                   for c in self.finalized_choices[t]]
        record = {
            "phase": phase,
            "task": task_id,
            "metrics": {str(t): m for t, m in metrics.items()},
            "avg_metric": float(np.mean(list(metrics.values()))) if metrics else 0.0,
            "local_total": totals["local_total"],
            "local_active": totals["local_active"],
            "long_range_params": totals["long_range_params"],
            "edge_count": totals["edge_count"],
            "long_range_sparsity": evolution.no_connect_fraction(decided),
            "census": [[t, b, v["total"], v["active"]]
                       for (t, b), v in sorted(per_block.items())],
            "choice_digests": {str(t): hashlib.sha256(m.p.tobytes()).hexdigest()[:16]
                               for t, m in sorted(self.choice_matrices.items())},
        }
        record.update(extras)
        return record

    # ------------------------------------------------------------------ fine-tune

    def fine_tune(self, task_id, epochs=None):
        """Unfreeze task_id's surviving weights and retrain on its own data."""
        epochs = self.config.train_finetune_epochs if epochs is None else epochs
        before = self.evaluate_task(task_id)
        if epochs:
            rng = np.random.Generator(np.random.PCG64(
                np.random.SeedSequence([self.config.run_seed, task_id, 3])))
            self._drop_source_cache()
            self._train_task(task_id, epochs, rng)
            self.train_counts[task_id] = self.train_counts.get(task_id, 0) + 1
        after = self.evaluate_task(task_id)
        return before, after

    # ------------------------------------------------------------------ checkpoints

    def save_checkpoint(self, path) -> Path:
        manifest = {
            "version": CHECKPOINT_VERSION,
            "config": format_config(self.config),
            "position": self.position,
            "train_counts": {str(t): n for t, n in self.train_counts.items()},
            "train_losses": {str(t): v for t, v in self.train_losses.items()},
            "records": self.ledger.records,
            "rng_state": _rng_state_to_json(self.rng),
            "columns": [{
                "task_id": t,
                "head_out": list(self.arrays[t].spec.out_dim),
                "state_dim": self.arrays[t].spec.state_dim,
                "head_kind": self.graph.column(t).head_kind,
            } for t in self.graph.task_ids],
            "edges": [{
                "source_task": e.source_task, "source_block": e.source_block,
                "dest_task": e.dest_task, "dest_block": e.dest_block,
            } for e in self.graph.edges],
            "choices": {str(t): _matrix_to_json(m)
                        for t, m in self.choice_matrices.items()},
            "finalized": {str(t): [[c.dest_block, c.source_task, c.option] for c in cs]
                          for t, cs in self.finalized_choices.items()},
        }
        tensor_entries = []
        blobs = []
        state = self.graph.state_dict()
        for name in sorted(state):
            tensor = state[name]
            if name.endswith(".mask"):
                packed = np.packbits(tensor.numpy().astype(np.uint8).reshape(-1))
                tensor_entries.append({"name": name, "shape": list(tensor.shape),
                                       "kind": "mask", "nbytes": len(packed.tobytes())})
                blobs.append(packed.tobytes())
            else:
                raw = tensor.detach().numpy().astype("<f4").tobytes()
                tensor_entries.append({"name": name, "shape": list(tensor.shape),
                                       "kind": "dense", "nbytes": len(raw)})
                blobs.append(raw)
        manifest["tensors"] = tensor_entries
        payload = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
        out = bytearray()
        out += CHECKPOINT_MAGIC
        out.append(CHECKPOINT_VERSION)
        out += len(payload).to_bytes(8, "little")
        out += payload
        for blob in blobs:
            out += blob
        out += (zlib.crc32(bytes(out)) & 0xFFFFFFFF).to_bytes(4, "little")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(bytes(out))
        return path

    @staticmethod
    def load_checkpoint(path, suite=None) -> "ContinualRun":
        raw = Path(path).read_bytes()
        if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic, expected {CHECKPOINT_MAGIC!r}")
        if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != int.from_bytes(raw[-4:], "little"):
            raise CheckpointError(f"{path}: checksum mismatch")
        pos = len(CHECKPOINT_MAGIC)
        version = raw[pos]
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        pos += 1
        payload_len = int.from_bytes(raw[pos:pos + 8], "little")
        pos += 8
        manifest = json.loads(raw[pos:pos + payload_len].decode("utf-8"))
        pos += payload_len
        config = parse_config_text(manifest["config"], source=f"{path}#config")
        run = ContinualRun(config, suite=suite)
        for col in manifest["columns"]:
            t = col["task_id"]
            spec = run.arrays[t].spec
            run.graph.grow_task_column(t, config.model_width_factor, spec.out_dim,
                                       spec.state_dim, col["head_kind"], run.rng)
        for e in manifest["edges"]:
            run.graph.wire_edges(e["dest_task"],
                                 [WiringChoice(e["dest_block"], e["source_task"],
                                               e["source_block"] + 1)], run.rng)
        state = run.graph.state_dict()
        for entry in manifest["tensors"]:
            nbytes = entry["nbytes"]
            chunk = raw[pos:pos + nbytes]
            pos += nbytes
            shape = tuple(entry["shape"])
            if entry["kind"] == "mask":
                bits = np.unpackbits(np.frombuffer(chunk, dtype=np.uint8))
                values = bits[:int(np.prod(shape, dtype=int))].reshape(shape).astype(np.float32)
            else:
                values = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
            state[entry["name"]].copy_(torch.from_numpy(values))
        for module in run.graph.modules():
            if hasattr(module, "has_pruned") and hasattr(module, "mask"):
                module.has_pruned = not bool(module.mask.all())
        run.rng = _rng_state_from_json(manifest["rng_state"])
        run.position = manifest["position"]
        run.train_counts = {int(t): n for t, n in manifest["train_counts"].items()}
        run.train_losses = {int(t): v for t, v in manifest["train_losses"].items()}
        run.ledger = MetricsLedger(manifest["records"])
        run.choice_matrices = {int(t): _matrix_from_json(int(t), m)
                               for t, m in manifest["choices"].items()}
        run.finalized_choices = {
            int(t): [WiringChoice(d, k, o) for d, k, o in cs]
            for t, cs in manifest["finalized"].items()}
        return run


def _rng_state_to_json(rng):
    return json.loads(json.dumps(rng.bit_generator.state))


def _rng_state_from_json(state):
    gen = np.random.Generator(np.random.PCG64())
    gen.bit_generator.state = state
    return gen


def _matrix_to_json(m: evolution.ChoiceMatrix):
    return {"task_id": m.task_id, "rows": [list(r) for r in m.rows],
            "p": m.p.tolist(), "h_n": m.h_n.tolist(), "losses": m.losses,
            "finalized": m.finalized}


def _matrix_from_json(task_id, d):
    m = evolution.ChoiceMatrix(
        task_id=task_id, rows=[tuple(r) for r in d["rows"]],
        p=np.array(d["p"], dtype=np.float64),
        h_n=np.array(d["h_n"], dtype=np.int64),
        losses=[[list(map(float, opt)) for opt in row] for row in d["losses"]],
        finalized=d["finalized"])
    return m


# ---------------------------------------------------------------------- report

def run_continual(config: RunConfig, suite=None, out_dir=None, progress=None):
    run = ContinualRun(config, suite=suite)
    run.run_all(out_dir=out_dir, progress=progress)
    return run


def write_report(ledger: MetricsLedger, choice_matrices, out_dir, hl_scope="row"):
    """Emit summary/metrics/census/choices/pruning CSVs from a ledger."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    summary = ["index,phase,task,avg_metric,local_total,local_active,"
               "edge_count,long_range_params,long_range_sparsity"]
    metrics = ["index,task,metric"]
    census = ["index,task,block,total,active,sparsity"]
    pruning = ["round,task,block,active_before,active_after,mean_V,mean_H,E"]
    for r in ledger.records:
        summary.append(
            f"{r['index']},{r['phase']},{r['task']},{r['avg_metric']:.4f},"
            f"{r['local_total']},{r['local_active']},{r['edge_count']},"
            f"{r['long_range_params']},{r['long_range_sparsity']:.4f}")
        for t, m in sorted(r["metrics"].items(), key=lambda kv: int(kv[0])):
            metrics.append(f"{r['index']},{t},{m:.4f}")
        for t, b, total, active in r["census"]:
            sparsity = 1.0 - active / total if total else 0.0
            census.append(f"{r['index']},{t},{b},{total},{active},{sparsity:.6f}")
        for row in r.get("prune", []) or []:
            pruning.append(
                f"{r['index']},{row['task']},{row['block']},{row['active_before']},"
                f"{row['active_after']},{row['mean_V']:.6f},{row['mean_H']:.6f},"
                f"{row['E']:.6f}")
    choices = ["task,dest_block,source_task,option,p,h_n,h_l"]
    for t in sorted(choice_matrices):
        m = choice_matrices[t]
        h_l = evolution.h_l_matrix(m, hl_scope)
        for i, (dest_block, source_task) in enumerate(m.rows):
            for option in range(evolution.N_OPTIONS):
                choices.append(f"{t},{dest_block},{source_task},{option},"
                               f"{m.p[i, option]:.6f},{m.h_n[i, option]},"
                               f"{h_l[i, option]:.6f}")

    (out / "summary.csv").write_text("\n".join(summary) + "\n")
    (out / "metrics.csv").write_text("\n".join(metrics) + "\n")
    (out / "census.csv").write_text("\n".join(census) + "\n")
    (out / "pruning.csv").write_text("\n".join(pruning) + "\n")
    (out / "choices.csv").write_text("\n".join(choices) + "\n")
    return out
