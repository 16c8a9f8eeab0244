"""Online evolutionary controller for long-range connection selection.

Per new task t, one 6-way probability vector exists for every
(dest block in {2,3,4}, earlier task k) row: options 0..2 decode to
"no connection", options 3..5 to source block 2/3/4 of task k. Episodes
sample one option per row, train briefly, and record the episode loss;
probabilities then update by pairwise comparison of selection counts h_n
and performance scores h_l (rarely used + high performing options gain),
followed by a softmax renormalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ControllerStateError
from .topology import WiringChoice

N_OPTIONS = 6
NO_CONNECT = (0, 1, 2)
CONNECT = (3, 4, 5)
UNINFORMATIVE_HL = 0.5


@dataclass
class ChoiceMatrix:
    """Probability state plus selection/performance history for one task."""

    task_id: int
    rows: list = field(default_factory=list)  # [(dest_block, source_task)]
    p: np.ndarray = None                      # (R, 6) simplex rows
    h_n: np.ndarray = None                    # (R, 6) selection counts
    losses: list = field(default_factory=list)  # per row: list of 6 loss lists
    finalized: bool = False

    def row_index(self, dest_block, source_task):
        return self.rows.index((dest_block, source_task))


def init_choice_matrix(task_id: int) -> ChoiceMatrix:
    """Uniform simplex rows (3 * (t-1) of them) with zeroed histories."""
    if task_id < 2:
        raise ControllerStateError(f"task {task_id} has no earlier tasks to wire from")
    rows = [(b, k) for b in (2, 3, 4) for k in range(1, task_id)]
    n = len(rows)
    return ChoiceMatrix(
        task_id=task_id,
        rows=rows,
        p=np.full((n, N_OPTIONS), 1.0 / N_OPTIONS, dtype=np.float64),
        h_n=np.zeros((n, N_OPTIONS), dtype=np.int64),
        losses=[[[] for _ in range(N_OPTIONS)] for _ in range(n)],
    )


def _check_simplex(p_row, where):
    if not np.all(np.isfinite(p_row)) or np.any(p_row < 0) or abs(p_row.sum() - 1.0) > 1e-9:
        raise ControllerStateError(f"degenerate probability row at {where}: {p_row}")


def sample_wiring(matrix: ChoiceMatrix, rng: np.random.Generator):
    """One categorical draw per row; deterministic given the rng state."""
    choices = []
    for i, (dest_block, source_task) in enumerate(matrix.rows):
        _check_simplex(matrix.p[i], f"row {i} {(dest_block, source_task)}")
        option = int(rng.choice(N_OPTIONS, p=matrix.p[i]))
        choices.append(WiringChoice(dest_block, source_task, option))
    return choices


def record_episode(matrix: ChoiceMatrix, choices, episode_loss: float):
    """Increment h_n for sampled options and append the shared episode loss."""
    if not np.isfinite(episode_loss):
        raise ControllerStateError(f"episode loss must be finite, got {episode_loss}")
    for choice in choices:
        i = matrix.row_index(choice.dest_block, choice.source_task)
        matrix.h_n[i, choice.option] += 1
        matrix.losses[i][choice.option].append(float(episode_loss))
    return matrix


def _normalize_scores(loss_lists, window):
    """h_l per option: 1 - mean normalized loss over `window`; 0.5 when empty
    or when the window is degenerate (max == min)."""
    lo, hi = (min(window), max(window)) if window else (0.0, 0.0)
    scores = np.full(N_OPTIONS, UNINFORMATIVE_HL)
    if hi <= lo:
        return scores
    for option, recorded in enumerate(loss_lists):
        if recorded:
            normalized = (np.mean(recorded) - lo) / (hi - lo)
            scores[option] = 1.0 - normalized
    return scores


def h_l_matrix(matrix: ChoiceMatrix, scope: str = "row") -> np.ndarray:
    """Performance scores per (row, option) under the chosen normalization scope."""
    n = len(matrix.rows)
    out = np.full((n, N_OPTIONS), UNINFORMATIVE_HL)
    if scope == "task":
        window = [l for row in matrix.losses for opt in row for l in opt]
        for i in range(n):
            out[i] = _normalize_scores(matrix.losses[i], window)
    elif scope == "row":
        for i in range(n):
            window = [l for opt in matrix.losses[i] for l in opt]
            out[i] = _normalize_scores(matrix.losses[i], window)
    elif scope == "option":
        for i in range(n):
            for option, recorded in enumerate(matrix.losses[i]):
                if recorded:
                    lo, hi = min(recorded), max(recorded)
                    if hi > lo:
                        out[i, option] = 1.0 - (np.mean(recorded) - lo) / (hi - lo)
    else:
        raise ControllerStateError(f"unknown h_l scope '{scope}'")
    return out


def update_probabilities(p_row, h_n_row, h_l_row, gamma: float):
    """Pairwise-comparison update: softmax(p + gamma * (dp+ - dp-))."""
    p = np.asarray(p_row, dtype=np.float64)
    h_n = np.asarray(h_n_row, dtype=np.float64)
    h_l = np.asarray(h_l_row, dtype=np.float64)
    d_hn = h_n[:, None] - h_n[None, :]
    d_hl = h_l[:, None] - h_l[None, :]
    dp_plus = np.sum((d_hn < 0) & (d_hl > 0), axis=1)
    dp_minus = np.sum((d_hn > 0) & (d_hl < 0), axis=1)
    logits = p + gamma * (dp_plus - dp_minus)
    z = np.exp(logits - logits.max())
    return z / z.sum()


def update_all_rows(matrix: ChoiceMatrix, gamma: float, scope: str = "row"):
    h_l = h_l_matrix(matrix, scope)
    for i in range(len(matrix.rows)):
        matrix.p[i] = update_probabilities(matrix.p[i], matrix.h_n[i], h_l[i], gamma)
    return matrix


def finalize_wiring(matrix: ChoiceMatrix):
    """Argmax per row, ties broken by lowest option index; freezes the matrix."""
    choices = []
    for i, (dest_block, source_task) in enumerate(matrix.rows):
        _check_simplex(matrix.p[i], f"row {i} {(dest_block, source_task)}")
        option = int(np.argmax(matrix.p[i]))
        choices.append(WiringChoice(dest_block, source_task, option))
    matrix.finalized = True
    return choices


def no_connect_fraction(choices) -> float:
    if not choices:
        return 0.0
    return sum(1 for c in choices if c.source_block is None) / len(choices)


def usage_probability(matrix: ChoiceMatrix, source_task: int, source_block: int) -> float:
    """Probability that `source_block` of `source_task` is used by this task:
    noisy-or of that block's connect-option mass across the three dest rows."""
    option = source_block + 1  # block 2/3/4 -> option 3/4/5
    miss = 1.0
    for i, (_, k) in enumerate(matrix.rows):
        if k == source_task:
            miss *= 1.0 - matrix.p[i, option]
    return 1.0 - miss
