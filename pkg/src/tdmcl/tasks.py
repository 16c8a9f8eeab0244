"""Seeded procedural PMI-mini suite: perception / motor / interaction tasks.

Nine tasks in fixed family order (perception x3, motor x3, interaction x3),
generated bitwise-deterministically from (seed, sizes, overlap). All images
are 3x16x16 in [0, 1]. Cross-family overlap is engineered: motor and
interaction scenes reuse the perception shape bank and rendering styles for
their goal markers, and class-dependent gains force actual shape recognition,
so earlier columns provide transferable features. With overlap = 0 the later
families switch to a disjoint shape bank with inverted rendering, removing
the shared latent structure.

Binary container format "TDMD1": magic, version byte, JSON header, raw
little-endian tensors per split, trailing CRC32.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptDatasetError, DatasetFormatError

MAGIC = b"TDMD1"
VERSION = 1
GRID = 16
K_CLASSES = 5
SEQ_LEN = 4
STATE_DIM = 4
FAMILY_OF_TASK = {1: "perception", 2: "perception", 3: "perception",
                  4: "motor", 5: "motor", 6: "motor",
                  7: "interaction", 8: "interaction", 9: "interaction"}
TASK_NAMES = {1: "outline-shapes", 2: "filled-shapes", 3: "textured-shapes",
              4: "arm-reach", 5: "stand-balance", 6: "finger-toggle",
              7: "press-goal", 8: "pull-goal", 9: "strike-goal"}

# Direct-training margins above chance at default desk-scale budgets,
# measured once on seeds 0-2 and frozen as the suite's learnability floor.
BASELINE_FLOORS = {1: 40.0, 2: 40.0, 3: 30.0, 4: 25.0, 5: 25.0, 6: 20.0,
                   7: 10.0, 8: 8.0, 9: 8.0}


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    family: str
    name: str
    state_dim: int
    output_kind: str          # "class" | "vector" | "sequence"
    out_dim: tuple            # (K,) | (D,) | (L, D)
    metric: str               # "accuracy" | "neg-mse" | "success-rate"
    loss_kind: str            # "cross-entropy" | "mean-squared-error"
    chance: float
    overlap: float
    tau_cmd: float

    @property
    def input_shape(self):
        return (3, GRID, GRID)

    def to_dict(self):
        d = self.__dict__.copy()
        d["out_dim"] = list(self.out_dim)
        return d

    @staticmethod
    def from_dict(d):
        d = dict(d)
        d["out_dim"] = tuple(d["out_dim"])
        return TaskSpec(**d)


@dataclass
class Split:
    images: np.ndarray            # (N, 3, 16, 16) float32
    states: np.ndarray | None     # (N, state_dim) float32
    targets: np.ndarray           # (N,) int64 | (N, D) | (N, L, D) float32


@dataclass
class TaskData:
    spec: TaskSpec
    train: Split
    test: Split


# --- rendering primitives ----------------------------------------------------

_YY, _XX = np.meshgrid(np.linspace(0.0, 1.0, GRID), np.linspace(0.0, 1.0, GRID),
                       indexing="ij")
_PX = 1.0 / GRID
_CHECKER = ((np.indices((GRID, GRID)).sum(axis=0) // 2) % 2).astype(np.float64)


def _rotate(dx, dy, rot):
    c, s = np.cos(rot), np.sin(rot)
    return c * dx + s * dy, -s * dx + c * dy


def shape_sdf(proto: int, cx, cy, size, rot):
    """Signed distance of prototype `proto` on the canvas grid."""
    x, y = _rotate(_XX - cx, _YY - cy, rot)
    r = np.hypot(x, y)
    if proto == 0:    # disk
        return r - size
    if proto == 1:    # square
        return np.maximum(np.abs(x), np.abs(y)) - size * 0.85
    if proto == 2:    # triangle (three half planes)
        a = y - size * 0.75
        b = -0.866 * x - 0.5 * y - size * 0.45
        c = 0.866 * x - 0.5 * y - size * 0.45
        return np.maximum(a, np.maximum(b, c))
    if proto == 3:    # plus
        w = size * 0.32
        bar1 = np.maximum(np.abs(x) - size, np.abs(y) - w)
        bar2 = np.maximum(np.abs(x) - w, np.abs(y) - size)
        return np.minimum(bar1, bar2)
    if proto == 4:    # ring
        return np.abs(r - size * 0.72) - size * 0.28
    if proto == 5:    # diamond
        return np.abs(x) + np.abs(y) - size
    if proto == 6:    # double bar
        w = size * 0.28
        b1 = np.maximum(np.abs(x) - size, np.abs(y - size * 0.5) - w)
        b2 = np.maximum(np.abs(x) - size, np.abs(y + size * 0.5) - w)
        return np.minimum(b1, b2)
    if proto == 7:    # corner L
        v = np.maximum(np.abs(x + size * 0.35) - size * 0.3, np.abs(y) - size)
        h = np.maximum(np.abs(x) - size, np.abs(y + size * 0.65) - size * 0.3)
        return np.minimum(v, h)
    if proto == 8:    # dot pair
        r1 = np.hypot(x - size * 0.55, y) - size * 0.45
        r2 = np.hypot(x + size * 0.55, y) - size * 0.45
        return np.minimum(r1, r2)
    if proto == 9:    # chevron
        v1 = np.maximum(np.abs(x + 0.5 * y) - size * 0.28, np.abs(y) - size)
        v2 = np.maximum(np.abs(x - 0.5 * y) - size * 0.28, np.abs(y) - size)
        return np.minimum(v1, v2)
    raise ConfigError(f"unknown shape prototype {proto}")


def _coverage(sdf):
    return np.clip(0.5 - sdf / (2.0 * _PX), 0.0, 1.0)


def render_shape(proto, cx, cy, size, rot, style: int):
    """Alpha map [0,1] for one shape; style 0 outline, 1 filled, 2 textured."""
    sdf = shape_sdf(proto, cx, cy, size, rot)
    if style == 0:
        return _coverage(np.abs(sdf) - 1.2 * _PX)
    filled = _coverage(sdf)
    if style == 1:
        return filled
    return filled * (0.6 + 0.4 * _CHECKER)


def segment_alpha(x0, y0, x1, y1, width):
    """Capsule (thick segment) alpha map, used for arm / linkage rendering."""
    dx, dy = x1 - x0, y1 - y0
    length_sq = dx * dx + dy * dy
    if length_sq < 1e-12:
        sdf = np.hypot(_XX - x0, _YY - y0) - width
    else:
        t = np.clip(((_XX - x0) * dx + (_YY - y0) * dy) / length_sq, 0.0, 1.0)
        sdf = np.hypot(_XX - (x0 + t * dx), _YY - (y0 + t * dy)) - width
    return _coverage(sdf)


def _compose(layers, noise_sigma, rng, invert=False):
    """Stack (alpha, per-channel tint) layers over a noisy background."""
    base = 0.82 if invert else 0.12
    img = np.full((3, GRID, GRID), base)
    for alpha, tint in layers:
        value = np.asarray(tint, dtype=np.float64)
        if invert:
            value = 1.0 - value
        img = img * (1.0 - alpha[None, :, :]) + value[:, None, None] * alpha[None, :, :]
    img = img + rng.normal(0.0, noise_sigma, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _marker_params(rng, overlap, size_lo=0.13, size_hi=0.19):
    """Shape class, prototype bank, and style under the overlap policy."""
    c = int(rng.integers(K_CLASSES))
    shared = bool(rng.random() < overlap)
    proto = c if shared else 5 + c
    style = int(rng.integers(3)) if shared else 2
    size = float(rng.uniform(size_lo, size_hi))
    rot = float(rng.uniform(0.0, 2.0 * np.pi))
    return c, proto, style, size, rot, shared


# --- perception ---------------------------------------------------------------

_PERCEPTION_NOISE = {1: 0.04, 2: 0.07, 3: 0.11}


def gen_perception(task_id, n, rng):
    style = task_id - 1
    noise = _PERCEPTION_NOISE[task_id]
    images = np.empty((n, 3, GRID, GRID), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        c = int(rng.integers(K_CLASSES))
        cx, cy = rng.uniform(0.3, 0.7, size=2)
        size = float(rng.uniform(0.18, 0.3))
        rot = float(rng.uniform(0.0, 2.0 * np.pi))
        alpha = render_shape(c, cx, cy, size, rot, style)
        tint = 0.55 + 0.45 * rng.random(3)
        images[i] = _compose([(alpha, tint)], noise, rng)
        labels[i] = c
    return images, None, labels


# --- motor ---------------------------------------------------------------------

_ARM_ANCHOR = (0.3, 0.72)
_ARM_L1, _ARM_L2 = 0.26, 0.2
_FINGER_ANCHOR = (0.78, 0.82)
_FINGER_L1, _FINGER_L2 = 0.24, 0.18
_MAX_TILT = 0.45


def _wrap_angle(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def two_link_points(anchor, l1, l2, theta1, theta2):
    ax, ay = anchor
    jx = ax + l1 * np.cos(theta1)
    jy = ay - l1 * np.sin(theta1)
    ex = jx + l2 * np.cos(theta1 + theta2)
    ey = jy - l2 * np.sin(theta1 + theta2)
    return (ax, ay), (jx, jy), (ex, ey)


def two_link_ik(gx, gy, anchor, l1, l2):
    """Closed-form elbow-up joint angles reaching (gx, gy) from `anchor`."""
    dx = gx - anchor[0]
    dy = anchor[1] - gy
    d2 = np.clip(dx * dx + dy * dy, (abs(l1 - l2) + 1e-3) ** 2, (l1 + l2 - 1e-3) ** 2)
    cos_q2 = np.clip((d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2), -1.0, 1.0)
    q2 = np.arccos(cos_q2)
    q1 = np.arctan2(dy, dx) - np.arctan2(l2 * np.sin(q2), l1 + l2 * np.cos(q2))
    return q1, q2


def _draw_two_link(layers, anchor, l1, l2, theta1, theta2, width, tints):
    a, j, e = two_link_points(anchor, l1, l2, theta1, theta2)
    layers.append((segment_alpha(a[0], a[1], j[0], j[1], width), tints[0]))
    layers.append((segment_alpha(j[0], j[1], e[0], e[1], width), tints[1]))
    layers.append((render_shape(0, e[0], e[1], width * 1.8, 0.0, 1), tints[2]))
    return e


def gen_motor(task_id, n, rng, overlap):
    noise = {4: 0.05, 5: 0.06, 6: 0.07}[task_id]
    d_out = 2 if task_id == 4 else 3
    images = np.empty((n, 3, GRID, GRID), dtype=np.float32)
    targets = np.empty((n, d_out), dtype=np.float32)
    arm_tints = ((0.85, 0.35, 0.3), (0.3, 0.8, 0.4), (0.9, 0.9, 0.35))
    for i in range(n):
        c, proto, style, msize, mrot, shared = _marker_params(rng, overlap)
        layers = []
        if task_id == 4:
            theta1 = float(rng.uniform(-0.2, 1.7))
            theta2 = float(rng.uniform(-2.2, 2.2))
            while True:
                rho = float(rng.uniform(0.14, 0.42))
                phi = float(rng.uniform(-0.2, 1.7))
                gx = _ARM_ANCHOR[0] + rho * np.cos(phi)
                gy = _ARM_ANCHOR[1] - rho * np.sin(phi)
                if 0.08 <= gx <= 0.92 and 0.08 <= gy <= 0.92:
                    break
            _draw_two_link(layers, _ARM_ANCHOR, _ARM_L1, _ARM_L2, theta1, theta2,
                           0.035, arm_tints)
            layers.append((render_shape(proto, gx, gy, msize, mrot, style),
                           (0.4, 0.55, 0.95)))
            q1, q2 = two_link_ik(gx, gy, _ARM_ANCHOR, _ARM_L1, _ARM_L2)
            targets[i] = (_wrap_angle(q1 - theta1) / np.pi,
                          _wrap_angle(q2 - theta2) / np.pi)
        elif task_id == 5:
            tilts = rng.uniform(-_MAX_TILT, _MAX_TILT, size=3)
            gain = 0.6 + 0.1 * c
            x, y = 0.5, 0.92
            angle = np.pi / 2.0
            for s, tilt in enumerate(tilts):
                angle = np.pi / 2.0 + tilt if s == 0 else angle + tilt
                nx = x + 0.22 * np.cos(angle)
                ny = y - 0.22 * np.sin(angle)
                layers.append((segment_alpha(x, y, nx, ny, 0.035), arm_tints[s % 3]))
                x, y = nx, ny
            layers.append((render_shape(proto, 0.8, 0.2, msize, mrot, style),
                           (0.4, 0.55, 0.95)))
            targets[i] = -tilts.astype(np.float64) * gain / _MAX_TILT
        else:
            theta1 = float(rng.uniform(1.2, 2.6))
            theta2 = float(rng.uniform(-1.4, 1.4))
            psi = float(rng.uniform(-0.6, 0.6))
            lever_c = (0.3, 0.3)
            tip = (lever_c[0] + 0.14 * np.cos(psi), lever_c[1] - 0.14 * np.sin(psi))
            tail = (lever_c[0] - 0.14 * np.cos(psi), lever_c[1] + 0.14 * np.sin(psi))
            layers.append((segment_alpha(tail[0], tail[1], tip[0], tip[1], 0.03),
                           (0.9, 0.6, 0.25)))
            _draw_two_link(layers, _FINGER_ANCHOR, _FINGER_L1, _FINGER_L2,
                           theta1, theta2, 0.03, arm_tints)
            layers.append((render_shape(proto, 0.72, 0.22, msize, mrot, style),
                           (0.4, 0.55, 0.95)))
            q1, q2 = two_link_ik(tip[0], tip[1], _FINGER_ANCHOR, _FINGER_L1, _FINGER_L2)
            press = (0.3 + 0.14 * c) * (psi / 0.6)
            targets[i] = (_wrap_angle(q1 - theta1) / np.pi,
                          _wrap_angle(q2 - theta2) / np.pi,
                          press)
        images[i] = _compose(layers, noise, rng, invert=not shared)
    return images, None, targets


# --- interaction ----------------------------------------------------------------

_HOVER_Z = 0.5


def interaction_commands(state, gx, gy, c):
    """Satisfying command sequence: three approach steps, then the press step.

    The press depth 0.2 + 0.12 c always exceeds the default tolerance, so the
    all-zero prediction never satisfies a goal.
    """
    ex, ey, ez = float(state[0]), float(state[1]), float(state[2])
    approach = np.array([(gx - ex) / 3.0, (gy - ey) / 3.0, (_HOVER_Z - ez) / 3.0])
    seq = np.empty((SEQ_LEN, 3), dtype=np.float32)
    seq[0] = seq[1] = seq[2] = approach
    seq[3] = (0.0, 0.0, 0.2 + 0.12 * c)
    return seq


def gen_interaction(task_id, n, rng, overlap):
    noise = {7: 0.05, 8: 0.07, 9: 0.09}[task_id]
    n_distractors = task_id - 6
    images = np.empty((n, 3, GRID, GRID), dtype=np.float32)
    states = np.empty((n, STATE_DIM), dtype=np.float32)
    targets = np.empty((n, SEQ_LEN, 3), dtype=np.float32)
    for i in range(n):
        c, proto, style, msize, mrot, shared = _marker_params(rng, overlap, 0.16, 0.21)
        state = rng.uniform(0.1, 0.9, size=STATE_DIM)
        gx, gy = rng.uniform(0.25, 0.75, size=2)
        layers = [(render_shape(proto, gx, gy, msize, mrot, style), (0.95, 0.85, 0.3))]
        for _ in range(n_distractors):
            dc = int(rng.integers(K_CLASSES))
            dproto = dc if shared else 5 + dc
            for _attempt in range(8):
                dx, dy = rng.uniform(0.12, 0.88, size=2)
                if (dx - gx) ** 2 + (dy - gy) ** 2 > 0.28 ** 2:
                    break
            layers.append((render_shape(dproto, dx, dy, float(rng.uniform(0.07, 0.1)),
                                        float(rng.uniform(0.0, 2.0 * np.pi)), style),
                           (0.35, 0.35, 0.4)))
        if shared:
            ex, ey = state[0], state[1]
            layers.append((segment_alpha(ex - 0.06, ey, ex + 0.06, ey, 0.018),
                           (0.3, 0.9, 0.9)))
            layers.append((segment_alpha(ex, ey - 0.06, ex, ey + 0.06, 0.018),
                           (0.3, 0.9, 0.9)))
        else:
            layers.append((render_shape(0, state[0], state[1], 0.045, 0.0, 1),
                           (0.3, 0.9, 0.9)))
        images[i] = _compose(layers, noise, rng, invert=not shared)
        states[i] = state
        targets[i] = interaction_commands(state, gx, gy, c)
    return images, states, targets


# --- suite assembly ---------------------------------------------------------------

def task_spec(task_id, overlap, tau_cmd):
    family = FAMILY_OF_TASK[task_id]
    if family == "perception":
        return TaskSpec(task_id, family, TASK_NAMES[task_id], 0, "class",
                        (K_CLASSES,), "accuracy", "cross-entropy",
                        100.0 / K_CLASSES, overlap, tau_cmd)
    if family == "motor":
        d_out = 2 if task_id == 4 else 3
        return TaskSpec(task_id, family, TASK_NAMES[task_id], 0, "vector",
                        (d_out,), "neg-mse", "mean-squared-error", 0.0,
                        overlap, tau_cmd)
    return TaskSpec(task_id, family, TASK_NAMES[task_id], STATE_DIM, "sequence",
                    (SEQ_LEN, 3), "success-rate", "mean-squared-error", 0.0,
                    overlap, tau_cmd)


def _task_rng(seed, task_id, split_idx):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, task_id, split_idx])))


def generate_task(task_id, seed, train_size, test_size, overlap, tau_cmd):
    spec = task_spec(task_id, overlap, tau_cmd)
    splits = []
    for split_idx, n in ((0, train_size), (1, test_size)):
        rng = _task_rng(seed, task_id, split_idx)
        if spec.family == "perception":
            images, states, targets = gen_perception(task_id, n, rng)
        elif spec.family == "motor":
            images, states, targets = gen_motor(task_id, n, rng, overlap)
        else:
            images, states, targets = gen_interaction(task_id, n, rng, overlap)
        splits.append(Split(images, states, targets))
    return TaskData(spec, splits[0], splits[1])


def generate_suite(seed, train_size=2000, test_size=500, overlap=1.0, tau_cmd=0.1,
                   n_tasks=9):
    """The nine-task PMI-mini suite; bitwise deterministic in its arguments."""
    if train_size < 10 or test_size < 10:
        raise ConfigError("suite sizes must be at least 10 samples per split")
    return [generate_task(t, seed, train_size, test_size, overlap, tau_cmd)
            for t in range(1, n_tasks + 1)]


# --- metrics -----------------------------------------------------------------------

def success_rate(pred_sequences, goal_sequences, tau_cmd):
    """Fraction of episodes with every step within per-dimension tolerance."""
    pred = np.asarray(pred_sequences, dtype=np.float64)
    goal = np.asarray(goal_sequences, dtype=np.float64)
    if pred.shape != goal.shape:
        raise ConfigError(f"sequence shapes differ: {pred.shape} vs {goal.shape}")
    ok = np.all(np.abs(pred - goal) <= tau_cmd, axis=tuple(range(1, pred.ndim)))
    return float(np.mean(ok))


def metric_value(spec: TaskSpec, outputs, targets):
    """Task metric on a 0-100 scale (chance level given by spec.chance)."""
    outputs = np.asarray(outputs)
    targets = np.asarray(targets)
    if spec.metric == "accuracy":
        return 100.0 * float(np.mean(outputs.argmax(axis=1) == targets))
    if spec.metric == "neg-mse":
        mse = float(np.mean((outputs - targets) ** 2))
        var = float(np.mean((targets - targets.mean(axis=0)) ** 2))
        return 100.0 * max(0.0, 1.0 - mse / max(var, 1e-12))
    if spec.metric == "success-rate":
        return 100.0 * success_rate(outputs, targets, spec.tau_cmd)
    raise ConfigError(f"unknown metric '{spec.metric}'")


# --- dataset container IO ------------------------------------------------------------

def _split_header(split: Split):
    return {
        "count": int(split.images.shape[0]),
        "input_shape": list(split.images.shape[1:]),
        "state_dim": 0 if split.states is None else int(split.states.shape[1]),
        "target_shape": list(split.targets.shape[1:]),
        "target_dtype": str(split.targets.dtype),
    }


def write_dataset(path, data: TaskData):
    header = {
        "spec": data.spec.to_dict(),
        "splits": {"train": _split_header(data.train), "test": _split_header(data.test)},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += MAGIC
    blob.append(VERSION)
    blob += len(header_bytes).to_bytes(4, "little")
    blob += header_bytes
    for split in (data.train, data.test):
        blob += split.images.astype("<f4").tobytes()
        if split.states is not None:
            blob += split.states.astype("<f4").tobytes()
        dtype = "<i8" if split.targets.dtype.kind == "i" else "<f4"
        blob += split.targets.astype(dtype).tobytes()
    blob += (zlib.crc32(bytes(blob)) & 0xFFFFFFFF).to_bytes(4, "little")
    Path(path).write_bytes(bytes(blob))
    return Path(path)


def read_dataset(path) -> TaskData:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 1 or raw[:len(MAGIC)] != MAGIC:
        raise DatasetFormatError(
            f"{path}: bad magic {raw[:len(MAGIC)]!r}, expected {MAGIC!r}")
    if raw[len(MAGIC)] != VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {raw[len(MAGIC)]}")
    if len(raw) < len(MAGIC) + 9:
        raise CorruptDatasetError(f"{path}: truncated header", offset=len(raw))
    stored_crc = int.from_bytes(raw[-4:], "little")
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CorruptDatasetError(f"{path}: checksum mismatch", offset=len(raw) - 4)
    pos = len(MAGIC) + 1
    header_len = int.from_bytes(raw[pos:pos + 4], "little")
    pos += 4
    header = json.loads(raw[pos:pos + header_len].decode("utf-8"))
    pos += header_len
    spec = TaskSpec.from_dict(header["spec"])

    def take(nbytes, what):
        nonlocal pos
        if pos + nbytes > len(raw) - 4:
            raise CorruptDatasetError(f"{path}: truncated in {what}", offset=pos)
        out = raw[pos:pos + nbytes]
        pos += nbytes
        return out

    splits = {}
    for name in ("train", "test"):
        h = header["splits"][name]
        count = h["count"]
        ishape = tuple(h["input_shape"])
        images = np.frombuffer(take(4 * count * int(np.prod(ishape)), f"{name} images"),
                               dtype="<f4").reshape(count, *ishape).copy()
        states = None
        if h["state_dim"]:
            states = np.frombuffer(take(4 * count * h["state_dim"], f"{name} states"),
                                   dtype="<f4").reshape(count, h["state_dim"]).copy()
        tshape = tuple(h["target_shape"])
        tdtype = np.dtype(h["target_dtype"])
        itemsize = 8 if tdtype.kind == "i" else 4
        wire = "<i8" if tdtype.kind == "i" else "<f4"
        targets = np.frombuffer(take(itemsize * count * int(np.prod(tshape, dtype=int)),
                                     f"{name} targets"), dtype=wire)
        targets = targets.reshape(count, *tshape).astype(tdtype).copy()
        splits[name] = Split(images, states, targets)
    return TaskData(spec, splits["train"], splits["test"])


def dataset_path(out_dir, task_id) -> Path:
    return Path(out_dir) / f"task_{task_id:02d}.tdmd"


def write_suite(out_dir, suite):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for data in suite:
        write_dataset(dataset_path(out, data.spec.task_id), data)
    write_manifest(out / "manifest.csv", suite)
    return out


def read_suite(out_dir, n_tasks=9):
    return [read_dataset(dataset_path(out_dir, t)) for t in range(1, n_tasks + 1)]


def write_manifest(path, suite):
    lines = ["task_id,family,name,input_shape,state_dim,output_kind,out_dim,"
             "metric,chance,baseline_floor"]
    for data in suite:
        s = data.spec
        lines.append(
            f"{s.task_id},{s.family},{s.name},{'x'.join(map(str, s.input_shape))},"
            f"{s.state_dim},{s.output_kind},{'x'.join(map(str, s.out_dim))},"
            f"{s.metric},{s.chance},{s.chance + BASELINE_FLOORS[s.task_id]}")
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)
