"""Learned absolute pose regression from descriptor pairs.

The regressor fuses a camera descriptor with a retrieved map-tile
descriptor through a learned scalar gate, pushes the fused vector
through three layers whose edges carry learnable spline activations
(RSWAF basis: 1 - tanh^2 bumps on a uniform knot grid), and reads out a
6D rotation plus a tile-local translation from a linear head. Gradients
are hand-written reverse mode; training is Adam with decoupled weight
decay. A parameter-matched MLP baseline shares the gate, head, loss and
training protocol.

All gradients are validated against central finite differences in the
test suite, including the Gram-Schmidt chain inside the pose loss.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from anchorloc.liegroup import (
    GEODESIC_CLAMP_EPS,
    DegenerateRotationError,
)
from anchorloc.rng import stream

__all__ = [
    "GateParams",
    "KanLayer",
    "KanRegressor",
    "MlpRegressor",
    "RswafEdge",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "edge_eval",
    "gated_fuse",
    "load_checkpoint",
    "pose_loss",
    "rot6d_forward",
    "rswaf_basis",
    "save_checkpoint",
    "train",
]

GRID_SIZE = 5
KNOTS = np.linspace(-2.0, 2.0, GRID_SIZE)
BANDWIDTH = float(KNOTS[1] - KNOTS[0])
LAYER_WIDTHS = (96, 48, 24)
HEAD_OUT = 9
GATE_DIM = 32


class TrainingDivergedError(RuntimeError):
    """Loss or activations became non-finite; carries the last good state."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _silu(x):
    return x * _sigmoid(x)


def _silu_grad(x):
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


@dataclass
class RswafEdge:
    """One edge activation: knots, bandwidth, spline coefficients, weights."""

    knots: np.ndarray
    h: float
    c: np.ndarray
    w_b: float
    w_s: float

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        if self.h <= 0:
            raise ValueError("bandwidth must be positive")
        if not (np.diff(self.knots) > 0).all():
            raise ValueError("knots must be strictly increasing")


def rswaf_basis(x: float, edge: RswafEdge) -> tuple[np.ndarray, np.ndarray]:
    """Basis values 1 - tanh^2((x - knot)/h) and their x-derivatives."""
    t = np.tanh((x - edge.knots) / edge.h)
    values = 1.0 - t * t
    derivs = -2.0 * t * values / edge.h
    return values, derivs


def edge_eval(x: float, edge: RswafEdge) -> float:
    """w_b * silu(x) + w_s * sum_i c_i B_i(x)."""
    values, _ = rswaf_basis(x, edge)
    return float(edge.w_b * _silu(np.array([x]))[0] + edge.w_s * (edge.c @ values))


class GateParams:
    """Learned scalar gate fusing camera and map descriptors."""

    def __init__(self, seed: int, dim: int, proj_dim: int = GATE_DIM):
        if proj_dim > dim:
            raise ValueError("gate projection dim must not exceed descriptor dim")
        rng = stream(seed, "net-init-gate")
        self.dim = dim
        self.proj_dim = proj_dim

        def ortho(rows, cols):
            a = rng.normal(size=(rows, cols))
            if rows <= cols:
                q, _ = np.linalg.qr(a.T)
                return q.T
            q, _ = np.linalg.qr(a)
            return q

        scale = 1.0 / math.sqrt(dim)
        self.w_q = np.ascontiguousarray(ortho(proj_dim, dim) * scale)
        self.w_k = np.ascontiguousarray(ortho(proj_dim, dim) * scale)
        self.w_v = np.ascontiguousarray(ortho(dim, dim) * scale)
        self.w_c = np.ascontiguousarray(ortho(dim, dim) * scale)

    def params(self):
        return {
            "gate.w_q": self.w_q,
            "gate.w_k": self.w_k,
            "gate.w_v": self.w_v,
            "gate.w_c": self.w_c,
        }


def gated_fuse(f_c: np.ndarray, f_m: np.ndarray, gate: GateParams):
    """Convex mix of projected descriptors under a scalar sigmoid gate.

    Returns (fused (B, D), tape) where the tape holds the intermediates
    needed by `gate_backward`.
    """
    f_c = np.atleast_2d(f_c)
    f_m = np.atleast_2d(f_m)
    q = f_c @ gate.w_q.T
    k = f_m @ gate.w_k.T
    logit = (q * k).sum(axis=1) / math.sqrt(gate.proj_dim)
    alpha = _sigmoid(logit)
    vm = f_m @ gate.w_v.T
    cc = f_c @ gate.w_c.T
    fused = alpha[:, None] * vm + (1.0 - alpha)[:, None] * cc
    tape = {"f_c": f_c, "f_m": f_m, "q": q, "k": k, "alpha": alpha, "vm": vm, "cc": cc}
    return fused, tape


def gate_backward(grad_fused: np.ndarray, gate: GateParams, tape: dict) -> dict:
    alpha = tape["alpha"]
    d_alpha = (grad_fused * (tape["vm"] - tape["cc"])).sum(axis=1)
    d_logit = d_alpha * alpha * (1.0 - alpha)
    scale = 1.0 / math.sqrt(gate.proj_dim)
    d_q = d_logit[:, None] * tape["k"] * scale
    d_k = d_logit[:, None] * tape["q"] * scale
    g_vm = grad_fused * alpha[:, None]
    g_cc = grad_fused * (1.0 - alpha)[:, None]
    return {
        "gate.w_q": d_q.T @ tape["f_c"],
        "gate.w_k": d_k.T @ tape["f_m"],
        "gate.w_v": g_vm.T @ tape["f_m"],
        "gate.w_c": g_cc.T @ tape["f_c"],
    }


class KanLayer:
    """Fully connected layer of spline-edge activations.

    Storage is array-of-edges: c (out, in, G) spline coefficients, w_b
    and w_s (out, in). Output j sums the edge activations over inputs;
    there is no nodal bias beyond the edges' base term. Inputs pass
    through a fixed affine standardization whose statistics are frozen
    from the first training batch, keeping activations near the knot
    span [-2, 2].
    """

    def __init__(self, seed: int, in_dim: int, out_dim: int, tag: str):
        rng = stream(seed, f"net-init-{tag}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.c = rng.normal(scale=0.1, size=(out_dim, in_dim, GRID_SIZE))
        self.w_b = np.ones((out_dim, in_dim))
        self.w_s = np.ones((out_dim, in_dim))
        self.mu = np.zeros(in_dim)
        self.sigma = np.ones(in_dim)
        self.tag = tag

    def edge(self, j: int, i: int) -> RswafEdge:
        """Edge view for inspection and the scalar edge-level API."""
        return RswafEdge(KNOTS, BANDWIDTH, self.c[j, i], float(self.w_b[j, i]), float(self.w_s[j, i]))

    def freeze_standardization(self, batch: np.ndarray) -> None:
        self.mu = batch.mean(axis=0)
        self.sigma = batch.std(axis=0) + 1e-6

    def forward(self, x: np.ndarray):
        xs = (x - self.mu) / self.sigma
        t = np.tanh((xs[:, :, None] - KNOTS[None, None, :]) / BANDWIDTH)
        basis = 1.0 - t * t
        silu = _silu(xs)
        out = silu @ self.w_b.T + np.einsum("big,oig->bo", basis, self.w_s[:, :, None] * self.c)
        tape = {"xs": xs, "t": t, "basis": basis, "silu": silu}
        return out, tape

    def backward(self, grad_out: np.ndarray, tape: dict):
        xs, t, basis = tape["xs"], tape["t"], tape["basis"]
        grads = {}
        grads[f"{self.tag}.w_b"] = grad_out.T @ tape["silu"]
        per_edge_spline = np.einsum("big,oig->boi", basis, self.c)
        grads[f"{self.tag}.w_s"] = np.einsum("bo,boi->oi", grad_out, per_edge_spline)
        grads[f"{self.tag}.c"] = self.w_s[:, :, None] * np.einsum("bo,big->oig", grad_out, basis)
        dbasis = -2.0 * t * basis / BANDWIDTH
        dxs = (grad_out @ self.w_b) * _silu_grad(xs)
        dxs += np.einsum("bo,oig,big->bi", grad_out, self.w_s[:, :, None] * self.c, dbasis)
        grad_x = dxs / self.sigma
        return grad_x, grads

    def params(self):
        return {f"{self.tag}.c": self.c, f"{self.tag}.w_b": self.w_b, f"{self.tag}.w_s": self.w_s}


class _HeadMixin:
    """Linear 9-output head with frozen translation calibration."""

    def _init_head(self, seed: int, in_dim: int):
        rng = stream(seed, "net-init-head")
        self.head_w = rng.normal(scale=1.0 / math.sqrt(in_dim), size=(HEAD_OUT, in_dim))
        self.head_b = np.zeros(HEAD_OUT)
        # Affine output calibration for the translation block, frozen
        # from the first training batch targets; keeps raw head outputs
        # near unit scale while the loss stays in raw meters.
        self.t_mean = np.zeros(3)
        self.t_std = np.ones(3)

    def freeze_target_calibration(self, targets_t: np.ndarray) -> None:
        self.t_mean = targets_t.mean(axis=0)
        self.t_std = targets_t.std(axis=0) + 1e-6

    def _head_forward(self, x: np.ndarray):
        y = x @ self.head_w.T + self.head_b
        r6 = y[:, :6]
        t = self.t_mean + self.t_std * y[:, 6:]
        return r6, t

    def _head_backward(self, grad_r6, grad_t, x):
        dy = np.concatenate([grad_r6, grad_t * self.t_std], axis=1)
        grads = {"head.w": dy.T @ x, "head.b": dy.sum(axis=0)}
        return dy @ self.head_w, grads


class KanRegressor(_HeadMixin):
    """Gate + three spline-edge layers + linear 9-output pose head."""

    kind = "kan"

    def __init__(self, seed: int, dim: int = 64, widths=LAYER_WIDTHS, gate_dim: int = GATE_DIM):
        self.seed = seed
        self.dim = dim
        self.widths = tuple(widths)
        self.gate = GateParams(seed, dim, gate_dim)
        self.layers = []
        prev = dim
        for i, w in enumerate(self.widths):
            self.layers.append(KanLayer(seed, prev, w, f"layers.{i}"))
            prev = w
        self._init_head(seed, prev)
        self.frozen = False

    def freeze_normalizers(self, f_c, f_m, targets_t) -> None:
        """Freeze per-layer standardization and target calibration."""
        x, _ = gated_fuse(f_c, f_m, self.gate)
        for layer in self.layers:
            layer.freeze_standardization(x)
            x, _ = layer.forward(x)
        self.freeze_target_calibration(targets_t)
        self.frozen = True

    def forward(self, f_c: np.ndarray, f_m: np.ndarray):
        """Returns (r6 (B, 6), t (B, 3), tape)."""
        fused, gate_tape = gated_fuse(f_c, f_m, self.gate)
        x = fused
        layer_tapes = []
        for layer in self.layers:
            x, tape = layer.forward(x)
            layer_tapes.append(tape)
        if not np.isfinite(x).all():
            raise TrainingDivergedError("non-finite activations in forward pass")
        r6, t = self._head_forward(x)
        tape = {"gate": gate_tape, "layers": layer_tapes, "head_in": x}
        return r6, t, tape

    def backward(self, grad_r6, grad_t, tape) -> dict:
        grad_x, grads = self._head_backward(grad_r6, grad_t, tape["head_in"])
        for layer, ltape in zip(reversed(self.layers), reversed(tape["layers"])):
            grad_x, layer_grads = layer.backward(grad_x, ltape)
            grads.update(layer_grads)
        grads.update(gate_backward(grad_x, self.gate, tape["gate"]))
        return grads

    def params(self) -> dict:
        out = dict(self.gate.params())
        for layer in self.layers:
            out.update(layer.params())
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out

    def set_param(self, name: str, value: np.ndarray) -> None:
        target = self.params()[name]
        target[...] = value

    def n_params(self) -> int:
        return sum(p.size for p in self.params().values())


class MlpRegressor(_HeadMixin):
    """Parameter-matched baseline: fixed SiLU nonlinearities on nodes.

    Shares the gate, head, loss and training protocol with the spline
    regressor; only the three middle layers differ. Hidden widths are
    chosen so the total parameter count matches the spline regressor
    within 10%.
    """

    kind = "mlp"

    def __init__(self, seed: int, dim: int = 64, widths=(256, 256, 24), gate_dim: int = GATE_DIM):
        self.seed = seed
        self.dim = dim
        self.widths = tuple(widths)
        self.gate = GateParams(seed, dim, gate_dim)
        rng = stream(seed, "net-init-mlp")
        self.weights = []
        self.biases = []
        prev = dim
        for w in self.widths:
            self.weights.append(rng.normal(scale=math.sqrt(2.0 / prev), size=(w, prev)))
            self.biases.append(np.zeros(w))
            prev = w
        self._init_head(seed, prev)
        self.mu = np.zeros(dim)
        self.sigma = np.ones(dim)
        self.frozen = False

    def freeze_normalizers(self, f_c, f_m, targets_t) -> None:
        x, _ = gated_fuse(f_c, f_m, self.gate)
        self.mu = x.mean(axis=0)
        self.sigma = x.std(axis=0) + 1e-6
        self.freeze_target_calibration(targets_t)
        self.frozen = True

    def forward(self, f_c, f_m):
        fused, gate_tape = gated_fuse(f_c, f_m, self.gate)
        x = (fused - self.mu) / self.sigma
        pre = []
        post = [x]
        for w, b in zip(self.weights, self.biases):
            z = x @ w.T + b
            pre.append(z)
            x = _silu(z)
            post.append(x)
        if not np.isfinite(x).all():
            raise TrainingDivergedError("non-finite activations in forward pass")
        r6, t = self._head_forward(x)
        return r6, t, {"gate": gate_tape, "pre": pre, "post": post, "head_in": x}

    def backward(self, grad_r6, grad_t, tape):
        grad_x, grads = self._head_backward(grad_r6, grad_t, tape["head_in"])
        for i in reversed(range(len(self.weights))):
            dz = grad_x * _silu_grad(tape["pre"][i])
            grads[f"mlp.{i}.w"] = dz.T @ tape["post"][i]
            grads[f"mlp.{i}.b"] = dz.sum(axis=0)
            grad_x = dz @ self.weights[i]
        grads.update(gate_backward(grad_x / self.sigma, self.gate, tape["gate"]))
        return grads

    def params(self):
        out = dict(self.gate.params())
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"mlp.{i}.w"] = w
            out[f"mlp.{i}.b"] = b
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out

    def set_param(self, name, value):
        self.params()[name][...] = value

    def n_params(self):
        return sum(p.size for p in self.params().values())


def rot6d_forward(r6: np.ndarray):
    """Batched Gram-Schmidt: (B, 6) -> rotation matrices (B, 3, 3) + tape."""
    r6 = np.atleast_2d(r6)
    a1, a2 = r6[:, :3], r6[:, 3:]
    n1 = np.linalg.norm(a1, axis=1)
    if (n1 < 1e-12).any():
        raise DegenerateRotationError("first direction vector is zero")
    b1 = a1 / n1[:, None]
    s = (a2 * b1).sum(axis=1)
    u2 = a2 - s[:, None] * b1
    n2 = np.linalg.norm(u2, axis=1)
    if (n2 < 1e-12).any():
        raise DegenerateRotationError("direction vectors are parallel")
    b2 = u2 / n2[:, None]
    b3 = np.cross(b1, b2)
    rot = np.stack([b1, b2, b3], axis=2)
    tape = {"a1": a1, "a2": a2, "n1": n1, "b1": b1, "s": s, "u2": u2, "n2": n2, "b2": b2}
    return rot, tape


def _rot6d_backward(grad_rot: np.ndarray, tape: dict) -> np.ndarray:
    b1, b2 = tape["b1"], tape["b2"]
    g1 = grad_rot[:, :, 0]
    g2 = grad_rot[:, :, 1]
    g3 = grad_rot[:, :, 2]
    # b3 = b1 x b2
    d_b1 = g1 + np.cross(b2, g3)
    d_b2 = g2 + np.cross(g3, b1)
    # b2 = u2 / |u2|
    n2 = tape["n2"][:, None]
    d_u2 = (d_b2 - b2 * (d_b2 * b2).sum(axis=1, keepdims=True)) / n2
    # u2 = a2 - s b1, s = a2 . b1
    d_a2 = d_u2.copy()
    d_s = -(b1 * d_u2).sum(axis=1)
    d_b1 += -tape["s"][:, None] * d_u2
    d_a2 += d_s[:, None] * b1
    d_b1 += d_s[:, None] * tape["a2"]
    # b1 = a1 / |a1|
    n1 = tape["n1"][:, None]
    d_a1 = (d_b1 - b1 * (d_b1 * b1).sum(axis=1, keepdims=True)) / n1
    return np.concatenate([d_a1, d_a2], axis=1)


def pose_loss(r6: np.ndarray, t: np.ndarray, gt_rot: np.ndarray, gt_t: np.ndarray, lam: float):
    """Mean pose loss over a batch and its gradients w.r.t. (r6, t).

    Rotation term: geodesic angle between the orthonormalized prediction
    and the target, with the arccos argument clamped to
    [-1 + eps, 1 - eps] (eps = 1e-7) so loss and gradient stay finite at
    exact agreement. Translation term: lam * squared L2 error in meters.
    """
    if lam <= 0:
        raise ValueError("translation weight must be positive")
    r6 = np.atleast_2d(r6)
    t = np.atleast_2d(t)
    gt_rot = gt_rot.reshape(-1, 3, 3)
    gt_t = np.atleast_2d(gt_t)
    n = r6.shape[0]

    rot, tape = rot6d_forward(r6)
    tr = np.einsum("bij,bij->b", rot, gt_rot)
    cosang = (tr - 1.0) / 2.0
    clipped = np.clip(cosang, -1.0 + GEODESIC_CLAMP_EPS, 1.0 - GEODESIC_CLAMP_EPS)
    theta = np.arccos(clipped)

    dt = t - gt_t
    loss = float(np.mean(theta + lam * (dt ** 2).sum(axis=1)))
    if not math.isfinite(loss):
        raise TrainingDivergedError("pose loss is non-finite")

    inside = (cosang > -1.0 + GEODESIC_CLAMP_EPS) & (cosang < 1.0 - GEODESIC_CLAMP_EPS)
    d_theta_d_cos = np.where(inside, -1.0 / np.sqrt(1.0 - clipped ** 2), 0.0)
    grad_rot = (d_theta_d_cos / (2.0 * n))[:, None, None] * gt_rot
    grad_r6 = _rot6d_backward(grad_rot, tape)
    grad_t = 2.0 * lam * dt / n
    return loss, grad_r6, grad_t


@dataclass
class TrainConfig:
    """Training protocol; defaults follow the evaluation setup."""

    lr: float = 1e-3
    lr_decay: float = 0.1
    lr_step_epochs: int = 20
    epochs: int = 60
    batch_size: int = 32
    weight_decay: float = 1e-4
    lam: float = 10.0
    mask_level: str = "medium"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "lr_decay": self.lr_decay,
            "lr_step_epochs": self.lr_step_epochs,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "weight_decay": self.weight_decay,
            "lam": self.lam,
            "mask_level": self.mask_level,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "seed": self.seed,
        }


class AdamW:
    """Adam with decoupled weight decay over a named parameter dict."""

    def __init__(self, params: dict, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float):
        self.t += 1
        b1, b2 = self.cfg.adam_beta1, self.cfg.adam_beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in params.items():
            g = grads[name]
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            mhat = self.m[name] / bc1
            vhat = self.v[name] / bc2
            p -= lr * (mhat / (np.sqrt(vhat) + self.cfg.adam_eps) + self.cfg.weight_decay * p)


@dataclass
class TrainResult:
    regressor: object
    curve: list = field(default_factory=list)
    final_val: dict = field(default_factory=dict)


def evaluate_regressor(reg, f_c, f_m, gt_rot, gt_t, lam: float) -> dict:
    """Validation loss plus translation/rotation RMSEs (meters, degrees)."""
    r6, t, _ = reg.forward(f_c, f_m)
    loss, _, _ = pose_loss(r6, t, gt_rot, gt_t, lam)
    rot, _ = rot6d_forward(r6)
    tr = np.einsum("bij,bij->b", rot, gt_rot)
    ang = np.degrees(np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0)))
    trans_rmse = float(np.sqrt(((t - gt_t) ** 2).sum(axis=1).mean()))
    rot_rmse = float(np.sqrt((ang ** 2).mean()))
    return {"loss": loss, "trans_rmse": trans_rmse, "rot_rmse": rot_rmse}


def train(reg, data, cfg: TrainConfig) -> TrainResult:
    """Run the full training protocol on a TrainingData bundle.

    Per-epoch: masks are re-drawn on the training camera patches, camera
    descriptors re-extracted, the set reshuffled, and AdamW applied per
    batch with the stepped learning rate. Divergence (non-finite loss)
    aborts with the last completed epoch's parameters attached.
    """
    from anchorloc.dataset import TrainingData  # cycle-free at runtime

    assert isinstance(data, TrainingData)
    rng = stream(cfg.seed, "training")
    mask_rng = stream(cfg.seed, "training-masks")
    n = data.n_train
    if n < cfg.batch_size:
        raise ValueError(f"need at least one full batch ({cfg.batch_size}), got {n} samples")

    f_c0 = data.train_camera_descriptors(cfg.mask_level, mask_rng)
    if not reg.frozen:
        # First *shuffled* batch: frames are temporally ordered on disk,
        # so an unshuffled head would see a single altitude regime.
        first = stream(cfg.seed, "training-freeze").permutation(n)[: cfg.batch_size]
        reg.freeze_normalizers(f_c0[first], data.f_m[first], data.target_t[first])

    optimizer = AdamW(reg.params(), cfg)
    curve = []
    last_good = save_state(reg)
    f_c = f_c0
    for epoch in range(cfg.epochs):
        lr = cfg.lr * (cfg.lr_decay ** (epoch // cfg.lr_step_epochs))
        if epoch > 0:
            f_c = data.train_camera_descriptors(cfg.mask_level, mask_rng)
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        try:
            for start in range(0, n - cfg.batch_size + 1, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                r6, t, tape = reg.forward(f_c[idx], data.f_m[idx])
                loss, grad_r6, grad_t = pose_loss(
                    r6, t, data.target_rot[idx], data.target_t[idx], cfg.lam
                )
                grads = reg.backward(grad_r6, grad_t, tape)
                optimizer.step(reg.params(), grads, lr)
                epoch_loss += loss
                n_batches += 1
        except TrainingDivergedError as err:
            load_state(reg, last_good)
            raise TrainingDivergedError(
                f"training diverged in epoch {epoch}; restored last good state", last_good
            ) from err
        val = evaluate_regressor(
            reg, data.val_f_c, data.val_f_m, data.val_target_rot, data.val_target_t, cfg.lam
        )
        curve.append(
            {
                "epoch": epoch,
                "train_loss": epoch_loss / max(n_batches, 1),
                "val_loss": val["loss"],
                "val_trans_rmse": val["trans_rmse"],
                "val_rot_rmse": val["rot_rmse"],
            }
        )
        last_good = save_state(reg)
    return TrainResult(regressor=reg, curve=curve, final_val=curve[-1] if curve else {})


def save_state(reg) -> dict:
    """Snapshot all parameters and frozen constants as plain lists."""
    state = {
        "kind": reg.kind,
        "seed": reg.seed,
        "dim": reg.dim,
        "widths": list(reg.widths),
        "gate_dim": reg.gate.proj_dim,
        "frozen": reg.frozen,
        "t_mean": reg.t_mean.tolist(),
        "t_std": reg.t_std.tolist(),
        "params": {k: v.tolist() for k, v in reg.params().items()},
    }
    if reg.kind == "kan":
        state["standardization"] = [
            {"mu": layer.mu.tolist(), "sigma": layer.sigma.tolist()} for layer in reg.layers
        ]
    else:
        state["standardization"] = [{"mu": reg.mu.tolist(), "sigma": reg.sigma.tolist()}]
    return state


def load_state(reg, state: dict) -> None:
    for name, value in state["params"].items():
        reg.set_param(name, np.asarray(value, dtype=float))
    reg.t_mean = np.asarray(state["t_mean"], dtype=float)
    reg.t_std = np.asarray(state["t_std"], dtype=float)
    reg.frozen = state["frozen"]
    if reg.kind == "kan":
        for layer, s in zip(reg.layers, state["standardization"]):
            layer.mu = np.asarray(s["mu"], dtype=float)
            layer.sigma = np.asarray(s["sigma"], dtype=float)
    else:
        reg.mu = np.asarray(state["standardization"][0]["mu"], dtype=float)
        reg.sigma = np.asarray(state["standardization"][0]["sigma"], dtype=float)


def save_checkpoint(reg, path, cfg: TrainConfig | None = None) -> None:
    """Single JSON checkpoint: parameters, frozen constants, config."""
    blob = {"state": save_state(reg), "train_config": cfg.to_dict() if cfg else None}
    with open(path, "w") as f:
        json.dump(blob, f)


def load_checkpoint(path):
    """Rebuild a regressor (and its TrainConfig, if stored) from JSON."""
    with open(path) as f:
        blob = json.load(f)
    state = blob["state"]
    cls = KanRegressor if state["kind"] == "kan" else MlpRegressor
    reg = cls(state["seed"], state["dim"], tuple(state["widths"]), state["gate_dim"])
    load_state(reg, state)
    cfg = TrainConfig(**blob["train_config"]) if blob.get("train_config") else None
    return reg, cfg
