"""Three-phase training: edge sub-network, disparity branch, then joint.

The shared backbone is frozen in every phase. Optimizer moments are reset at
each phase boundary.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import NonFiniteError, backward
from .checkpoint import load_checkpoint, save_checkpoint
from .data import StereoBatch, StereoSample
from .edge_net import edge_loss
from .losses import LAMBDA_DS, deep_supervision
from .model import BACKBONE, DISPARITY, EDGE, EdgeStereo

log = logging.getLogger(__name__)

GROUPS = (BACKBONE, EDGE, DISPARITY)

# phase id -> (dataset role, trainable groups, active losses)
PHASE_SEMANTICS = {
    1: ("edge", (EDGE,), ("class_balanced_bce",)),
    2: ("stereo", (DISPARITY,), ("regression", "edge_smoothness")),
    3: ("stereo", (EDGE, DISPARITY), ("regression",)),
}


@dataclass
class PhaseSpec:
    id: int
    iterations: int
    lr: float
    lr_decay_steps: tuple[int, ...] = ()
    lr_decay_factor: float = 0.5
    batch_size: int = 2
    lambda_ds: float = LAMBDA_DS
    dataset_role: str = ""
    trainable: tuple[str, ...] = ()
    frozen: tuple[str, ...] = ()
    losses: tuple[str, ...] = ()

    def __post_init__(self):
        if self.id not in PHASE_SEMANTICS:
            raise ValueError(f"unknown phase id {self.id}")
        role, trainable, losses = PHASE_SEMANTICS[self.id]
        self.dataset_role = self.dataset_role or role
        self.trainable = tuple(self.trainable) or trainable
        self.frozen = tuple(self.frozen) or tuple(g for g in GROUPS if g not in self.trainable)
        self.losses = tuple(self.losses) or losses
        self.lr_decay_steps = tuple(int(s) for s in self.lr_decay_steps)
        if (self.dataset_role, self.trainable, self.losses) != (role, trainable, losses):
            raise ValueError(f"phase {self.id} must use role {role!r}, train {trainable} "
                             f"and losses {losses}")
        if BACKBONE not in self.frozen or set(self.trainable) & set(self.frozen):
            raise ValueError("the shared backbone is frozen in every phase")
        if set(self.trainable) | set(self.frozen) != set(GROUPS):
            raise ValueError("every parameter group must be either trainable or frozen")
        if self.iterations < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("iterations >= 0, batch_size >= 1 and lr > 0 are required")

    def lr_at(self, iteration: int) -> float:
        """Step decay: the factor applies from each listed iteration onward."""
        fired = sum(1 for s in self.lr_decay_steps if iteration >= s)
        return self.lr * self.lr_decay_factor ** fired

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass
class PhasePlan:
    phases: list[PhaseSpec]

    def __post_init__(self):
        ids = [p.id for p in self.phases]
        if ids != sorted(ids) or len(set(ids)) != len(ids):
            raise ValueError(f"phases must be in increasing order without repeats, got {ids}")

    @classmethod
    def default(cls, iterations=(300, 800, 800), lr=(1e-3, 1e-3, 5e-4),
                batch_size: int = 2) -> "PhasePlan":
        """Desk-scale schedule; phase 3 halves its rate at 5/8 and 5/6 of its length,
        mirroring the 300k/500k-of-600k decay points."""
        n3 = iterations[2]
        return cls([
            PhaseSpec(1, iterations[0], lr[0], (iterations[0] // 2, iterations[0] * 5 // 6), 0.1,
                      batch_size=batch_size),
            PhaseSpec(2, iterations[1], lr[1], batch_size=batch_size),
            PhaseSpec(3, n3, lr[2], (n3 * 5 // 8, n3 * 5 // 6), 0.5, batch_size=batch_size),
        ])

    @classmethod
    def from_dict(cls, d: dict) -> "PhasePlan":
        return cls([PhaseSpec(**p) for p in d["phases"]])

    def to_dict(self) -> dict:
        return {"phases": [p.to_dict() for p in self.phases]}


class Adam:
    """Bias-corrected Adam over an explicit list of trainable parameters."""

    def __init__(self, named_params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        named_params = list(named_params)
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.step_count = 0

    def step(self, lr: float) -> None:
        adam_step(self, [p.grad for p in self.params], lr)


def adam_step(state: Adam, grads, lr: float) -> None:
    """One update; ``None`` gradients count as zero. Non-finite gradients abort
    before any parameter is touched."""
    grads = [np.zeros_like(p.value) if g is None else g for p, g in zip(state.params, grads)]
    for name, g in zip(state.names, grads):
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for i, (p, g) in enumerate(zip(state.params, grads)):
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        p.value = (p.value - lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.value.dtype)


def batch_indices(n: int, batch_size: int, seed: int, phase_id: int, iteration: int) -> np.ndarray:
    """Indices for one iteration; the order is reshuffled every epoch from the seed."""
    if n < batch_size:
        raise ValueError(f"dataset has {n} samples, fewer than batch size {batch_size}")
    per_epoch = n // batch_size
    epoch, k = divmod(iteration, per_epoch)
    perm = np.random.default_rng([seed, phase_id, epoch]).permutation(n)
    return perm[k * batch_size:(k + 1) * batch_size]


def phase_loss(spec: PhaseSpec, model: EdgeStereo, batch: StereoBatch):
    """Scalar loss node and, for stereo phases, the loss breakdown."""
    if spec.id == 1:
        out = model.edges(batch.left)
        return edge_loss(out, batch.edges), None
    out = model(batch.left, batch.right)
    edge_map = out.edge.edge_map if (out.edge is not None and spec.id == 2) else None
    bd = deep_supervision(out.disparities, batch.gt, batch.valid, edge_map,
                          spec.lambda_ds, phase=spec.id)
    return bd.total, bd


def apply_freezing(model: EdgeStereo, spec: PhaseSpec) -> None:
    for name, group in model.groups.items():
        group.freeze(name in spec.frozen)


def trainable_named(model: EdgeStereo, spec: PhaseSpec):
    ids = {id(p) for g in spec.trainable for p in model.groups[g].params}
    return [(n, p) for n, p in model.named_parameters() if id(p) in ids]


@dataclass
class PhaseResult:
    phase: int
    trace: list[float] = field(default_factory=list)
    checkpoint: Path | None = None


class NaNLossError(NonFiniteError):
    def __init__(self, phase: int, iteration: int, trace: list[float]):
        super().__init__(f"non-finite loss in phase {phase} at iteration {iteration}")
        self.trace = trace


def run_phase(spec: PhaseSpec, model: EdgeStereo, samples: list[StereoSample], seed: int,
              out_dir=None, checkpoint_every: int = 0, resume=None,
              stop_at: int | None = None, extra_meta: dict | None = None) -> PhaseResult:
    """Train one phase.

    ``resume`` is a checkpoint written mid-phase by this function; training
    continues from its iteration with the saved moments and loss trace.
    ``stop_at`` ends the phase early (used to produce resumable checkpoints).
    ``extra_meta`` is stored verbatim in every checkpoint written.
    """
    apply_freezing(model, spec)
    opt = Adam(trainable_named(model, spec))
    start, trace = 0, []
    if resume is not None:
        meta = load_checkpoint(resume, model, opt)
        if meta.get("phase") != spec.id:
            raise ValueError(f"checkpoint is from phase {meta.get('phase')}, not {spec.id}")
        start, trace = int(meta["iteration"]), list(meta["trace"])
    end = spec.iterations if stop_at is None else min(stop_at, spec.iterations)
    out_dir = Path(out_dir) if out_dir is not None else None

    def save(it: int, name: str) -> Path | None:
        if out_dir is None:
            return None
        meta = dict(extra_meta or {})
        meta.update({"phase": spec.id, "iteration": it, "trace": trace, "seed": seed,
                     "model": model.config.to_dict(), "spec": spec.to_dict()})
        return save_checkpoint(out_dir / name, model, opt, meta)

    for it in range(start, end):
        idx = batch_indices(len(samples), spec.batch_size, seed, spec.id, it)
        batch = StereoBatch.stack([samples[i] for i in idx])
        try:
            loss, _ = phase_loss(spec, model, batch)
        except NonFiniteError as exc:
            raise NaNLossError(spec.id, it, trace) from exc
        value = float(loss.value)
        model.zero_grad()
        backward(loss)
        opt.step(spec.lr_at(it))
        trace.append(value)
        if checkpoint_every and (it + 1) % checkpoint_every == 0 and it + 1 < end:
            save(it + 1, f"phase{spec.id}_iter{it + 1:06d}.ckpt")
        if it % 100 == 0:
            log.info("phase %d iter %d loss %.4f lr %.2e", spec.id, it, value, spec.lr_at(it))
    path = save(end, f"phase{spec.id}.ckpt")
    model.zero_grad()
    return PhaseResult(spec.id, trace, path)


def run_plan(plan: PhasePlan, model: EdgeStereo, samples: list[StereoSample], seed: int,
             out_dir=None, checkpoint_every: int = 0) -> list[PhaseResult]:
    return [run_phase(spec, model, samples, seed, out_dir, checkpoint_every)
            for spec in plan.phases]


def smoothed(trace, window: int = 20) -> np.ndarray:
    t = np.asarray(trace, dtype=np.float64)
    if len(t) < window:
        return t
    return np.convolve(t, np.ones(window) / window, mode="valid")


def predict(model: EdgeStereo, left, right, batch_size: int = 4):
    """Full-resolution disparity for stacked [N, 3, H, W] images (no gradients)."""
    saved = {name: g.frozen for name, g in model.groups.items()}
    for g in model.groups.values():
        g.freeze(True)
    try:
        outs = [model(left[i:i + batch_size], right[i:i + batch_size]).disparity.value
                for i in range(0, len(left), batch_size)]
    finally:
        for name, g in model.groups.items():
            g.freeze(saved[name])
    return np.concatenate(outs)
