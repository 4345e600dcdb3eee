"""Adversarial attacks on forgery classifiers.

Five attacks share one config and result type:

    fgsm        one signed-gradient step in pixel space
    pgd         iterated signed steps with random start, projected each step
    frequency   iterated signed updates to a DCT-coefficient perturbation,
                fused into the spectrum through energy-proportional weights
    hybrid      alternating frequency/spatial substeps, one projection per
                iteration, substep order switching every iteration
    sum         pixel-sum of independent pgd and frequency perturbations

All attacks ascend the BCE loss of the given label, so a "fake" input (label
1) is pushed toward a "real" decision. sign(0) = 0, so dead coordinates never
move. Every attack is deterministic given (model, image, label, config).
"""

from __future__ import annotations

import dataclasses
import io
from dataclasses import dataclass, field

import numpy as np

from . import spectral
from .errors import ConfigError, ShapeMismatch
from .imaging import Image, clamp_pixels, project_linf_array
from .models import _pixels, bce_loss
from .spectral import BAND_NAMES, WeightMatrix

OP_FREQ = "F"
OP_SPATIAL = "S"


@dataclass(frozen=True)
class AttackConfig:
    """Shared knobs for every attack.

    eps bounds the elementwise deviation: pixels for spatial/hybrid/sum
    attacks, DCT coefficients for the frequency attack. step_spatial is the
    pixel step size (PGD's alpha, the hybrid's spatial substep); step_freq is
    the coefficient step size (the frequency attack's lambda, the hybrid's
    frequency substep). band restricts which coefficient positions the
    frequency machinery may touch.
    """

    eps: float = 0.1
    step_spatial: float = 0.01
    step_freq: float = 0.6
    max_iters: int = 40
    norm: str = "inf"
    band: str = "all"
    block_size: int = 8
    seed: int = 0
    early_stop: bool = True

    def __post_init__(self):
        if not np.isfinite(self.eps) or self.eps < 0.0:
            raise ConfigError(f"eps must be finite and >= 0, got {self.eps}")
        for name in ("step_spatial", "step_freq"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0.0:
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.norm != "inf":
            raise ConfigError(f"only the 'inf' norm is supported, got {self.norm!r}")
        if self.band not in BAND_NAMES:
            raise ConfigError(
                f"unknown band {self.band!r}; expected one of {BAND_NAMES}"
            )
        if self.block_size < 2:
            raise ConfigError(f"block_size must be >= 2, got {self.block_size}")


@dataclass(frozen=True)
class TraceEntry:
    """One substep of one attack run.

    loss is evaluated at the substep's starting point (the value whose
    gradient drove the update). max_dev is the deviation right after the
    substep's own update: coefficient-domain for frequency substeps, pixel
    L-inf for spatial ones (pre-projection inside hybrid iterations).
    band_leakage is the fraction of coefficient-deviation energy outside the
    selected band, before pixel clamping; spatial substeps log 0.
    """

    iteration: int
    op: str
    loss: float
    max_dev: float
    band_leakage: float
    phase: str = ""


@dataclass(frozen=True)
class AttackResult:
    adv: Image
    success: bool
    iterations_used: int
    final_loss: float
    grad_calls: int
    trace: tuple = ()


def trace_to_csv(trace) -> str:
    buf = io.StringIO()
    buf.write("iteration,op,phase,loss,max_dev,band_leakage\n")
    for t in trace:
        buf.write(
            f"{t.iteration},{t.op},{t.phase},{t.loss!r},{t.max_dev!r},{t.band_leakage!r}\n"
        )
    return buf.getvalue()


def write_trace_csv(path, trace) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(trace_to_csv(trace))


def _predict_from_logit(z: float) -> int:
    return 1 if z > 0.0 else 0


def _finish(model, x: np.ndarray, label: int, iterations: int, grad_calls: int,
            trace: list, success: bool | None = None) -> AttackResult:
    adv = clamp_pixels(x)
    z = model.logit(adv.data)
    if success is None:
        success = _predict_from_logit(z) != label
    return AttackResult(
        adv=adv,
        success=success,
        iterations_used=iterations,
        final_loss=bce_loss(z, label),
        grad_calls=grad_calls,
        trace=tuple(trace),
    )


def fgsm(model, img, label, cfg: AttackConfig) -> AttackResult:
    """Single signed-gradient step of size eps, then pixel clamp."""
    x0 = _pixels(img)
    loss, g = model.loss_and_grad(x0, label)
    x = np.clip(x0 + cfg.eps * np.sign(g), 0.0, 1.0)
    trace = [TraceEntry(0, OP_SPATIAL, loss, float(np.abs(x - x0).max()), 0.0)]
    return _finish(model, x, label, 1, 1, trace)


def pgd(model, img, label, cfg: AttackConfig, *, random_init: bool = True) -> AttackResult:
    """Projected gradient descent (ascent on the loss) in pixel space."""
    x0 = _pixels(img)
    if random_init:
        rng = np.random.default_rng(cfg.seed)
        x = project_linf_array(
            x0 + rng.uniform(-cfg.eps, cfg.eps, size=x0.shape), x0, cfg.eps
        )
    else:
        x = x0.copy()
    trace: list[TraceEntry] = []
    grad_calls = 0
    iterations = 0
    success = None
    for it in range(cfg.max_iters):
        loss, g = model.loss_and_grad(x, label)
        grad_calls += 1
        x = project_linf_array(x + cfg.step_spatial * np.sign(g), x0, cfg.eps)
        trace.append(
            TraceEntry(it, OP_SPATIAL, loss, float(np.abs(x - x0).max()), 0.0)
        )
        iterations = it + 1
        if cfg.early_stop:
            if _predict_from_logit(model.logit(x)) != label:
                success = True
                break
    return _finish(model, x, label, iterations, grad_calls, trace, success)


class _FrequencyMachine:
    """Coefficient-perturbation state shared by the frequency and hybrid attacks.

    Holds the reference spectrum of the starting image, the per-position step
    weights, the band mask, and the running perturbation P. One substep
    performs: signed update of P from the chain-rule gradient, fusion into the
    current spectrum, band masking of the deviation from the reference
    spectrum, elementwise clipping to eps, and inverse transform. Pixel
    clamping is the caller's business.
    """

    def __init__(self, x_init: np.ndarray, cfg: AttackConfig, step: float,
                 weight_matrix: WeightMatrix | None = None,
                 initial_perturbation: np.ndarray | None = None):
        n = cfg.block_size
        spec0 = spectral.forward_spectrum(x_init, n)
        self.block_size = n
        self.eps = cfg.eps
        self.step = step
        self.d_init = spec0.coeffs
        if weight_matrix is None:
            weight_matrix = spectral.compute_weight_matrix(spec0)
        elif weight_matrix.block_size != n:
            raise ShapeMismatch(
                f"weight matrix block size {weight_matrix.block_size} != {n}"
            )
        self.weights = weight_matrix.weights
        self.in_mask = spectral.band_mask(n, cfg.band).mask
        self.out_mask = 1.0 - self.in_mask
        if initial_perturbation is None:
            rng = np.random.default_rng(cfg.seed)
            self.p = rng.uniform(0.0, 1.0, size=self.d_init.shape)
        else:
            p0 = np.asarray(initial_perturbation, dtype=np.float64)
            if p0.shape != self.d_init.shape:
                raise ShapeMismatch(
                    f"initial perturbation shape {p0.shape} != {self.d_init.shape}"
                )
            self.p = p0.copy()

    def grad_p(self, grad_x: np.ndarray) -> np.ndarray:
        """Chain rule through the orthonormal transform: M * DCT(dL/dX)."""
        blocks = spectral.forward_spectrum(grad_x, self.block_size).coeffs
        return self.weights * blocks

    def substep(self, x: np.ndarray, grad_x: np.ndarray):
        """One fused update; returns (raw pixels, max coeff deviation, leakage)."""
        self.p = self.p + self.step * np.sign(self.grad_p(grad_x))
        fused = (
            spectral.forward_spectrum(x, self.block_size).coeffs
            + self.weights * self.p
        )
        dev = (fused - self.d_init) * self.in_mask
        np.clip(dev, -self.eps, self.eps, out=dev)
        total = float((dev ** 2).sum())
        out = float(((dev * self.out_mask) ** 2).sum())
        leakage = out / total if total > 0.0 else 0.0
        x_raw = spectral.inverse_spectrum(
            spectral.Spectrum(self.block_size, self.d_init + dev)
        )
        return x_raw, float(np.abs(dev).max()), leakage


def frequency_attack(
    model, img, label, cfg: AttackConfig, *,
    weight_matrix: WeightMatrix | None = None,
    initial_perturbation: np.ndarray | None = None,
    spatial_projection: bool = False,
) -> AttackResult:
    """Iterative attack on the blockwise DCT coefficients.

    The perturbation lives in coefficient space and is fused into the current
    spectrum through the weight matrix, so strong bands move faster. The
    deviation from the starting spectrum is band-masked and clipped to eps
    before inverting. With spatial_projection the per-iteration pixel clamp
    becomes a full L-inf ball projection around the start.
    """
    x0 = _pixels(img)
    machine = _FrequencyMachine(
        x0, cfg, cfg.step_freq, weight_matrix, initial_perturbation
    )
    x = x0.copy()
    trace: list[TraceEntry] = []
    grad_calls = 0
    iterations = 0
    success = None
    for it in range(cfg.max_iters):
        loss, g = model.loss_and_grad(x, label)
        grad_calls += 1
        x_raw, max_dev, leakage = machine.substep(x, g)
        if spatial_projection:
            x = project_linf_array(x_raw, x0, cfg.eps)
        else:
            x = np.clip(x_raw, 0.0, 1.0)
        trace.append(TraceEntry(it, OP_FREQ, loss, max_dev, leakage))
        iterations = it + 1
        if cfg.early_stop:
            if _predict_from_logit(model.logit(x)) != label:
                success = True
                break
    return _finish(model, x, label, iterations, grad_calls, trace, success)


def hybrid_attack(model, img, label, cfg: AttackConfig) -> AttackResult:
    """Alternating frequency and spatial substeps with one projection per iteration.

    Substep order flips every iteration (F,S then S,F and so on). Substeps
    apply no clamping of their own; the iterate is projected onto the eps ball
    and [0, 1] once at iteration end. A substep whose step size is zero is
    skipped outright, which makes the degenerate cases collapse exactly onto
    the single-domain attacks.
    """
    x0 = _pixels(img)
    machine = _FrequencyMachine(x0, cfg, cfg.step_freq)
    x = x0.copy()
    trace: list[TraceEntry] = []
    grad_calls = 0
    iterations = 0
    success = None
    for it in range(cfg.max_iters):
        order = (OP_FREQ, OP_SPATIAL) if it % 2 == 0 else (OP_SPATIAL, OP_FREQ)
        for op in order:
            if op == OP_FREQ:
                if cfg.step_freq == 0.0:
                    continue
                loss, g = model.loss_and_grad(x, label)
                grad_calls += 1
                x, max_dev, leakage = machine.substep(x, g)
                trace.append(TraceEntry(it, OP_FREQ, loss, max_dev, leakage))
            else:
                if cfg.step_spatial == 0.0:
                    continue
                loss, g = model.loss_and_grad(x, label)
                grad_calls += 1
                x = x + cfg.step_spatial * np.sign(g)
                trace.append(
                    TraceEntry(it, OP_SPATIAL, loss, float(np.abs(x - x0).max()), 0.0)
                )
        x = project_linf_array(x, x0, cfg.eps)
        iterations = it + 1
        if cfg.early_stop:
            if _predict_from_logit(model.logit(x)) != label:
                success = True
                break
    return _finish(model, x, label, iterations, grad_calls, trace, success)


def sum_attack(model, img, label, cfg: AttackConfig) -> AttackResult:
    """Pixel-space sum of independent pgd and frequency perturbations.

    Both sub-attacks start from the original image with the same config; their
    deltas are added and the result projected back into the eps ball. Counters
    are summed and the two traces concatenated, tagged by phase.
    """
    x0 = _pixels(img)
    r_pgd = pgd(model, img, label, cfg)
    r_freq = frequency_attack(model, img, label, cfg)
    delta = (r_pgd.adv.data - x0) + (r_freq.adv.data - x0)
    x = project_linf_array(x0 + delta, x0, cfg.eps)
    trace = [dataclasses.replace(t, phase="pgd") for t in r_pgd.trace]
    trace += [dataclasses.replace(t, phase="frequency") for t in r_freq.trace]
    return _finish(
        model, x, label,
        r_pgd.iterations_used + r_freq.iterations_used,
        r_pgd.grad_calls + r_freq.grad_calls,
        trace,
    )


ATTACKS = {
    "fgsm": fgsm,
    "pgd": pgd,
    "frequency": frequency_attack,
    "hybrid": hybrid_attack,
    "sum": sum_attack,
}
