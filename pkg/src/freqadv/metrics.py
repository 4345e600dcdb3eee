"""Image quality metrics and attack evaluation.

MSE/PSNR use unit dynamic range. SSIM is the standard single-scale form:
11x11 Gaussian window, sigma 1.5, K1 = 0.01, K2 = 0.03, L = 1, windows taken
in valid mode (no padding), averaged over positions and channels.

Success accounting follows the convention that the attackable pool contains
only inputs the evaluating model classifies as fake; that precondition is
enforced loudly instead of filtering silently, so denominators stay auditable.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .attacks import ATTACKS, AttackConfig
from .errors import EmptyInput, PreconditionError, ShapeMismatch, WindowTooLarge
from .imaging import Image

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    xa = a.data if isinstance(a, Image) else np.asarray(a, dtype=np.float64)
    xb = b.data if isinstance(b, Image) else np.asarray(b, dtype=np.float64)
    if xa.shape != xb.shape:
        raise ShapeMismatch(f"image shapes differ: {xa.shape} vs {xb.shape}")
    return xa, xb


def mse(a, b) -> float:
    xa, xb = _pair(a, b)
    return float(np.mean((xa - xb) ** 2))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for unit-range pixels; inf iff mse is 0."""
    m = mse(a, b)
    if m == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / m))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _window_means(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # valid-mode weighted means over all (window x window) patches, per channel
    win = kernel.shape[0]
    patches = np.lib.stride_tricks.sliding_window_view(x, (win, win), axis=(0, 1))
    return np.tensordot(patches, kernel, axes=([3, 4], [0, 1]))


def ssim(a, b, *, window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA,
         k1: float = SSIM_K1, k2: float = SSIM_K2) -> float:
    """Mean structural similarity between two same-shape images."""
    xa, xb = _pair(a, b)
    h, w = xa.shape[0], xa.shape[1]
    if window > min(h, w):
        raise WindowTooLarge(
            f"{window}x{window} window does not fit a {h}x{w} image"
        )
    kernel = _gaussian_kernel(window, sigma)
    mu_a = _window_means(xa, kernel)
    mu_b = _window_means(xb, kernel)
    var_a = _window_means(xa * xa, kernel) - mu_a ** 2
    var_b = _window_means(xb * xb, kernel) - mu_b ** 2
    cov = _window_means(xa * xb, kernel) - mu_a * mu_b
    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class QualityReport:
    mse: float
    psnr: float
    ssim: float

    def to_dict(self) -> dict:
        return {"mse": self.mse, "psnr": self.psnr, "ssim": self.ssim}


def quality_report(init, adv) -> QualityReport:
    return QualityReport(mse=mse(init, adv), psnr=psnr(init, adv), ssim=ssim(init, adv))


def attack_success_rate(model_eval, results) -> float:
    """Fraction of adversarial examples that flip the evaluator's decision.

    results is a sequence of (init, adv, label) triples. Every init must carry
    label 1 and be classified fake by the evaluator; the caller pre-filters
    the pool so this denominator is explicit.
    """
    results = list(results)
    if not results:
        raise EmptyInput("no attack results to score")
    flips = 0
    for i, (init, adv, label) in enumerate(results):
        if int(label) != 1:
            raise PreconditionError(
                f"result {i} has label {label}; the pool must contain only fakes"
            )
        if model_eval.predict(init) != 1:
            raise PreconditionError(
                f"result {i}: evaluator does not classify the input as fake"
            )
        if model_eval.predict(adv) != 1:
            flips += 1
    return flips / len(results)


@dataclass(frozen=True)
class TransferMatrix:
    """Attack success of each source model's examples against each target.

    Cell (i, j) counts how many adversarial examples crafted against
    sources[i] flip targets[j]; rates are successes / attempts. With the same
    roster on both axes the diagonal is the white-box rate.
    """

    sources: tuple
    targets: tuple
    successes: np.ndarray
    attempts: int

    @property
    def rates(self) -> np.ndarray:
        return self.successes / self.attempts

    def to_dict(self) -> dict:
        return {
            "sources": list(self.sources),
            "targets": list(self.targets),
            "attempts": self.attempts,
            "successes": self.successes.tolist(),
            "rates": self.rates.tolist(),
        }


def _named_models(models) -> list:
    if isinstance(models, dict):
        return list(models.items())
    return [(str(name), model) for name, model in models]


def transfer_matrix(source_models, target_models, dataset, attack,
                    cfg: AttackConfig) -> TransferMatrix:
    """Craft per-source adversarial examples once, score them on every target.

    dataset must already be filtered so that every target classifies every
    image as fake (shared auditable denominator); anything else raises.
    Attacks are seeded per image as cfg.seed + image index.
    """
    sources = _named_models(source_models)
    targets = _named_models(target_models)
    dataset = list(dataset)
    if not dataset:
        raise EmptyInput("empty attack pool")
    if not sources or not targets:
        raise EmptyInput("need at least one source and one target model")
    for tname, tmodel in targets:
        for i, img in enumerate(dataset):
            if tmodel.predict(img) != 1:
                raise PreconditionError(
                    f"target {tname!r} does not classify pool image {i} as fake; "
                    "filter the pool to the common fake set first"
                )
    attack_fn = ATTACKS[attack] if isinstance(attack, str) else attack
    successes = np.zeros((len(sources), len(targets)), dtype=np.int64)
    for si, (_, smodel) in enumerate(sources):
        advs = [
            attack_fn(smodel, img, 1, dataclasses.replace(cfg, seed=cfg.seed + i)).adv
            for i, img in enumerate(dataset)
        ]
        for ti, (_, tmodel) in enumerate(targets):
            successes[si, ti] = sum(1 for adv in advs if tmodel.predict(adv) != 1)
    return TransferMatrix(
        sources=tuple(n for n, _ in sources),
        targets=tuple(n for n, _ in targets),
        successes=successes,
        attempts=len(dataset),
    )
