"""Dataset synthesis, experiment orchestration, and report emission.

The synthetic task is binary forgery detection. "Real" images are low-pass
random fields: seeded noise blurred with a separable Gaussian and rescaled to
[0, 1]. "Fake" images take a real image and add noise synthesized only in the
high band of each DCT block, so every fake carries strictly more high-band
energy than its paired real. Both sides are quantized to the 8-bit grid at
generation time, which makes the PNG round trip exactly lossless and keeps
staged CLI runs byte-identical to monolithic ones.

An experiment is: generate, train the model roster, select the attack pool
(evaluation fakes every model classifies as fake), run every configured
attack from every model, and evaluate transfer, ablation, and image-quality
tables into one JSON report. The report is deterministic for a fixed config;
only its timestamp field varies between runs. Wall-clock numbers live in a
separate timings.json.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, attacks as attacks_mod, metrics, models as models_mod, spectral
from ._version import __version__
from .attacks import ATTACKS, AttackConfig
from .errors import (
    ConfigError,
    DegenerateInput,
    EmptyInput,
    FreqAdvError,
    PreconditionError,
)
from .imaging import Image, load_png, save_png
from .models import Classifier, LinearSpectralClassifier, TinyCnnClassifier

MODEL_KINDS = ("linear", "cnn")
BAND_ABLATION_BANDS = ("low", "middle", "high", "all")

DATASET_DIR = "dataset"
MODELS_DIR = "models"
ATTACKS_DIR = "attacks"
TRIPLETS_DIR = "triplets"
REPORT_FILE = "report.json"
TIMINGS_FILE = "timings.json"
TRAIN_SUMMARY_FILE = "train_summary.json"
POOL_FILE = "pool.json"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetConfig:
    n_train_pairs: int = 100
    n_eval_pairs: int = 50
    image_size: int = 64
    channels: int = 1
    block_size: int = 8
    amplitude: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.n_train_pairs < 1 or self.n_eval_pairs < 1:
            raise ConfigError("pair counts must be >= 1")
        if self.block_size < 3:
            raise ConfigError(f"block_size must be >= 3, got {self.block_size}")
        if self.image_size < self.block_size or self.image_size % self.block_size:
            raise ConfigError(
                f"image_size {self.image_size} must be a positive multiple of "
                f"block_size {self.block_size}"
            )
        if self.channels not in (1, 3):
            raise ConfigError(f"channels must be 1 or 3, got {self.channels}")
        if not np.isfinite(self.amplitude) or self.amplitude < 0:
            raise ConfigError(f"amplitude must be finite and >= 0, got {self.amplitude}")


@dataclass(frozen=True)
class ModelConfig:
    name: str
    kind: str
    epochs: int
    lr: float
    batch_size: int | None = 32
    seed: int = 0

    def __post_init__(self):
        if not self.name:
            raise ConfigError("model name must be nonempty")
        if self.kind not in MODEL_KINDS:
            raise ConfigError(
                f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}"
            )
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not np.isfinite(self.lr) or self.lr <= 0:
            raise ConfigError(f"lr must be finite and > 0, got {self.lr}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    models: tuple = ()
    attacks: dict = field(default_factory=dict)
    out_dir: str | None = None
    primary_model: str | None = None
    band_ablation_images: int = 50
    triplet_dumps: int = 2
    amplification: float = 10.0
    dump_traces: bool = False

    def __post_init__(self):
        if not self.models:
            raise ConfigError("model roster is empty")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate model names in roster: {names}")
        if not self.attacks:
            raise ConfigError("attack roster is empty")
        for name in self.attacks:
            if name not in ATTACKS:
                raise ConfigError(
                    f"unknown attack {name!r}; expected one of {sorted(ATTACKS)}"
                )
        if self.primary_model is not None and self.primary_model not in names:
            raise ConfigError(
                f"primary_model {self.primary_model!r} is not in the roster {names}"
            )
        if self.band_ablation_images < 0:
            raise ConfigError("band_ablation_images must be >= 0")
        if self.triplet_dumps < 0:
            raise ConfigError("triplet_dumps must be >= 0")
        if not np.isfinite(self.amplification) or self.amplification <= 0:
            raise ConfigError("amplification must be finite and > 0")

    @property
    def primary(self) -> str:
        return self.primary_model or self.models[0].name


def default_config(out_dir: str | None = None) -> ExperimentConfig:
    """Full-size experiment: both model kinds, all five attacks."""
    return ExperimentConfig(
        dataset=DatasetConfig(),
        models=(
            ModelConfig(name="linear", kind="linear", epochs=300, lr=0.4,
                        batch_size=None, seed=11),
            ModelConfig(name="cnn", kind="cnn", epochs=150, lr=0.3,
                        batch_size=None, seed=12),
        ),
        attacks={
            "fgsm": AttackConfig(),
            "pgd": AttackConfig(),
            "frequency": AttackConfig(),
            "hybrid": AttackConfig(),
            "sum": AttackConfig(),
        },
        out_dir=out_dir,
    )


def _check_keys(d: dict, allowed, where: str) -> None:
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def _attack_config_to_dict(cfg: AttackConfig) -> dict:
    return dataclasses.asdict(cfg)


def _attack_config_from_dict(d: dict) -> AttackConfig:
    _check_keys(d, [f.name for f in dataclasses.fields(AttackConfig)], "attack config")
    return AttackConfig(**d)


def experiment_config_to_dict(cfg: ExperimentConfig, include_out: bool = False) -> dict:
    """JSON-ready config dict; out_dir is omitted unless asked for, so twin
    runs in different directories hash identically."""
    d = {
        "dataset": dataclasses.asdict(cfg.dataset),
        "models": [dataclasses.asdict(m) for m in cfg.models],
        "attacks": {name: _attack_config_to_dict(a) for name, a in cfg.attacks.items()},
        "primary_model": cfg.primary_model,
        "band_ablation_images": cfg.band_ablation_images,
        "triplet_dumps": cfg.triplet_dumps,
        "amplification": cfg.amplification,
        "dump_traces": cfg.dump_traces,
    }
    if include_out:
        d["out_dir"] = cfg.out_dir
    return d


def experiment_config_from_dict(d: dict) -> ExperimentConfig:
    _check_keys(
        d,
        ["dataset", "models", "attacks", "out_dir", "primary_model",
         "band_ablation_images", "triplet_dumps", "amplification", "dump_traces"],
        "experiment config",
    )
    base = default_config()
    ds = d.get("dataset", {})
    _check_keys(ds, [f.name for f in dataclasses.fields(DatasetConfig)], "dataset config")
    mconf = []
    for md in d.get("models", [dataclasses.asdict(m) for m in base.models]):
        _check_keys(md, [f.name for f in dataclasses.fields(ModelConfig)], "model config")
        mconf.append(ModelConfig(**md))
    araw = d.get("attacks", {name: _attack_config_to_dict(a) for name, a in base.attacks.items()})
    return ExperimentConfig(
        dataset=DatasetConfig(**ds),
        models=tuple(mconf),
        attacks={name: _attack_config_from_dict(ad) for name, ad in araw.items()},
        out_dir=d.get("out_dir"),
        primary_model=d.get("primary_model"),
        band_ablation_images=d.get("band_ablation_images", base.band_ablation_images),
        triplet_dumps=d.get("triplet_dumps", base.triplet_dumps),
        amplification=d.get("amplification", base.amplification),
        dump_traces=d.get("dump_traces", base.dump_traces),
    )


def load_config_file(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return experiment_config_from_dict(json.load(fh))


def config_with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Root-seed override: dataset gets seed, model k gets seed + 1000*(k+1),
    attacks get seed as their base."""
    return dataclasses.replace(
        cfg,
        dataset=dataclasses.replace(cfg.dataset, seed=seed),
        models=tuple(
            dataclasses.replace(m, seed=seed + 1000 * (k + 1))
            for k, m in enumerate(cfg.models)
        ),
        attacks={
            name: dataclasses.replace(a, seed=seed) for name, a in cfg.attacks.items()
        },
    )


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    payload = _canonical_json(experiment_config_to_dict(cfg, include_out=False))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

def _gaussian_blur(arr: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding, per channel."""
    radius = max(1, int(np.ceil(3.0 * sigma)))
    r = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    kernel /= kernel.sum()
    out = arr
    for axis in (0, 1):
        moved = np.moveaxis(out, axis, -1)
        padded = np.pad(moved, [(0, 0)] * (moved.ndim - 1) + [(radius, radius)],
                        mode="reflect")
        windows = np.lib.stride_tricks.sliding_window_view(padded, 2 * radius + 1,
                                                           axis=-1)
        moved = windows @ kernel
        out = np.moveaxis(moved, -1, axis)
    return out


def _quantize(arr: np.ndarray) -> np.ndarray:
    return np.round(arr * 255.0) / 255.0


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Paired real/fake images with split tags and per-pair generation seeds.

    Order is real, fake, real, fake within each split, train split first.
    """

    images: tuple
    labels: tuple
    seeds: tuple
    filenames: tuple
    splits: tuple
    config: DatasetConfig

    def __len__(self) -> int:
        return len(self.images)

    def indices(self, split: str | None = None, label: int | None = None) -> list:
        out = []
        for i in range(len(self.images)):
            if split is not None and self.splits[i] != split:
                continue
            if label is not None and self.labels[i] != label:
                continue
            out.append(i)
        return out

    def pair_indices(self, split: str | None = None) -> list:
        """(real_index, fake_index) tuples, in generation order."""
        pairs = []
        reals = self.indices(split=split, label=0)
        for ri in reals:
            pairs.append((ri, ri + 1))
        return pairs

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.labels == other.labels
            and self.seeds == other.seeds
            and self.filenames == other.filenames
            and self.splits == other.splits
            and self.config == other.config
            and all(
                np.array_equal(a.data, b.data)
                for a, b in zip(self.images, other.images)
            )
        )


def generate_dataset(cfg: DatasetConfig) -> LabeledDataset:
    """Synthesize the paired real/fake dataset.

    Pair i uses seed cfg.seed + i (train pairs first); the fake's high-band
    noise comes from the same stream as its real base. With amplitude > 0
    every fake is checked to carry strictly more high-band mass than its real.
    """
    size, chans, n = cfg.image_size, cfg.channels, cfg.block_size
    sigma = size / 8.0
    hi = spectral.band_mask(n, "high").mask
    _, mid = spectral.band_thresholds(n)

    images, labels, seeds, filenames, splits = [], [], [], [], []
    pair_counter = 0
    for split, n_pairs in (("train", cfg.n_train_pairs), ("eval", cfg.n_eval_pairs)):
        for k in range(n_pairs):
            seed = cfg.seed + pair_counter
            pair_counter += 1
            rng = np.random.default_rng(seed)
            base = rng.random((size, size, chans))
            smooth = _gaussian_blur(base, sigma)
            lo, hi_v = smooth.min(), smooth.max()
            if hi_v <= lo:
                raise DegenerateInput(f"flat field for pair seed {seed}")
            real = _quantize((smooth - lo) / (hi_v - lo))

            spec = spectral.forward_spectrum(real, n)
            noise = rng.uniform(0.5, 1.0, size=spec.coeffs.shape) * cfg.amplitude * hi
            fake_raw = spectral.inverse_spectrum(
                spectral.Spectrum(n, spec.coeffs + noise)
            )
            fake = _quantize(np.clip(fake_raw, 0.0, 1.0))

            if cfg.amplitude > 0:
                hm_real = spectral.high_band_mass(
                    spectral.band_energy_profile(real, n), n
                )
                hm_fake = spectral.high_band_mass(
                    spectral.band_energy_profile(fake, n), n
                )
                if not hm_fake > hm_real:
                    raise DegenerateInput(
                        f"fake pair {pair_counter - 1} lost its high-band excess "
                        f"({hm_fake} <= {hm_real}); amplitude {cfg.amplitude} too small"
                    )

            for role, data in (("real", real), ("fake", fake)):
                images.append(Image(data))
                labels.append(0 if role == "real" else 1)
                seeds.append(seed)
                filenames.append(f"{split}_{role}_{k:04d}.png")
                splits.append(split)

    return LabeledDataset(
        images=tuple(images),
        labels=tuple(labels),
        seeds=tuple(seeds),
        filenames=tuple(filenames),
        splits=tuple(splits),
        config=cfg,
    )


def save_dataset(ds: LabeledDataset, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for img, name in zip(ds.images, ds.filenames):
        save_png(img, os.path.join(out_dir, name))
    with open(os.path.join(out_dir, "labels.csv"), "w", encoding="utf-8",
              newline="") as fh:
        fh.write("filename,label,seed\n")
        for name, label, seed in zip(ds.filenames, ds.labels, ds.seeds):
            fh.write(f"{name},{label},{seed}\n")
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as fh:
        fh.write(_canonical_json({
            "format": 1,
            "dataset": dataclasses.asdict(ds.config),
        }))


def load_dataset(in_dir) -> LabeledDataset:
    meta_path = os.path.join(in_dir, "meta.json")
    if not os.path.exists(meta_path):
        raise FileNotFoundError(f"no dataset at {in_dir} (missing {meta_path})")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    cfg = DatasetConfig(**meta["dataset"])
    images, labels, seeds, filenames, splits = [], [], [], [], []
    with open(os.path.join(in_dir, "labels.csv"), "r", encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() != "filename,label,seed":
            raise ConfigError(f"unexpected labels.csv header: {header.strip()!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            name, label, seed = line.split(",")
            images.append(load_png(os.path.join(in_dir, name)))
            labels.append(int(label))
            seeds.append(int(seed))
            filenames.append(name)
            splits.append(name.split("_", 1)[0])
    return LabeledDataset(
        images=tuple(images),
        labels=tuple(labels),
        seeds=tuple(seeds),
        filenames=tuple(filenames),
        splits=tuple(splits),
        config=cfg,
    )


# ---------------------------------------------------------------------------
# training and pool selection
# ---------------------------------------------------------------------------

def build_model(mc: ModelConfig, ds_cfg: DatasetConfig) -> Classifier:
    if mc.kind == "linear":
        return LinearSpectralClassifier(
            block_size=ds_cfg.block_size, channels=ds_cfg.channels, seed=mc.seed
        )
    return TinyCnnClassifier(channels=ds_cfg.channels, seed=mc.seed)


def accuracy(model: Classifier, ds: LabeledDataset, split: str) -> tuple[int, int]:
    idx = ds.indices(split=split)
    correct = sum(
        1 for i in idx if model.predict(ds.images[i]) == ds.labels[i]
    )
    return correct, len(idx)


def train_models(cfg: ExperimentConfig, ds: LabeledDataset):
    """Train the roster; returns ({name: model}, JSON-ready summary dict)."""
    train_idx = ds.indices(split="train")
    images = [ds.images[i] for i in train_idx]
    labels = [ds.labels[i] for i in train_idx]
    trained: dict[str, Classifier] = {}
    summary: dict[str, dict] = {}
    for mc in cfg.models:
        model = build_model(mc, ds.config)
        result = models_mod.train(
            model, images, labels,
            epochs=mc.epochs, lr=mc.lr, batch_size=mc.batch_size, seed=mc.seed,
        )
        acc = {}
        for split in ("train", "eval"):
            correct, total = accuracy(model, ds, split)
            acc[split] = {
                "correct": int(correct),
                "total": int(total),
                "accuracy": correct / total,
            }
        trained[mc.name] = model
        summary[mc.name] = {
            "kind": mc.kind,
            "epochs": int(mc.epochs),
            "lr": float(mc.lr),
            "batch_size": None if mc.batch_size is None else int(mc.batch_size),
            "seed": int(mc.seed),
            "final_loss": float(result.final_loss),
            "epoch_losses": [float(v) for v in result.epoch_losses],
            "accuracy": acc,
        }
    return trained, summary


def select_attack_pool(model_roster: dict, ds: LabeledDataset) -> list:
    """Evaluation-split fakes that every model classifies as fake.

    One shared pool keeps every success-rate denominator identical and
    auditable across models and attacks.
    """
    pool = []
    for i in ds.indices(split="eval", label=1):
        if all(m.predict(ds.images[i]) == 1 for m in model_roster.values()):
            pool.append(i)
    return pool


# ---------------------------------------------------------------------------
# attack stage
# ---------------------------------------------------------------------------

def run_attacks(cfg: ExperimentConfig, model_roster: dict, ds: LabeledDataset,
                pool: list):
    """Run every configured attack from every roster model over the pool.

    Returns (attack_data, timings) where attack_data[attack][model] is either
    {"advs": (n,H,W,C) array, "records": [per-image dict]} or {"error": str}
    when the whole cell failed. Per-image seeds are base seed + pool position.
    """
    if not pool:
        raise PreconditionError(
            "attack pool is empty: no evaluation fake is classified fake by "
            "every model"
        )
    attack_data: dict[str, dict] = {}
    timings: dict[str, dict] = {}
    for attack_name, acfg in cfg.attacks.items():
        fn = ATTACKS[attack_name]
        attack_data[attack_name] = {}
        timings[attack_name] = {}
        for model_name, model in model_roster.items():
            t0 = time.perf_counter()
            try:
                advs = np.empty(
                    (len(pool), ds.config.image_size, ds.config.image_size,
                     ds.config.channels)
                )
                records = []
                for k, i in enumerate(pool):
                    res = fn(model, ds.images[i], 1,
                             dataclasses.replace(acfg, seed=acfg.seed + k))
                    advs[k] = res.adv.data
                    records.append({
                        "pool_position": int(k),
                        "dataset_index": int(i),
                        "filename": ds.filenames[i],
                        "success": bool(res.success),
                        "iterations_used": int(res.iterations_used),
                        "grad_calls": int(res.grad_calls),
                        "final_loss": float(res.final_loss),
                    })
                attack_data[attack_name][model_name] = {
                    "advs": advs, "records": records,
                }
            except FreqAdvError as exc:
                attack_data[attack_name][model_name] = {
                    "error": f"{type(exc).__name__}: {exc}",
                }
            timings[attack_name][model_name] = {
                "seconds": time.perf_counter() - t0,
                "images": len(pool),
            }
    return attack_data, timings


def save_attack_stage(out_dir, pool: list, ds: LabeledDataset, attack_data: dict) -> None:
    root = os.path.join(out_dir, ATTACKS_DIR)
    os.makedirs(root, exist_ok=True)
    with open(os.path.join(root, POOL_FILE), "w", encoding="utf-8") as fh:
        fh.write(_canonical_json({
            "indices": [int(i) for i in pool],
            "filenames": [ds.filenames[i] for i in pool],
        }))
    for attack_name, per_model in attack_data.items():
        for model_name, cell in per_model.items():
            cell_dir = os.path.join(root, attack_name, model_name)
            os.makedirs(cell_dir, exist_ok=True)
            if "error" in cell:
                with open(os.path.join(cell_dir, "records.json"), "w",
                          encoding="utf-8") as fh:
                    fh.write(_canonical_json({"error": cell["error"]}))
                continue
            np.savez_compressed(
                os.path.join(cell_dir, "advs.npz"),
                advs=cell["advs"],
                indices=np.array([r["dataset_index"] for r in cell["records"]],
                                 dtype=np.int64),
            )
            with open(os.path.join(cell_dir, "records.json"), "w",
                      encoding="utf-8") as fh:
                fh.write(_canonical_json({"records": cell["records"]}))
            for k in range(cell["advs"].shape[0]):
                save_png(Image(np.clip(cell["advs"][k], 0.0, 1.0)),
                         os.path.join(cell_dir, f"adv_{k:04d}.png"))


def load_attack_stage(out_dir, cfg: ExperimentConfig):
    root = os.path.join(out_dir, ATTACKS_DIR)
    pool_path = os.path.join(root, POOL_FILE)
    if not os.path.exists(pool_path):
        raise FileNotFoundError(f"no attack stage at {root} (missing {pool_path})")
    with open(pool_path, "r", encoding="utf-8") as fh:
        pool = [int(i) for i in json.load(fh)["indices"]]
    attack_data: dict[str, dict] = {}
    for attack_name in cfg.attacks:
        attack_data[attack_name] = {}
        for mc in cfg.models:
            cell_dir = os.path.join(root, attack_name, mc.name)
            rec_path = os.path.join(cell_dir, "records.json")
            with open(rec_path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
            if "error" in payload:
                attack_data[attack_name][mc.name] = {"error": payload["error"]}
                continue
            with np.load(os.path.join(cell_dir, "advs.npz")) as z:
                advs = z["advs"]
            attack_data[attack_name][mc.name] = {
                "advs": advs, "records": payload["records"],
            }
    return pool, attack_data


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _band_energy_section(ds: LabeledDataset) -> dict:
    n = ds.config.block_size
    profiles = [
        np.asarray(spectral.band_energy_profile(img, n)) for img in ds.images
    ]
    hb = [spectral.high_band_mass(p, n) for p in profiles]
    pairs = ds.pair_indices()
    fake_higher = sum(1 for ri, fi in pairs if hb[fi] > hb[ri])
    real_idx = ds.indices(label=0)
    fake_idx = ds.indices(label=1)
    mean_profile = lambda idx: np.mean([profiles[i] for i in idx], axis=0)
    return {
        "pairs": len(pairs),
        "fake_higher": int(fake_higher),
        "fraction_fake_higher": fake_higher / len(pairs),
        "mean_high_band_real": float(np.mean([hb[i] for i in real_idx])),
        "mean_high_band_fake": float(np.mean([hb[i] for i in fake_idx])),
        "mean_profile_real": [float(v) for v in mean_profile(real_idx)],
        "mean_profile_fake": [float(v) for v in mean_profile(fake_idx)],
    }


def _stat_block(values: list) -> dict:
    if not values:
        return {"n": 0, "median": None, "mean": None, "values": []}
    arr = np.asarray(values, dtype=np.float64)
    return {
        "n": int(arr.size),
        "median": float(np.median(arr)),
        "mean": float(arr.mean()),
        "values": [float(v) for v in arr],
    }


def evaluate(cfg: ExperimentConfig, ds: LabeledDataset, model_roster: dict,
             pool: list, attack_data: dict, train_summary: dict) -> dict:
    """Assemble the full report dict from trained models and attack outputs."""
    model_names = list(model_roster)
    primary = cfg.primary

    transfer = {}
    attack_stats = {}
    for attack_name, per_model in attack_data.items():
        successes = np.zeros((len(model_names), len(model_names)), dtype=np.int64)
        errors = {}
        stats = {}
        for si, sname in enumerate(model_names):
            cell = per_model[sname]
            if "error" in cell:
                errors[sname] = cell["error"]
                continue
            advs = cell["advs"]
            for ti, tname in enumerate(model_names):
                tmodel = model_roster[tname]
                successes[si, ti] = sum(
                    1 for k in range(advs.shape[0])
                    if tmodel.predict(advs[k]) != 1
                )
            recs = cell["records"]
            stats[sname] = {
                "successes": int(sum(r["success"] for r in recs)),
                "attempts": len(recs),
                "rate": sum(r["success"] for r in recs) / len(recs),
                "mean_iterations": float(np.mean([r["iterations_used"] for r in recs])),
                "mean_grad_calls": float(np.mean([r["grad_calls"] for r in recs])),
                "total_grad_calls": int(sum(r["grad_calls"] for r in recs)),
            }
        transfer[attack_name] = {
            "sources": model_names,
            "targets": model_names,
            "attempts": len(pool),
            "successes": [[int(v) for v in row] for row in successes],
            "rates": [[int(v) / len(pool) for v in row] for row in successes],
            "errors": errors,
        }
        attack_stats[attack_name] = stats

    variants = {"model": primary, "rows": {}}
    pi = model_names.index(primary)
    for attack_name in attack_data:
        t = transfer[attack_name]
        if primary in t["errors"]:
            variants["rows"][attack_name] = {"error": t["errors"][primary]}
        else:
            variants["rows"][attack_name] = {
                "successes": t["successes"][pi][pi],
                "attempts": t["attempts"],
                "rate": t["rates"][pi][pi],
            }

    quality = {"model": primary, "rows": {}}
    for attack_name, per_model in attack_data.items():
        cell = per_model[primary]
        if "error" in cell:
            quality["rows"][attack_name] = {"error": cell["error"]}
            continue
        mses, psnrs, ssims, indices = [], [], [], []
        for k, rec in enumerate(cell["records"]):
            if not rec["success"]:
                continue
            init = ds.images[rec["dataset_index"]]
            adv = cell["advs"][k]
            mses.append(metrics.mse(init, adv))
            psnrs.append(metrics.psnr(init, adv))
            ssims.append(metrics.ssim(init, adv))
            indices.append(int(rec["dataset_index"]))
        quality["rows"][attack_name] = {
            "attempts": len(cell["records"]),
            "n_success": len(indices),
            "dataset_indices": indices,
            "mse": _stat_block(mses),
            "psnr": _stat_block(psnrs),
            "ssim": _stat_block(ssims),
        }

    band_rows = {}
    n_band = min(cfg.band_ablation_images, len(pool))
    if n_band > 0 and "frequency" in cfg.attacks:
        base_cfg = cfg.attacks["frequency"]
        pmodel = model_roster[primary]
        for band in BAND_ABLATION_BANDS:
            bcfg = dataclasses.replace(base_cfg, band=band)
            succ = 0
            psnrs = []
            for k in range(n_band):
                img = ds.images[pool[k]]
                res = attacks_mod.frequency_attack(
                    pmodel, img, 1,
                    dataclasses.replace(bcfg, seed=bcfg.seed + k),
                )
                if res.success:
                    succ += 1
                    psnrs.append(metrics.psnr(img, res.adv))
            band_rows[band] = {
                "successes": int(succ),
                "attempts": int(n_band),
                "rate": succ / n_band,
                "median_psnr_success": (
                    float(np.median(psnrs)) if psnrs else None
                ),
            }
    band_ablation = {
        "model": primary,
        "attack": "frequency",
        "images": int(n_band),
        "rows": band_rows,
    }

    return {
        "version": __version__,
        "timestamp": time.time(),
        "backend": _kernels.backend(),
        "provenance": {
            "config": experiment_config_to_dict(cfg, include_out=False),
            "config_hash": config_hash(cfg),
            "amplification": float(cfg.amplification),
        },
        "dataset": {
            "n_images": len(ds),
            "n_train": len(ds.indices(split="train")),
            "n_eval": len(ds.indices(split="eval")),
            "image_size": ds.config.image_size,
            "channels": ds.config.channels,
            "block_size": ds.config.block_size,
            "band_energy": _band_energy_section(ds),
        },
        "models": train_summary,
        "pool": {
            "indices": [int(i) for i in pool],
            "size": len(pool),
        },
        "transfer": transfer,
        "attack_stats": attack_stats,
        "variants": variants,
        "band_ablation": band_ablation,
        "quality": quality,
    }


# ---------------------------------------------------------------------------
# report object and rendering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentReport:
    data: dict

    def to_json(self) -> str:
        return _canonical_json(self.data)

    def content_hash(self) -> str:
        """Hash over everything except the timestamp."""
        trimmed = {k: v for k, v in self.data.items() if k != "timestamp"}
        return hashlib.sha256(_canonical_json(trimmed).encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "ExperimentReport":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))


def _fmt_rate(cell: dict) -> str:
    if "error" in cell:
        return "ERR"
    return f"{cell['rate']:.3f} ({cell['successes']}/{cell['attempts']})"


def report_to_text(report: ExperimentReport) -> str:
    d = report.data
    lines = []
    lines.append(f"freqadv report (version {d['version']}, backend {d['backend']})")
    lines.append(f"config hash: {d['provenance']['config_hash']}")
    ds = d["dataset"]
    lines.append(
        f"dataset: {ds['n_images']} images ({ds['n_train']} train / "
        f"{ds['n_eval']} eval), {ds['image_size']}x{ds['image_size']}x"
        f"{ds['channels']}, block {ds['block_size']}"
    )
    be = ds["band_energy"]
    lines.append(
        f"high-band energy: fake > real in {be['fake_higher']}/{be['pairs']} pairs "
        f"(mean fake {be['mean_high_band_fake']:.6f} vs real "
        f"{be['mean_high_band_real']:.6f})"
    )
    lines.append("")
    lines.append("models (clean accuracy)")
    for name, m in d["models"].items():
        tr, ev = m["accuracy"]["train"], m["accuracy"]["eval"]
        lines.append(
            f"  {name:10s} {m['kind']:6s} train {tr['accuracy']:.3f} "
            f"({tr['correct']}/{tr['total']})  eval {ev['accuracy']:.3f} "
            f"({ev['correct']}/{ev['total']})  final loss {m['final_loss']:.4g}"
        )
    lines.append("")
    lines.append(f"attack pool: {d['pool']['size']} images")
    for attack, t in d["transfer"].items():
        lines.append("")
        lines.append(f"transfer matrix: {attack} (rows=source, cols=target, "
                     f"n={t['attempts']})")
        header = "  " + " " * 12 + "  ".join(f"{n:>10s}" for n in t["targets"])
        lines.append(header)
        for si, sname in enumerate(t["sources"]):
            if sname in t["errors"]:
                lines.append(f"  {sname:12s}ERR: {t['errors'][sname]}")
                continue
            row = "  ".join(f"{t['rates'][si][ti]:10.3f}"
                            for ti in range(len(t["targets"])))
            lines.append(f"  {sname:12s}{row}")
    lines.append("")
    v = d["variants"]
    lines.append(f"attack variants, white-box on {v['model']}")
    for attack, cell in v["rows"].items():
        lines.append(f"  {attack:12s}{_fmt_rate(cell)}")
    lines.append("")
    b = d["band_ablation"]
    lines.append(
        f"band ablation: frequency attack on {b['model']}, {b['images']} images"
    )
    for band, cell in b["rows"].items():
        med = cell["median_psnr_success"]
        med_s = "n/a" if med is None else f"{med:.2f} dB"
        lines.append(f"  {band:8s}{_fmt_rate(cell)}  median PSNR {med_s}")
    lines.append("")
    q = d["quality"]
    lines.append(f"quality on successful examples, source {q['model']}")
    lines.append(f"  {'attack':12s}{'n':>5s}{'MSE med':>12s}{'PSNR med':>12s}"
                 f"{'SSIM med':>12s}")
    for attack, row in q["rows"].items():
        if "error" in row:
            lines.append(f"  {attack:12s}  ERR")
            continue
        if row["n_success"] == 0:
            lines.append(f"  {attack:12s}{0:5d}{'n/a':>12s}{'n/a':>12s}{'n/a':>12s}")
            continue
        lines.append(
            f"  {attack:12s}{row['n_success']:5d}"
            f"{row['mse']['median']:12.6f}"
            f"{row['psnr']['median']:12.2f}"
            f"{row['ssim']['median']:12.4f}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# artifact writing and orchestration
# ---------------------------------------------------------------------------

def _merge_timings(out_dir, fragment: dict) -> None:
    path = os.path.join(out_dir, TIMINGS_FILE)
    data = {}
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    data.update(fragment)
    data["timestamp"] = time.time()
    data["total_s"] = sum(
        v for k, v in data.items()
        if k.endswith("_s") and k != "total_s" and isinstance(v, (int, float))
    ) + sum(
        cell["seconds"]
        for per_model in data.get("attacks", {}).values()
        for cell in per_model.values()
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_canonical_json(data))


def write_triplets(cfg: ExperimentConfig, ds: LabeledDataset, attack_data: dict,
                   out_dir) -> None:
    """Dump (init, adv, amplified diff) PNG triplets for the primary model."""
    if cfg.triplet_dumps == 0:
        return
    root = os.path.join(out_dir, TRIPLETS_DIR)
    entries = []
    for attack_name, per_model in attack_data.items():
        cell = per_model.get(cfg.primary, {})
        if "error" in cell or not cell:
            continue
        adir = os.path.join(root, attack_name)
        os.makedirs(adir, exist_ok=True)
        written = 0
        for k, rec in enumerate(cell["records"]):
            if not rec["success"]:
                continue
            init = ds.images[rec["dataset_index"]].data
            adv = cell["advs"][k]
            diff = np.clip(0.5 + cfg.amplification * (adv - init), 0.0, 1.0)
            for tag, arr in (("init", init), ("adv", adv), ("diff", diff)):
                save_png(Image(np.clip(arr, 0.0, 1.0)),
                         os.path.join(adir, f"{written:02d}_{tag}.png"))
            entries.append({
                "attack": attack_name,
                "index": written,
                "filename": rec["filename"],
            })
            written += 1
            if written >= cfg.triplet_dumps:
                break
    os.makedirs(root, exist_ok=True)
    with open(os.path.join(root, "meta.json"), "w", encoding="utf-8") as fh:
        fh.write(_canonical_json({
            "amplification": float(cfg.amplification),
            "entries": entries,
        }))


def stage_gen_data(cfg: ExperimentConfig, out_dir) -> LabeledDataset:
    t0 = time.perf_counter()
    ds = generate_dataset(cfg.dataset)
    os.makedirs(out_dir, exist_ok=True)
    save_dataset(ds, os.path.join(out_dir, DATASET_DIR))
    _merge_timings(out_dir, {"generate_s": time.perf_counter() - t0})
    return ds


def stage_train(cfg: ExperimentConfig, out_dir, ds: LabeledDataset | None = None):
    if ds is None:
        ds = load_dataset(os.path.join(out_dir, DATASET_DIR))
    t0 = time.perf_counter()
    trained, summary = train_models(cfg, ds)
    mdir = os.path.join(out_dir, MODELS_DIR)
    os.makedirs(mdir, exist_ok=True)
    for name, model in trained.items():
        models_mod.save_checkpoint(model, os.path.join(mdir, f"{name}.ckpt"))
    with open(os.path.join(mdir, TRAIN_SUMMARY_FILE), "w", encoding="utf-8") as fh:
        fh.write(_canonical_json(summary))
    _merge_timings(out_dir, {"train_s": time.perf_counter() - t0})
    return trained, summary


def load_models(cfg: ExperimentConfig, out_dir) -> dict:
    mdir = os.path.join(out_dir, MODELS_DIR)
    roster = {}
    for mc in cfg.models:
        path = os.path.join(mdir, f"{mc.name}.ckpt")
        if not os.path.exists(path):
            raise FileNotFoundError(f"no checkpoint for model {mc.name!r} at {path}")
        model = models_mod.load_checkpoint(path)
        expected = {"linear": 1, "cnn": 2}[mc.kind]
        if model.kind != expected:
            raise ConfigError(
                f"checkpoint {path} holds kind {model.kind}, config says {mc.kind}"
            )
        roster[mc.name] = model
    return roster


def load_train_summary(out_dir) -> dict:
    path = os.path.join(out_dir, MODELS_DIR, TRAIN_SUMMARY_FILE)
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def stage_attack(cfg: ExperimentConfig, out_dir, ds=None, model_roster=None):
    if ds is None:
        ds = load_dataset(os.path.join(out_dir, DATASET_DIR))
    if model_roster is None:
        model_roster = load_models(cfg, out_dir)
    pool = select_attack_pool(model_roster, ds)
    attack_data, timings = run_attacks(cfg, model_roster, ds, pool)
    save_attack_stage(out_dir, pool, ds, attack_data)
    _merge_timings(out_dir, {"attacks": timings})
    return pool, attack_data


def stage_evaluate(cfg: ExperimentConfig, out_dir, ds=None, model_roster=None,
                   pool=None, attack_data=None, train_summary=None) -> ExperimentReport:
    if ds is None:
        ds = load_dataset(os.path.join(out_dir, DATASET_DIR))
    if model_roster is None:
        model_roster = load_models(cfg, out_dir)
    if train_summary is None:
        train_summary = load_train_summary(out_dir)
    if pool is None or attack_data is None:
        pool, attack_data = load_attack_stage(out_dir, cfg)
    t0 = time.perf_counter()
    data = evaluate(cfg, ds, model_roster, pool, attack_data, train_summary)
    report = ExperimentReport(data)
    report.save(os.path.join(out_dir, REPORT_FILE))
    write_triplets(cfg, ds, attack_data, out_dir)
    _merge_timings(out_dir, {"evaluate_s": time.perf_counter() - t0})
    return report


def run_experiment_detailed(cfg: ExperimentConfig):
    """Full experiment; returns (report, artifacts dict). Artifacts are only
    written when cfg.out_dir is set, but the report is always produced."""
    out = cfg.out_dir
    if out:
        os.makedirs(out, exist_ok=True)
        ds = stage_gen_data(cfg, out)
        model_roster, train_summary = stage_train(cfg, out, ds=ds)
        pool, attack_data = stage_attack(cfg, out, ds=ds, model_roster=model_roster)
        report = stage_evaluate(
            cfg, out, ds=ds, model_roster=model_roster, pool=pool,
            attack_data=attack_data, train_summary=train_summary,
        )
    else:
        ds = generate_dataset(cfg.dataset)
        model_roster, train_summary = train_models(cfg, ds)
        pool = select_attack_pool(model_roster, ds)
        attack_data, _ = run_attacks(cfg, model_roster, ds, pool)
        report = ExperimentReport(
            evaluate(cfg, ds, model_roster, pool, attack_data, train_summary)
        )
    return report, {
        "dataset": ds,
        "models": model_roster,
        "train_summary": train_summary,
        "pool": pool,
        "attack_data": attack_data,
    }


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    return run_experiment_detailed(cfg)[0]
