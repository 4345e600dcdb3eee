"""Experiment pipeline: configs, dataset generation, staging, reporting.

The expensive invariant here is that the staged CLI pipeline and the
in-memory monolith produce content-identical reports; everything else runs
on tiny datasets.
"""

import dataclasses
import json
import os

import numpy as np
import pytest

from conftest import micro_config
from freqadv import harness, spectral
from freqadv.errors import ConfigError, DegenerateInput, PreconditionError
from freqadv.harness import (
    DatasetConfig,
    ExperimentConfig,
    ExperimentReport,
    ModelConfig,
    accuracy,
    build_model,
    config_hash,
    config_with_seed,
    default_config,
    experiment_config_from_dict,
    experiment_config_to_dict,
    generate_dataset,
    load_config_file,
    load_dataset,
    load_models,
    report_to_text,
    run_attacks,
    save_dataset,
    select_attack_pool,
)
from freqadv.imaging import load_png
from freqadv.models import LinearSpectralClassifier, TinyCnnClassifier

TINY = DatasetConfig(n_train_pairs=3, n_eval_pairs=2, image_size=16,
                     amplitude=0.25, seed=5)


class _ConstModel:
    def __init__(self, out: int):
        self.out = out

    def predict(self, x) -> int:
        return self.out


class TestConfigValidation:
    @pytest.mark.parametrize("kw", [
        {"n_train_pairs": 0},
        {"n_eval_pairs": 0},
        {"block_size": 2},
        {"image_size": 20},          # not a multiple of block 8
        {"channels": 2},
        {"amplitude": -0.1},
        {"amplitude": float("nan")},
    ])
    def test_dataset_rejects(self, kw):
        with pytest.raises(ConfigError):
            DatasetConfig(**kw)

    @pytest.mark.parametrize("kw", [
        {"name": ""},
        {"kind": "tree"},
        {"epochs": 0},
        {"lr": 0.0},
        {"lr": float("inf")},
        {"batch_size": 0},
    ])
    def test_model_rejects(self, kw):
        base = {"name": "m", "kind": "linear", "epochs": 1, "lr": 0.1}
        with pytest.raises(ConfigError):
            ModelConfig(**{**base, **kw})

    def test_experiment_rejects(self, micro_cfg):
        with pytest.raises(ConfigError, match="roster is empty"):
            dataclasses.replace(micro_cfg, models=())
        with pytest.raises(ConfigError, match="duplicate"):
            dataclasses.replace(micro_cfg,
                                models=micro_cfg.models + micro_cfg.models[:1])
        with pytest.raises(ConfigError, match="attack roster"):
            dataclasses.replace(micro_cfg, attacks={})
        with pytest.raises(ConfigError, match="unknown attack"):
            dataclasses.replace(
                micro_cfg, attacks={"warp": list(micro_cfg.attacks.values())[0]}
            )
        with pytest.raises(ConfigError, match="primary_model"):
            dataclasses.replace(micro_cfg, primary_model="ghost")
        with pytest.raises(ConfigError):
            dataclasses.replace(micro_cfg, band_ablation_images=-1)
        with pytest.raises(ConfigError):
            dataclasses.replace(micro_cfg, amplification=0.0)

    def test_primary_defaults_to_first_model(self, micro_cfg):
        assert micro_cfg.primary == "linear"
        named = dataclasses.replace(micro_cfg, primary_model="cnn")
        assert named.primary == "cnn"


class TestConfigSerde:
    def test_round_trip(self, micro_cfg):
        d = experiment_config_to_dict(micro_cfg)
        assert "out_dir" not in d
        assert experiment_config_from_dict(d) == micro_cfg

    def test_out_dir_included_on_request(self, micro_cfg):
        cfg = dataclasses.replace(micro_cfg, out_dir="/tmp/x")
        d = experiment_config_to_dict(cfg, include_out=True)
        assert d["out_dir"] == "/tmp/x"
        assert experiment_config_from_dict(d) == cfg

    def test_empty_dict_yields_defaults(self):
        assert experiment_config_from_dict({}) == default_config()

    @pytest.mark.parametrize("d,where", [
        ({"bogus": 1}, "experiment config"),
        ({"dataset": {"bogus": 1}}, "dataset config"),
        ({"models": [{"name": "m", "kind": "linear", "epochs": 1,
                      "lr": 0.1, "bogus": 1}]}, "model config"),
        ({"attacks": {"pgd": {"bogus": 1}}}, "attack config"),
    ])
    def test_unknown_keys_rejected_at_every_level(self, d, where):
        with pytest.raises(ConfigError, match=where):
            experiment_config_from_dict(d)

    def test_hash_ignores_out_dir(self, micro_cfg):
        a = dataclasses.replace(micro_cfg, out_dir="/tmp/a")
        b = dataclasses.replace(micro_cfg, out_dir="/tmp/b")
        assert config_hash(a) == config_hash(b)

    def test_hash_sees_everything_else(self, micro_cfg):
        other = dataclasses.replace(
            micro_cfg, dataset=dataclasses.replace(micro_cfg.dataset, seed=6)
        )
        assert config_hash(other) != config_hash(micro_cfg)

    def test_config_with_seed_pattern(self, micro_cfg):
        cfg = config_with_seed(micro_cfg, 42)
        assert cfg.dataset.seed == 42
        assert [m.seed for m in cfg.models] == [1042, 2042]
        assert all(a.seed == 42 for a in cfg.attacks.values())

    def test_load_config_file(self, micro_cfg, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(experiment_config_to_dict(micro_cfg)))
        assert load_config_file(str(path)) == micro_cfg


class TestGenerateDataset:
    def test_deterministic(self):
        assert generate_dataset(TINY) == generate_dataset(TINY)

    def test_structure(self):
        ds = generate_dataset(TINY)
        assert len(ds) == 2 * (3 + 2)
        assert ds.labels == (0, 1) * 5
        assert ds.filenames[0] == "train_real_0000.png"
        assert ds.filenames[1] == "train_fake_0000.png"
        assert ds.filenames[6] == "eval_real_0000.png"
        assert ds.splits == ("train",) * 6 + ("eval",) * 4
        # pair members share a seed; pairs count up from the config seed,
        # train pairs first
        assert ds.seeds == (5, 5, 6, 6, 7, 7, 8, 8, 9, 9)
        assert ds.pair_indices() == [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)]
        assert ds.pair_indices(split="eval") == [(6, 7), (8, 9)]
        assert ds.indices(split="train", label=1) == [1, 3, 5]

    def test_every_fake_has_high_band_excess(self):
        ds = generate_dataset(TINY)
        n = TINY.block_size
        for ri, fi in ds.pair_indices():
            hm_real = spectral.high_band_mass(
                spectral.band_energy_profile(ds.images[ri], n), n)
            hm_fake = spectral.high_band_mass(
                spectral.band_energy_profile(ds.images[fi], n), n)
            assert hm_fake > hm_real

    def test_pixels_are_quantized(self):
        ds = generate_dataset(TINY)
        for img in ds.images:
            assert np.array_equal(img.data, np.round(img.data * 255) / 255)

    def test_negligible_amplitude_rejected(self):
        # noise below the 8-bit quantum cannot survive quantization
        with pytest.raises(DegenerateInput, match="high-band excess"):
            generate_dataset(dataclasses.replace(TINY, amplitude=1e-8))

    def test_zero_amplitude_reproduces_the_real(self):
        ds = generate_dataset(dataclasses.replace(TINY, amplitude=0.0))
        for ri, fi in ds.pair_indices():
            assert np.array_equal(ds.images[ri].data, ds.images[fi].data)


class TestDatasetIo:
    def test_round_trip(self, tmp_path):
        ds = generate_dataset(TINY)
        save_dataset(ds, str(tmp_path))
        assert load_dataset(str(tmp_path)) == ds

    def test_missing_meta_names_path(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="meta.json"):
            load_dataset(str(tmp_path))

    def test_bad_labels_header_rejected(self, tmp_path):
        save_dataset(generate_dataset(TINY), str(tmp_path))
        path = tmp_path / "labels.csv"
        lines = path.read_text().splitlines()
        path.write_text("\n".join(["file,label,seed"] + lines[1:]) + "\n")
        with pytest.raises(ConfigError, match="header"):
            load_dataset(str(tmp_path))


class TestModelsAndPool:
    def test_build_model_kinds(self):
        linear = build_model(
            ModelConfig(name="m", kind="linear", epochs=1, lr=0.1, seed=3), TINY
        )
        cnn = build_model(
            ModelConfig(name="m", kind="cnn", epochs=1, lr=0.1, seed=3), TINY
        )
        assert isinstance(linear, LinearSpectralClassifier)
        assert linear.block_size == TINY.block_size
        assert isinstance(cnn, TinyCnnClassifier)

    def test_accuracy_counts(self):
        ds = generate_dataset(TINY)
        correct, total = accuracy(_ConstModel(1), ds, "eval")
        assert (correct, total) == (2, 4)  # the two eval fakes
        correct, total = accuracy(_ConstModel(0), ds, "train")
        assert (correct, total) == (3, 6)

    def test_pool_is_consensus_fakes(self):
        ds = generate_dataset(TINY)
        assert select_attack_pool({"a": _ConstModel(1)}, ds) == [7, 9]
        assert select_attack_pool(
            {"a": _ConstModel(1), "b": _ConstModel(0)}, ds
        ) == []

    def test_run_attacks_refuses_empty_pool(self, micro_cfg):
        ds = generate_dataset(TINY)
        with pytest.raises(PreconditionError, match="pool is empty"):
            run_attacks(micro_cfg, {"a": _ConstModel(0)}, ds, [])


class TestHelpers:
    def test_stat_block(self):
        assert harness._stat_block([]) == {
            "n": 0, "median": None, "mean": None, "values": [],
        }
        blk = harness._stat_block([3.0, 1.0, 2.0])
        assert blk["n"] == 3 and blk["median"] == 2.0 and blk["mean"] == 2.0
        assert blk["values"] == [3.0, 1.0, 2.0]

    def test_band_energy_section(self):
        sec = harness._band_energy_section(generate_dataset(TINY))
        assert sec["pairs"] == 5
        assert sec["fake_higher"] == 5 and sec["fraction_fake_higher"] == 1.0
        assert sec["mean_high_band_fake"] > sec["mean_high_band_real"]
        assert len(sec["mean_profile_real"]) == 2 * TINY.block_size - 1

    def test_merge_timings_accumulates(self, tmp_path):
        harness._merge_timings(str(tmp_path), {"a_s": 1.0})
        harness._merge_timings(
            str(tmp_path),
            {"b_s": 2.0, "attacks": {"x": {"m": {"seconds": 3.0, "images": 1}}}},
        )
        with open(tmp_path / "timings.json", encoding="utf-8") as fh:
            data = json.load(fh)
        assert data["a_s"] == 1.0 and data["b_s"] == 2.0
        assert data["total_s"] == pytest.approx(6.0)
        assert "timestamp" in data


class TestPipelineEquivalence:
    def test_cli_stages_match_in_memory_monolith(self, micro_monolith, micro_cli):
        from_disk = ExperimentReport.load(
            os.path.join(micro_cli.out_dir, "report.json")
        )
        assert micro_monolith.report.content_hash() == from_disk.content_hash()

    def test_report_internal_consistency(self, micro_monolith):
        d = micro_monolith.report.data
        names = [m.name for m in micro_monolith.cfg.models]
        pool_size = d["pool"]["size"]
        assert pool_size == len(d["pool"]["indices"]) > 0

        for attack, stats in d["attack_stats"].items():
            for model, cell in stats.items():
                assert cell["attempts"] == pool_size
                assert cell["rate"] == cell["successes"] / cell["attempts"]
                assert cell["total_grad_calls"] == pytest.approx(
                    cell["mean_grad_calls"] * cell["attempts"]
                )

        # white-box transfer diagonal is the same count as the per-record
        # success tally, and the variants table quotes that diagonal
        pi = names.index(d["variants"]["model"])
        for attack, t in d["transfer"].items():
            assert t["attempts"] == pool_size
            for si in range(len(names)):
                for ti in range(len(names)):
                    assert t["rates"][si][ti] == \
                        t["successes"][si][ti] / t["attempts"]
            diag = t["successes"][pi][pi]
            assert d["attack_stats"][attack][names[pi]]["successes"] == diag
            row = d["variants"]["rows"][attack]
            assert row["successes"] == diag and row["attempts"] == pool_size

        for attack, row in d["quality"]["rows"].items():
            assert row["attempts"] == pool_size
            assert row["n_success"] == len(row["dataset_indices"])
            for metric in ("mse", "psnr", "ssim"):
                assert row[metric]["n"] == row["n_success"]

        bands = d["band_ablation"]
        assert bands["images"] == min(
            micro_monolith.cfg.band_ablation_images, pool_size
        )
        for band, row in bands["rows"].items():
            assert row["rate"] == row["successes"] / row["attempts"]

    def test_content_hash_ignores_timestamp_only(self, micro_monolith):
        base = micro_monolith.report
        shifted = ExperimentReport({**base.data, "timestamp": 0.0})
        assert shifted.content_hash() == base.content_hash()
        renamed = ExperimentReport({**base.data, "version": "0.0.0"})
        assert renamed.content_hash() != base.content_hash()

    def test_report_save_load_round_trip(self, micro_monolith, tmp_path):
        path = str(tmp_path / "r.json")
        micro_monolith.report.save(path)
        assert ExperimentReport.load(path).content_hash() == \
            micro_monolith.report.content_hash()

    def test_report_text_rendering(self, micro_monolith):
        text = report_to_text(micro_monolith.report)
        assert text.startswith("freqadv report")
        for needle in ("linear", "cnn", "transfer matrix: pgd",
                       "band ablation", "quality on successful"):
            assert needle in text

    def test_timings_file(self, micro_cli):
        with open(os.path.join(micro_cli.out_dir, "timings.json"),
                  encoding="utf-8") as fh:
            data = json.load(fh)
        for key in ("generate_s", "train_s", "attacks", "evaluate_s", "total_s"):
            assert key in data
        expected = sum(
            v for k, v in data.items()
            if k.endswith("_s") and k != "total_s"
        ) + sum(
            cell["seconds"]
            for per_model in data["attacks"].values()
            for cell in per_model.values()
        )
        assert data["total_s"] == pytest.approx(expected, rel=1e-9)

    def test_triplet_dumps(self, micro_cli):
        root = os.path.join(micro_cli.out_dir, "triplets")
        with open(os.path.join(root, "meta.json"), encoding="utf-8") as fh:
            meta = json.load(fh)
        assert meta["amplification"] == micro_cli.cfg.amplification
        assert meta["entries"], "expected at least one successful attack dump"
        per_attack: dict = {}
        for entry in meta["entries"]:
            per_attack[entry["attack"]] = per_attack.get(entry["attack"], 0) + 1
            stem = os.path.join(root, entry["attack"], f"{entry['index']:02d}")
            init = load_png(stem + "_init.png").data
            adv = load_png(stem + "_adv.png").data
            diff = load_png(stem + "_diff.png").data
            want = np.clip(0.5 + micro_cli.cfg.amplification * (adv - init),
                           0.0, 1.0)
            # adv and diff each went through 8-bit quantization
            assert np.abs(diff - want).max() <= \
                (micro_cli.cfg.amplification + 1.0) / 510 + 1e-12
        assert all(v <= micro_cli.cfg.triplet_dumps
                   for v in per_attack.values())

    def test_load_models_checks_kind(self, micro_cli):
        swapped = dataclasses.replace(
            micro_cli.cfg,
            models=(dataclasses.replace(micro_cli.cfg.models[0], kind="cnn"),),
        )
        with pytest.raises(ConfigError, match="kind"):
            load_models(swapped, micro_cli.out_dir)

    def test_load_models_missing_checkpoint(self, micro_cli, tmp_path):
        with pytest.raises(FileNotFoundError, match="ghost"):
            load_models(
                dataclasses.replace(
                    micro_cli.cfg,
                    models=(dataclasses.replace(micro_cli.cfg.models[0],
                                                name="ghost"),),
                ),
                micro_cli.out_dir,
            )
