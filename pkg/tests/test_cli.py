"""CLI behaviors: exit codes, single-image attack mode, artifact layout.

Most tests drive main() in-process; one subprocess smoke test covers the
module entry point.
"""

import filecmp
import json
import os
import shutil
import subprocess
import sys

import pytest

from freqadv._version import __version__
from freqadv.cli import main


class TestExitCodes:
    def test_version(self, capsys):
        assert main(["--version"]) == 0
        assert __version__ in capsys.readouterr().out

    def test_no_subcommand_prints_help(self, capsys):
        assert main([]) == 2
        assert "gen-data" in capsys.readouterr().out

    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 2

    def test_unknown_flag(self, capsys):
        assert main(["gen-data", "--bogus"]) == 2

    def test_missing_out_dir(self, micro_cli, capsys):
        rc = main(["gen-data", "--config", micro_cli.cfg_path])
        assert rc == 1
        err = capsys.readouterr().err
        assert err.startswith("error:") and "output directory" in err

    def test_missing_config_file(self, tmp_path, capsys):
        rc = main(["gen-data", "--config", str(tmp_path / "nope.json"),
                   "--out", str(tmp_path / "out")])
        assert rc == 1
        assert "nope.json" in capsys.readouterr().err

    def test_malformed_config_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        rc = main(["gen-data", "--config", str(bad),
                   "--out", str(tmp_path / "out")])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error:")


class TestReportCommand:
    def test_prints_stored_report(self, micro_cli, capsys):
        assert main(["report", "--out", micro_cli.out_dir]) == 0
        out = capsys.readouterr().out
        assert out.startswith("freqadv report")
        assert "transfer matrix" in out

    def test_missing_report_file(self, tmp_path, capsys):
        rc = main(["report", "--report", str(tmp_path / "r.json")])
        assert rc == 1
        assert "no report at" in capsys.readouterr().err


class TestSingleImageAttack:
    def _probe(self, micro_cli, tmp_path) -> str:
        src = os.path.join(micro_cli.out_dir, "dataset", "eval_fake_0000.png")
        dst = str(tmp_path / "probe.png")
        shutil.copy(src, dst)
        return dst

    def test_checkpoint_path_with_trace(self, micro_cli, tmp_path, capsys):
        out = str(tmp_path / "single")
        ckpt = os.path.join(micro_cli.out_dir, "models", "linear.ckpt")
        rc = main(["attack", "--config", micro_cli.cfg_path, "--out", out,
                   "--image", self._probe(micro_cli, tmp_path),
                   "--model", ckpt, "--attack", "fgsm", "--trace"])
        assert rc == 0
        assert "fgsm:" in capsys.readouterr().out

        with open(os.path.join(out, "probe_fgsm_record.json"),
                  encoding="utf-8") as fh:
            record = json.load(fh)
        assert record["attack"] == "fgsm" and record["label"] == 1
        assert isinstance(record["success"], bool)
        assert record["iterations_used"] == 1 and record["grad_calls"] == 1
        assert record["adv_png"] == "probe_fgsm_adv.png"
        assert {"mse", "psnr", "ssim", "config"} <= set(record)
        assert os.path.exists(os.path.join(out, "probe_fgsm_adv.png"))

        with open(os.path.join(out, "probe_fgsm_trace.csv"),
                  encoding="utf-8") as fh:
            assert fh.readline().strip() == \
                "iteration,op,phase,loss,max_dev,band_leakage"

    def test_roster_name_resolution(self, micro_cli, tmp_path):
        rc = main(["attack", "--config", micro_cli.cfg_path,
                   "--out", micro_cli.out_dir,
                   "--image", self._probe(micro_cli, tmp_path),
                   "--model", "linear", "--attack", "pgd"])
        assert rc == 0
        assert os.path.exists(
            os.path.join(micro_cli.out_dir, "probe_pgd_adv.png")
        )

    def test_attack_all_runs_whole_roster(self, micro_cli, tmp_path):
        out = str(tmp_path / "all")
        ckpt = os.path.join(micro_cli.out_dir, "models", "linear.ckpt")
        rc = main(["attack", "--config", micro_cli.cfg_path, "--out", out,
                   "--image", self._probe(micro_cli, tmp_path),
                   "--model", ckpt])
        assert rc == 0
        for name in ("fgsm", "pgd", "frequency", "hybrid", "sum"):
            assert os.path.exists(os.path.join(out, f"probe_{name}_adv.png"))

    def test_image_mode_requires_model(self, micro_cli, tmp_path, capsys):
        rc = main(["attack", "--config", micro_cli.cfg_path,
                   "--out", str(tmp_path),
                   "--image", self._probe(micro_cli, tmp_path)])
        assert rc == 1
        assert "needs --model" in capsys.readouterr().err

    def test_attack_must_be_in_roster(self, micro_cli, tmp_path, capsys):
        ckpt = os.path.join(micro_cli.out_dir, "models", "linear.ckpt")
        rc = main(["attack", "--config", micro_cli.cfg_path,
                   "--out", str(tmp_path),
                   "--image", self._probe(micro_cli, tmp_path),
                   "--model", ckpt, "--attack", "warp"])
        assert rc == 1
        assert "not in the configured roster" in capsys.readouterr().err

    def test_unresolvable_model(self, micro_cli, tmp_path, capsys):
        rc = main(["attack", "--config", micro_cli.cfg_path,
                   "--out", str(tmp_path),
                   "--image", self._probe(micro_cli, tmp_path),
                   "--model", "ghost", "--attack", "fgsm"])
        assert rc == 1
        assert "no model checkpoint" in capsys.readouterr().err


class TestSeededGeneration:
    def test_seed_override_is_reproducible(self, micro_cli, tmp_path, capsys):
        dirs = [str(tmp_path / "a"), str(tmp_path / "b")]
        for d in dirs:
            rc = main(["gen-data", "--config", micro_cli.cfg_path,
                       "--seed", "7", "--out", d])
            assert rc == 0
        ds_a, ds_b = (os.path.join(d, "dataset") for d in dirs)
        names = sorted(os.listdir(ds_a))
        assert names == sorted(os.listdir(ds_b))
        match, mismatch, errors = filecmp.cmpfiles(ds_a, ds_b, names,
                                                   shallow=False)
        assert not mismatch and not errors

        with open(os.path.join(ds_a, "meta.json"), encoding="utf-8") as fh:
            assert json.load(fh)["dataset"]["seed"] == 7


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "freqadv.cli", "--version"],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0
    assert __version__ in proc.stdout
