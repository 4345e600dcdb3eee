"""Shared fixtures.

Two tiers: a full default experiment (plus an identically configured twin)
that takes a couple of minutes and is shared session-wide, and a micro
experiment that keeps pipeline plumbing tests in the seconds range. All
heavy fixtures are session-scoped and lazy, so running a single unit-test
file never pays for the full experiment.
"""

import time
from types import SimpleNamespace

import pytest

from freqadv import _kernels, harness
from freqadv.attacks import AttackConfig
from freqadv.cli import main as cli_main

_ACCEPTANCE: dict[str, str] = {}


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # JIT compilation is a one-time setup cost; timed assertions measure
    # steady state.
    _kernels.warmup()


# ---------------------------------------------------------------------------
# full-size experiment, run at most twice per session
# ---------------------------------------------------------------------------

def _run_default(tmp_path_factory, tag: str) -> SimpleNamespace:
    out = tmp_path_factory.mktemp(tag)
    cfg = harness.default_config(str(out))
    t0 = time.perf_counter()
    report, artifacts = harness.run_experiment_detailed(cfg)
    seconds = time.perf_counter() - t0
    return SimpleNamespace(
        cfg=cfg,
        report=report,
        artifacts=artifacts,
        out_dir=str(out),
        seconds=seconds,
    )


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """Default experiment with artifacts on disk."""
    return _run_default(tmp_path_factory, "default-run")


@pytest.fixture(scope="session")
def twin_run(tmp_path_factory):
    """Second run of the identical config in a fresh directory."""
    return _run_default(tmp_path_factory, "twin-run")


# ---------------------------------------------------------------------------
# micro experiment: 24 images, 16x16, short training, 5-iteration attacks
# ---------------------------------------------------------------------------

def micro_config(out_dir=None) -> harness.ExperimentConfig:
    acfg = AttackConfig(step_freq=0.05, max_iters=5)
    return harness.ExperimentConfig(
        dataset=harness.DatasetConfig(
            n_train_pairs=8, n_eval_pairs=4, image_size=16,
            amplitude=0.25, seed=5,
        ),
        models=(
            harness.ModelConfig(name="linear", kind="linear", epochs=400,
                                lr=0.4, batch_size=16, seed=11),
            harness.ModelConfig(name="cnn", kind="cnn", epochs=300,
                                lr=0.5, batch_size=16, seed=12),
        ),
        attacks={name: acfg for name in
                 ("fgsm", "pgd", "frequency", "hybrid", "sum")},
        out_dir=out_dir,
        band_ablation_images=2,
        triplet_dumps=1,
    )


@pytest.fixture()
def micro_cfg() -> harness.ExperimentConfig:
    return micro_config()


@pytest.fixture(scope="session")
def micro_monolith():
    """Micro experiment run in memory (no artifacts)."""
    report, artifacts = harness.run_experiment_detailed(micro_config())
    return SimpleNamespace(cfg=micro_config(), report=report,
                           artifacts=artifacts)


@pytest.fixture(scope="session")
def micro_cli(tmp_path_factory):
    """Micro experiment run through the CLI stages, artifacts on disk."""
    out = str(tmp_path_factory.mktemp("micro-cli"))
    cfg_path = str(tmp_path_factory.mktemp("micro-cli-cfg") / "cfg.json")
    cfg = micro_config()
    with open(cfg_path, "w", encoding="utf-8") as fh:
        fh.write(harness._canonical_json(
            harness.experiment_config_to_dict(cfg)
        ))
    for stage in ("gen-data", "train", "attack", "evaluate"):
        rc = cli_main([stage, "--config", cfg_path, "--out", out])
        assert rc == 0, f"stage {stage} exited {rc}"
    return SimpleNamespace(cfg=cfg, cfg_path=cfg_path, out_dir=out)


# ---------------------------------------------------------------------------
# acceptance summary: one explicit pass/fail line per criterion
# ---------------------------------------------------------------------------

def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call":
        _ACCEPTANCE[name] = report.outcome
    elif report.when == "setup" and report.outcome != "passed":
        _ACCEPTANCE[name] = f"{report.outcome} (setup)"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        outcome = _ACCEPTANCE[name]
        word = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"{name}: {word}")
