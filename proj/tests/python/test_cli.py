# SPDX-License-Identifier: Apache-2.0
# Copyright 2026 The evkit Authors

import os
import subprocess

import pytest

CLI = os.environ.get("EVKIT_CLI")
pytestmark = pytest.mark.skipif(not CLI, reason="EVKIT_CLI not set")


def run(*args):
    return subprocess.run([CLI, *args], capture_output=True, text=True)


def test_help_lists_subcommands_and_exit_codes():
    r = run("--help")
    assert r.returncode == 0
    for sub in ("synth", "preprocess", "train", "embed", "evaluate"):
        assert sub in r.stdout
    assert "Exit codes" in r.stdout


def test_missing_required_option_is_usage_error():
    r = run("synth")
    assert r.returncode == 2
    assert "--out" in r.stderr


def test_bad_config_is_usage_error(tmp_path):
    cfg = tmp_path / "train.conf"
    cfg.write_text("learning_rate = fast\n")
    r = run("train", "--config", str(cfg), "--frames", str(tmp_path / "frames.csv"),
            "--out-checkpoint", str(tmp_path / "m.evck"))
    assert r.returncode == 2
    assert "learning_rate" in r.stderr


def test_missing_input_is_io_error(tmp_path):
    r = run("preprocess", "--manifest", str(tmp_path / "absent.csv"), "--out", str(tmp_path / "f"))
    assert r.returncode == 3


def test_synth_rerun_reports_unchanged_corpus(tmp_path):
    cfg = tmp_path / "corpus.conf"
    cfg.write_text("n_speakers = 3\nutterances_per_cell = 1\nduration_s = 1.5\n")
    first = run("synth", "--config", str(cfg), "--out", str(tmp_path / "c"))
    assert first.returncode == 0, first.stderr
    assert "files=30" in first.stdout
    second = run("synth", "--config", str(cfg), "--out", str(tmp_path / "c"))
    assert second.returncode == 0
    assert "unchanged=30" in second.stdout
    assert "identical corpus" in second.stdout
