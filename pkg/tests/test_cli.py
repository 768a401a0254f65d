import shutil

import pytest

from oipharness.cli import main

from conftest import DEMO_CONFIG, DEMO_EXPERTS


@pytest.fixture()
def small_config(tmp_path):
    text = DEMO_CONFIG.read_text().replace("replications = 20", "replications = 2")
    cfg = tmp_path / "study.toml"
    cfg.write_text(text)
    shutil.copy(DEMO_EXPERTS, tmp_path / DEMO_EXPERTS.name)
    return cfg


@pytest.fixture()
def ran(small_config, tmp_path):
    out = tmp_path / "art"
    assert main(["run", "--config", str(small_config), "--out", str(out)]) == 0
    return small_config, out


def test_run_score_analyze(ran, capsys):
    cfg, out = ran
    assert (out / "manifest.json").is_file()
    assert len((out / "records.jsonl").read_text().splitlines()) == 4 * 2 * 2 * 60 * 2
    assert main(["score", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "reports" / "scores" / "codes.csv").is_file()
    assert main(["analyze", "--config", str(cfg), "--out", str(out)]) == 0
    for name in ("riasec_by_llm", "language_effect", "version_effect", "interest_vs_competence"):
        assert (out / "reports" / name / "report.md").is_file()
    assert (out / "reports" / "interest_vs_competence" / "correlations.csv").is_file()


def test_analyze_single_pipeline_and_format(ran, tmp_path):
    cfg, out = ran
    rep = tmp_path / "rep"
    code = main(["analyze", "--config", str(cfg), "--out", str(out), "--pipeline", "riasec",
                 "--format", "csv", "--reports", str(rep)])
    assert code == 0
    files = sorted(p.name for p in (rep / "riasec_by_llm").iterdir())
    assert files and all(f.endswith(".csv") for f in files)
    assert main(["analyze", "--config", str(cfg), "--out", str(out), "--format", "pdf"]) == 2


def test_analyze_incomplete_names_cells(ran, capsys):
    cfg, out = ran
    lines = (out / "records.jsonl").read_text().splitlines(keepends=True)
    (out / "records.jsonl").write_text("".join(lines[:-5]))
    capsys.readouterr()
    assert main(["analyze", "--config", str(cfg), "--out", str(out), "--pipeline", "competence"]) == 2
    err = capsys.readouterr().err
    assert "missing" in err and "mock-delta" in err


def test_resume_completes(ran):
    cfg, out = ran
    full = (out / "records.jsonl").read_bytes()
    lines = full.splitlines(keepends=True)
    (out / "records.jsonl").write_bytes(b"".join(lines[:700]))
    assert main(["resume", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "records.jsonl").read_bytes() == full


def test_usage_errors(capsys):
    assert main(["frobnicate"]) == 1
    assert main([]) == 1
    assert main(["validate"]) == 1


def test_validate_demo(capsys):
    assert main(["validate", "--config", str(DEMO_CONFIG), "--offline"]) == 0
    assert "0 errors" in capsys.readouterr().out


def test_validate_short_bank(small_config, tmp_path, capsys):
    from importlib.resources import files
    rows = (files("oipharness") / "data" / "oip_items.csv").read_text(encoding="utf-8").splitlines()
    short = tmp_path / "items.csv"
    short.write_text("\n".join(rows[:-1]) + "\n", encoding="utf-8")
    cfg = small_config.read_text().replace("[run]\n", f'[run]\nitem_bank = "{short.name}"\n')
    small_config.write_text(cfg)
    assert main(["validate", "--config", str(small_config), "--offline"]) == 2
    out = capsys.readouterr()
    assert "1 errors" in out.out
    assert "59" in out.err


def test_validate_missing_env(small_config, monkeypatch, capsys):
    monkeypatch.delenv("OIPH_TEST_KEY_UNSET", raising=False)
    cfg = small_config.read_text() + (
        '\n[[providers]]\nmodel_id = "remote"\nkind = "http"\n'
        '[providers.http]\nurl = "http://127.0.0.1:9/v1/chat"\napi_key_env = "OIPH_TEST_KEY_UNSET"\n')
    small_config.write_text(cfg)
    assert main(["validate", "--config", str(small_config), "--offline"]) == 2
    assert "OIPH_TEST_KEY_UNSET" in capsys.readouterr().err
