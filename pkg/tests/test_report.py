import re

import pytest

from oipharness.analysis import AnalysisReport, FigureSpec, analyze_riasec_by_llm
from oipharness.report import UnsupportedFormat, fmt, render_markdown, render_report, render_svg


@pytest.fixture(scope="module")
def riasec(small_run):
    return analyze_riasec_by_llm(small_run)


def test_files_and_emm_schema(riasec, tmp_path):
    paths = render_report(riasec, tmp_path)
    names = {p.name for p in paths}
    assert {"f_tests.csv", "report.md", "codes.csv", "contrasts.csv", "radar_category_emm.svg"} <= names
    emm = (tmp_path / "riasec_by_llm" / "emm_llm_by_category.csv").read_text().splitlines()
    assert emm[0] == "level,estimate,se"
    assert len(emm) == 25
    assert re.fullmatch(r"[^,]+/[RIASEC],[-0-9.e]+,[0-9.e-]+", emm[1])


def test_radar_has_six_axes(riasec):
    spec = next(f for f in riasec.figures if f.kind == "radar")
    assert spec.data["axes"] == list("RIASEC")
    svg = render_svg(spec)
    assert svg.lstrip().startswith("<?xml")
    for letter in "RIASEC":
        assert f">{letter}<" in svg
    assert "<dc:date>" not in svg


def test_rendering_is_byte_stable(riasec, tmp_path):
    a = {p.name: p.read_bytes() for p in render_report(riasec, tmp_path / "a")}
    b = {p.name: p.read_bytes() for p in render_report(riasec, tmp_path / "b")}
    assert a == b


def test_format_subset(riasec, tmp_path):
    paths = render_report(riasec, tmp_path, ["markdown"])
    assert [p.name for p in paths] == ["report.md"]
    with pytest.raises(UnsupportedFormat):
        render_report(riasec, tmp_path, ["pdf"])
    with pytest.raises(UnsupportedFormat):
        render_svg(FigureSpec("pie", "x", "x", {}))


def test_markdown_sections(riasec):
    md = render_markdown(riasec)
    assert md.startswith("# riasec_by_llm")
    assert "(3, 216)" in md and "(5, 216)" in md and "(15, 216)" in md
    assert "## Holland codes" in md


def test_empty_report(tmp_path):
    paths = render_report(AnalysisReport("empty", {}), tmp_path)
    assert (tmp_path / "empty" / "f_tests.csv").read_text() == "table,term,F,df_num,df_den,p_value\n"
    assert len(paths) == 2


def test_fmt():
    assert fmt(0.1 + 0.2) == "0.3"
    assert fmt(3) == "3" and fmt(float("nan")) == "nan" and fmt(None) == "None"
