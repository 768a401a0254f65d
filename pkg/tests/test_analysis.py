import numpy as np
import pandas as pd
import pytest

from oipharness.analysis import (
    ExpertRatings,
    IncompleteArtifact,
    ModeMissing,
    analyze_interest_vs_competence,
    analyze_language_effect,
    analyze_riasec_by_llm,
    analyze_version_effect,
    load_expert_ratings,
    long_table,
    top_group,
)
from oipharness.instrument import SchemaViolation
from oipharness.stats import pairwise_contrasts

from conftest import DEMO_EXPERTS


def synthetic(providers, languages=("en",), modes=("interest",), reps=1, seed=0, shift=None):
    rng = np.random.default_rng(seed)
    item_eff = rng.normal(0, 0.4, 60)
    shift = shift or {}
    rows = []
    for p in providers:
        for lang in languages:
            for mode in modes:
                for item in range(1, 61):
                    cat = "RIASEC"[(item - 1) // 10]
                    for r in range(1, reps + 1):
                        v = 3.0 + item_eff[item - 1] + shift.get((p, lang, cat), 0.0) + rng.normal(0, 0.8)
                        rows.append((p, lang, mode, item, cat, r, v))
    return pd.DataFrame(rows, columns=["provider", "language", "mode", "item_id", "category", "replication", "value"])


def keys(run):
    return [p["key"] for p in run.providers]


def test_riasec_study_dfs(small_run):
    rep = analyze_riasec_by_llm(small_run, language="en")
    assert rep.model["n_obs"] == 240
    assert (rep.f_test("llm").df_num, rep.f_test("llm").df_den) == (3, 216)
    assert (rep.f_test("category").df_num, rep.f_test("category").df_den) == (5, 216)
    assert (rep.f_test("llm:category").df_num, rep.f_test("llm:category").df_den) == (15, 216)
    assert rep.f_test("category").p_value < 1e-3
    assert len(rep.emm_tables["llm_by_category"]) == 24
    assert len(rep.codes) == 4
    for row in rep.codes:
        assert set(row["code"]) <= set("SAI") or row["overflow"]


def test_single_provider_model(small_run):
    rep = analyze_riasec_by_llm(small_run, [keys(small_run)[0]])
    assert [r.term for r in rep.f_tables["anova"]] == ["category"]
    assert rep.f_test("category").df_den == 60 - 6
    assert any("single provider" in w for w in rep.warnings)


def test_language_effect_recovers_shift(small_run):
    rep = analyze_language_effect(small_run)
    assert (rep.f_test("language").df_num, rep.f_test("language").df_den) == (1, 432)
    assert (rep.f_test("llm:category:language").df_num, rep.f_test("llm:category:language").df_den) == (15, 432)
    by_llm = dict(zip(keys(small_run), rep.contrast_tables["zh_minus_en_by_llm"]))
    shifted = [k for k in by_llm if k.startswith("m-beta") and k.endswith("2")]
    assert len(shifted) == 1
    assert by_llm[shifted[0]].p_unadjusted < 0.01 and by_llm[shifted[0]].estimate > 0.3
    for k, c in by_llm.items():
        if k != shifted[0]:
            assert abs(c.estimate) < 0.3


def test_language_requires_both():
    df = synthetic(["a", "b"], ("en",))
    with pytest.raises(IncompleteArtifact):
        analyze_language_effect(df)


def test_version_study_dfs():
    four = synthetic(["v1", "v2", "v3", "v4"], ("en", "zh"))
    rep = analyze_version_effect(four, ["v1", "v2", "v3", "v4"])
    assert (rep.f_test("version").df_num, rep.f_test("version").df_den) == (3, 432)
    three = synthetic(["v1", "v2", "v3"], ("en", "zh"))
    rep = analyze_version_effect(three, ["v1", "v2", "v3"])
    assert (rep.f_test("version").df_num, rep.f_test("version").df_den) == (2, 324)


def test_identical_versions_are_null():
    df = synthetic(["v1"], ("en", "zh"), seed=4)
    both = pd.concat([df, df.assign(provider="v2")])
    rep = analyze_version_effect(both.assign(replication=1), ["v1", "v2"])
    (c,) = rep.contrast_tables["version_pairs"]
    assert abs(c.estimate) < 1e-10


def test_competence_frame_and_correlations(small_run):
    experts = load_expert_ratings(DEMO_EXPERTS)
    rep = analyze_interest_vs_competence(small_run, experts)
    assert rep.model["n_obs"] == 960
    assert (rep.f_test("mode").df_num, rep.f_test("mode").df_den) == (1, 864)
    corr = dict(rep.correlation_tables["item_level"])
    assert corr["interest~self_competence"].df == 478
    delta = [k for k in keys(small_run) if k.startswith("m-delta")][0]
    assert corr[f"interest~self_competence[{delta}]"].r < -0.3
    alpha = [k for k in keys(small_run) if k.startswith("m-alpha")][0]
    assert corr[f"interest~self_competence[{alpha}]"].r > 0.3
    ex = dict(rep.correlation_tables["expert"])
    assert ex["self_competence~expert"].df == 478


def test_expert_mean_over_raters():
    t = pd.DataFrame({"rater": ["a", "b", "c"], "item_id": [1, 1, 1], "score": [1, 2, 4]})
    assert ExpertRatings(t).item_means() == {1: pytest.approx(7 / 3)}


def test_expert_file_validation(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("rater,item_id,score\na,1,6\n")
    with pytest.raises(SchemaViolation):
        load_expert_ratings(p)


def test_mode_missing():
    with pytest.raises(ModeMissing):
        analyze_interest_vs_competence(synthetic(["a", "b"]))


def test_incomplete_names_cells():
    df = synthetic(["a", "b"])
    df = df[~((df["provider"] == "b") & (df["item_id"] == 7))]
    with pytest.raises(IncompleteArtifact) as e:
        analyze_riasec_by_llm(df)
    assert ("b", "en", "interest", 7) in e.value.missing


def test_incomplete_artifact_replications(small_run):
    from oipharness.runner import RunArtifact
    recs = [r for r in small_run.records if not (r.item_id == 3 and r.replication_index == 2)]
    partial = RunArtifact(small_run.path, small_run.manifest, recs)
    with pytest.raises(IncompleteArtifact) as e:
        analyze_riasec_by_llm(partial)
    assert all(m[3] == 3 and m[4] == 2 for m in e.value.missing)


def test_long_table_from_artifact(small_run):
    df = long_table(small_run)
    assert len(df) == 4 * 2 * 2 * 60 * 3
    assert {"llm", "model_id", "version"} <= set(df.columns)


def test_top_group_greedy():
    df = synthetic(["a"], shift={("a", "en", "S"): 2.0, ("a", "en", "A"): 1.9}, reps=5)
    from oipharness.stats import build_frame, fit_lmm
    fit = fit_lmm(build_frame(df.assign(llm="a"), ["category"]))
    cats = list(fit.frame.levels["category"])
    tk = pairwise_contrasts(fit, "category")
    means = df.groupby("category")["value"].mean()
    order = sorted(cats, key=lambda c: -means[c])
    assert set(top_group(order, cats, tk, 0.05)) == {"S", "A"}
