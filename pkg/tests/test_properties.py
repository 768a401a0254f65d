import numpy as np
import pandas as pd
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from oipharness.analysis import analyze_riasec_by_llm
from oipharness.runner import RunConfig, run_survey
from oipharness.scoring import holland_code
from oipharness.stats import anova_table, build_frame, fit_lmm, pairwise_contrasts

from conftest import SAI_HIGH, mock_spec


def _instance(seed):
    rng = np.random.default_rng(seed)
    n_items = int(rng.integers(4, 9))
    rows = []
    item_eff = rng.normal(0, rng.uniform(0.2, 1.0), n_items * 3)
    for a in ("a0", "a1", "a2"):
        for j in range(n_items * 3):
            b = ("b0", "b1", "b2")[j % 3]
            for r in range(2):
                rows.append((a, b, j, rng.normal(0.3 * (a == "a1") + 0.5 * (b == "b2")) + item_eff[j]))
    return pd.DataFrame(rows, columns=["fa", "fb", "item_id", "value"])


def _stats(df):
    fit = fit_lmm(build_frame(df, ["fa", "fb"], "replication_level"))
    f = [(r.F, r.p_value) for r in anova_table(fit)]
    t = [(c.t, c.p_adjusted) for c in pairwise_contrasts(fit, "fa")]
    return np.array(f), np.array(t)


@settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(0.05, 20.0), b=st.floats(-50.0, 50.0))
def test_affine_invariance(seed, a, b):
    df = _instance(seed)
    f0, t0 = _stats(df)
    f1, t1 = _stats(df.assign(value=a * df["value"] + b))
    np.testing.assert_allclose(f1, f0, rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(t1, t0, rtol=1e-6, atol=1e-9)


@settings(max_examples=300, deadline=None)
@given(means=st.lists(st.integers(1, 8).map(lambda k: k / 2), min_size=6, max_size=6),
       a=st.floats(0.01, 100.0), b=st.floats(-100.0, 100.0))
def test_holland_code_affine_invariance(means, a, b):
    m = dict(zip("RIASEC", means))
    c0 = holland_code(m)
    c1 = holland_code({k: a * v + b for k, v in m.items()})
    assert c1.to_dict() == c0.to_dict()


def test_null_calibration(bank, tmp_path):
    """Identical profiles: the LLM effect should rarely be significant at .01."""
    rejections = 0
    for seed in range(100):
        specs = [mock_spec(bank, f"n{i}", SAI_HIGH, seed=seed) for i in range(3)]
        art = run_survey(RunConfig(specs, ("en",), ("interest",), replications=2,
                                   output_dir=str(tmp_path / f"r{seed}"), seed=seed))
        rep = analyze_riasec_by_llm(art)
        rejections += rep.f_test("llm").p_value < 0.01
    assert rejections <= 5
