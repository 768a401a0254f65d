from pathlib import Path

import pytest

from oipharness.instrument import load_item_bank
from oipharness.providers import LatentProfile, MockClient, ProviderParams
from oipharness.runner import ProviderSpec, RunConfig, run_survey

REPO = Path(__file__).resolve().parent.parent
DEMO_CONFIG = REPO / "configs" / "demo.toml"
DEMO_EXPERTS = REPO / "configs" / "expert_ratings_demo.csv"

SAI_HIGH = {"R": 2.4, "I": 3.6, "A": 3.9, "S": 4.1, "E": 2.8, "C": 2.5}


@pytest.fixture(scope="session")
def bank():
    return load_item_bank()


def mock_spec(bank, model_id, interest, competence=None, *, seed=0, noise=0.8, item_sd=0.3, refusal=0.0,
              version="", zh_shift=0.0):
    prof = LatentProfile.from_letters(interest, noise=noise, item_sd=item_sd, refusal=refusal)
    comp = competence if competence is not None else prof
    profiles = {("interest", None): prof, ("competence", None): comp}
    if zh_shift:
        profiles[("interest", "zh")] = prof.shifted(zh_shift)
    return ProviderSpec(ProviderParams(model_id, version), MockClient(profiles, bank, seed=seed))


@pytest.fixture(scope="session")
def small_run(bank, tmp_path_factory):
    """Four mock providers, both languages and modes, three replications."""
    seed = 11
    specs = [
        mock_spec(bank, "m-alpha", SAI_HIGH, seed=seed),
        mock_spec(bank, "m-beta", {**SAI_HIGH, "A": 4.2}, seed=seed, version="1"),
        mock_spec(bank, "m-beta", {**SAI_HIGH, "A": 4.0, "I": 3.8}, seed=seed, version="2", zh_shift=0.6),
        mock_spec(bank, "m-delta", SAI_HIGH,
                  LatentProfile.from_letters(SAI_HIGH, noise=0.8, item_sd=0.3).inverted(), seed=seed),
    ]
    out = tmp_path_factory.mktemp("small") / "run"
    cfg = RunConfig(specs, ("en", "zh"), ("interest", "competence"), replications=3, output_dir=str(out), seed=seed)
    return run_survey(cfg)
