"""Study configuration: one TOML file describing providers, run settings and analyses.

Relative paths in the file resolve against the file's own directory.

Example::

    [run]
    languages = ["en", "zh"]
    modes = ["interest", "competence"]
    replications = 20
    seed = 7
    output_dir = "runs/demo"

    [analysis]
    expert_ratings = "experts.csv"

    [[providers]]
    model_id = "mock-alpha"
    kind = "mock"
    [providers.mock]
    noise = 0.8
    interest = { R = 2.4, I = 3.5, A = 3.9, S = 4.1, E = 2.8, C = 2.5 }
    competence = "inverted"
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .instrument import Language, Mode, PromptTemplates, load_item_bank
from .providers import EndpointConfig, HttpChatClient, LatentProfile, MockClient, ProviderParams
from .runner import ProviderSpec, RunConfig

PROVIDER_KINDS = ("mock", "http")


class ConfigError(ValueError):
    pass


@dataclass
class AnalysisSettings:
    expert_ratings: Optional[Path] = None
    occupations: Optional[Path] = None
    reports_dir: Optional[Path] = None
    language: str = "en"
    formats: tuple = ("csv", "markdown", "svg")
    df_method: str = "residual"
    analysis_mode: str = "item_aggregated"
    alpha: float = 0.05
    version_lines: list = field(default_factory=list)  # lists of provider keys


@dataclass
class StudyConfig:
    path: Optional[Path]
    run: RunConfig
    analysis: AnalysisSettings
    raw: dict

    @property
    def output_dir(self) -> Path:
        return Path(self.run.output_dir)


def _resolve(base: Path, value) -> Optional[Path]:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def _profile(spec: Any, where: str, common: Mapping, base: Optional[LatentProfile] = None) -> LatentProfile:
    if spec == "inverted":
        if base is None:
            raise ConfigError(f"{where}: 'inverted' needs an interest profile to invert")
        return base.inverted()
    if spec == "same":
        if base is None:
            raise ConfigError(f"{where}: 'same' needs an interest profile")
        return base
    if not isinstance(spec, Mapping):
        raise ConfigError(f"{where}: expected a table of category means, 'same' or 'inverted'")
    try:
        return LatentProfile.from_letters(spec, **common)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _mock_profiles(block: Mapping, where: str) -> dict:
    common = {k: float(block[k]) for k in ("noise", "refusal", "item_sd") if k in block}
    if "interest" not in block:
        raise ConfigError(f"{where}: mock provider needs an 'interest' profile")
    interest = _profile(block["interest"], f"{where}.interest", common)
    competence = _profile(block.get("competence", "same"), f"{where}.competence", common, interest)
    zh_shift = float(block.get("zh_shift", 0.0))
    profiles = {(Mode.INTEREST, None): interest, (Mode.COMPETENCE, None): competence}
    if zh_shift:
        profiles[(Mode.INTEREST, Language.CHINESE)] = interest.shifted(zh_shift)
        profiles[(Mode.COMPETENCE, Language.CHINESE)] = competence.shifted(zh_shift)
    return profiles


def _provider(entry: Mapping, index: int, bank, seed: int, environ: Optional[Mapping]) -> ProviderSpec:
    where = f"providers[{index}]"
    kind = entry.get("kind", "mock")
    if kind not in PROVIDER_KINDS:
        raise ConfigError(f"{where}: unknown kind {kind!r}; expected one of {PROVIDER_KINDS}")
    try:
        params = ProviderParams(
            model_id=str(entry.get("model_id", "")),
            version_tag=str(entry.get("version", "")),
            temperature=float(entry.get("temperature", 1.0)),
            max_attempts=int(entry.get("max_attempts", 10)),
            rate_limit=entry.get("rate_limit"),
            name=str(entry.get("name", "")),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    if kind == "mock":
        block = entry.get("mock", {})
        client = MockClient(_mock_profiles(block, f"{where}.mock"), bank, seed=seed)
        return ProviderSpec(params, client, "mock", dict(block))
    block = dict(entry.get("http", {}))
    if "url" not in block:
        raise ConfigError(f"{where}.http: 'url' is required")
    try:
        endpoint = EndpointConfig(**block)
    except TypeError as exc:
        raise ConfigError(f"{where}.http: {exc}") from exc
    client = HttpChatClient(endpoint, environ=environ, rate_limit=params.rate_limit)
    settings = {k: v for k, v in block.items() if k != "headers"}  # headers may carry secrets
    return ProviderSpec(params, client, "http", settings)


def load_config(path, *, seed: Optional[int] = None, output_dir=None, environ: Optional[Mapping] = None) -> StudyConfig:
    """Parse a study file; ``seed`` and ``output_dir`` override the file's values."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw, path.parent, path=path, seed=seed, output_dir=output_dir, environ=environ)


def config_from_dict(raw: Mapping, base: Path = Path("."), *, path=None, seed=None, output_dir=None,
                     environ: Optional[Mapping] = None, bank=None) -> StudyConfig:
    base = Path(base)
    run = dict(raw.get("run", {}))
    unknown = set(run) - {"languages", "modes", "replications", "seed", "output_dir", "concurrency",
                          "item_bank", "prompts_dir"}
    if unknown:
        raise ConfigError(f"[run]: unknown keys {sorted(unknown)}")
    seed = int(run.get("seed", 0)) if seed is None else int(seed)
    item_bank = _resolve(base, run.get("item_bank"))
    languages = tuple(run.get("languages", ["en"]))
    try:
        languages = tuple(Language.parse(x) for x in languages)
        modes = tuple(Mode(x) for x in run.get("modes", ["interest"]))
    except ValueError as exc:
        raise ConfigError(f"[run]: {exc}") from exc
    if bank is None:
        bank = load_item_bank(item_bank, languages)
    prompts = _resolve(base, run.get("prompts_dir"))
    templates = PromptTemplates.from_directory(prompts) if prompts else None

    entries = raw.get("providers", [])
    if not entries:
        raise ConfigError("no [[providers]] configured")
    providers = [_provider(e, i, bank, seed, environ) for i, e in enumerate(entries)]
    out = output_dir if output_dir is not None else _resolve(base, run.get("output_dir", "run"))
    try:
        run_config = RunConfig(
            providers=providers, languages=languages, modes=modes,
            replications=int(run.get("replications", 20)),
            item_bank=str(item_bank) if item_bank else None,
            output_dir=str(out), seed=seed, concurrency=int(run.get("concurrency", 1)), templates=templates,
        )
    except ValueError as exc:
        raise ConfigError(f"[run]: {exc}") from exc

    a = dict(raw.get("analysis", {}))
    analysis = AnalysisSettings(
        expert_ratings=_resolve(base, a.get("expert_ratings")),
        occupations=_resolve(base, a.get("occupations")),
        reports_dir=_resolve(base, a.get("reports_dir")),
        language=str(a.get("language", languages[0].value)),
        formats=tuple(a.get("formats", ("csv", "markdown", "svg"))),
        df_method=str(a.get("df_method", "residual")),
        analysis_mode=str(a.get("analysis_mode", "item_aggregated")),
        alpha=float(a.get("alpha", 0.05)),
        version_lines=[list(v) for v in a.get("version_lines", [])],
    )
    return StudyConfig(Path(path) if path else None, run_config, analysis, dict(raw))
