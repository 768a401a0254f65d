"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 provider failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .analysis import (
    AnalysisError,
    analyze_interest_vs_competence,
    analyze_language_effect,
    analyze_riasec_by_llm,
    analyze_version_effect,
    load_expert_ratings,
)
from .config import AnalysisSettings, ConfigError, StudyConfig, load_config
from .instrument import InstrumentError, Language, Mode, load_item_bank, render_prompt
from .providers import ProviderError, complete
from .report import UnsupportedFormat, render_report
from .runner import RunError, load_artifact, resume, run_survey
from .scoring import (
    LETTERS,
    ScoringError,
    aggregate_item_scores,
    category_means,
    holland_code,
    load_occupations,
    match_occupations,
    records_frame,
    replication_scores,
    write_scored_csv,
)
from .stats import StatsError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PROVIDER = 0, 1, 2, 3
PIPELINE_CHOICES = ("riasec", "language", "version", "competence", "all")

log = logging.getLogger("oipharness")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


class _Formatter(logging.Formatter):
    def format(self, record):
        return f"{record.levelname.lower()}: {record.getMessage()}"


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", type=Path, help="study TOML file")
    shared.add_argument("--out", type=Path, help="run artifact directory (overrides the config)")
    shared.add_argument("--seed", type=int, help="seed (overrides the config)")

    p = _Parser(prog="oipharness", description="Administer the 60-item interest profiler to chat models "
                                               "and analyze the responses.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="{run,resume,score,analyze,validate}", parser_class=_Parser)
    sub.required = True
    sub.add_parser("run", parents=[shared], help="start a new run")
    sub.add_parser("resume", parents=[shared], help="fill the missing cells of an interrupted run")
    sc = sub.add_parser("score", parents=[shared], help="item means, category sums and Holland codes")
    sc.add_argument("--reports", type=Path, help="output root (default: <out>/reports)")
    an = sub.add_parser("analyze", parents=[shared], help="fit models and render reports")
    an.add_argument("--pipeline", choices=PIPELINE_CHOICES, default="all")
    an.add_argument("--reports", type=Path, help="output root (default: <out>/reports)")
    an.add_argument("--experts", type=Path, help="expert ratings CSV (rater,item_id,score)")
    an.add_argument("--format", dest="formats", action="append", help="csv, markdown or svg (repeatable)")
    va = sub.add_parser("validate", parents=[shared], help="check config, data files and providers")
    va.add_argument("--offline", action="store_true", help="skip provider reachability probes")
    return p


def _study(args) -> StudyConfig:
    if args.config is None:
        raise UsageError(f"{args.command} requires --config")
    return load_config(args.config, seed=args.seed, output_dir=args.out)


def _artifact_dir(args) -> tuple[Path, Optional[StudyConfig]]:
    study = _study(args) if args.config is not None else None
    if study is not None:
        return Path(study.run.output_dir), study
    if args.out is None:
        raise UsageError(f"{args.command} requires --config or --out")
    return args.out, None


def _report_root(args, artifact_dir: Path, settings: Optional[AnalysisSettings]) -> Path:
    if getattr(args, "reports", None):
        return args.reports
    if settings is not None and settings.reports_dir is not None:
        return settings.reports_dir
    return artifact_dir / "reports"


def _provider_status(artifact) -> int:
    failed = artifact.manifest.get("failed_providers") or {}
    for key, why in failed.items():
        _err(f"provider {key} failed: {why}")
    return EXIT_PROVIDER if failed else EXIT_OK


# ---------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    study = _study(args)
    artifact = run_survey(study.run)
    print(f"wrote {len(artifact.records)} records to {artifact.path}")
    return _provider_status(artifact)


def cmd_resume(args) -> int:
    study = _study(args)
    before = len(load_artifact(study.run.output_dir).records)
    artifact = resume(study.run.output_dir, study.run)
    print(f"appended {len(artifact.records) - before} records; {len(artifact.records)} total in {artifact.path}")
    return _provider_status(artifact)


def cmd_score(args) -> int:
    path, study = _artifact_dir(args)
    artifact = load_artifact(path)
    bank = study.run.bank() if study else load_item_bank()
    occupations = load_occupations(study.analysis.occupations if study else None)
    frame = records_frame(artifact.records, bank)
    items = aggregate_item_scores(frame)
    out = _report_root(args, path, study.analysis if study else None) / "scores"
    out.mkdir(parents=True, exist_ok=True)
    write_scored_csv(items, out / "item_scores.csv")

    lines = ["provider,version,language,mode,replication," + ",".join(LETTERS) + ",missing"]
    for s in replication_scores(frame, bank):
        lines.append(",".join(map(str, s.key)) + "," + ",".join(str(s.sums[c]) for c in LETTERS)
                     + f",{s.missing_count}")
    (out / "category_sums.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    with open(out / "codes.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["provider", "version", "language", "mode", "code", "tie_sets", "occupations", "uncovered"])
        for key, means in category_means(items).items():
            code = holland_code(means)
            m = match_occupations(code, occupations)
            w.writerow(list(key) + [str(code), " ".join(code.to_dict()["tie_sets"]),
                                    "; ".join(m.occupations), " ".join(m.uncovered)])
            print(f"{'/'.join(map(str, key))}: {code}" + ("" if m.occupations else " (uncovered)"))
    n_missing = int(items["missing"].sum())
    if n_missing:
        _warn(f"{n_missing} missing responses excluded from item means")
    print(f"wrote scores to {out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    path, study = _artifact_dir(args)
    settings = study.analysis if study else AnalysisSettings()
    artifact = load_artifact(path)
    bank = study.run.bank() if study else load_item_bank()
    if artifact.manifest["config"].get("item_bank") != bank.fingerprint():
        _warn("artifact was produced with a different item bank than the one loaded")
    occupations = load_occupations(settings.occupations)
    cfg = artifact.manifest["config"]
    languages, modes = cfg["languages"], cfg["modes"]
    formats = tuple(args.formats or settings.formats)
    expert_path = args.experts or settings.expert_ratings
    opts = {"bank": bank, "df_method": settings.df_method, "analysis_mode": settings.analysis_mode}
    wanted = PIPELINE_CHOICES[:-1] if args.pipeline == "all" else (args.pipeline,)
    explicit = args.pipeline != "all"

    def skip(msg):
        if explicit:
            raise AnalysisError(msg)
        _warn(f"skipping: {msg}")

    reports = []
    for name in wanted:
        if name == "riasec":
            lang = settings.language if settings.language in languages else languages[0]
            mode = "interest" if "interest" in modes else modes[0]
            reports.append(analyze_riasec_by_llm(artifact, language=lang, mode=mode, occupations=occupations,
                                                 alpha=settings.alpha, **opts))
        elif name == "language":
            if set(languages) != {"en", "zh"}:
                skip("language pipeline needs both en and zh")
                continue
            reports.append(analyze_language_effect(artifact, mode="interest" if "interest" in modes else modes[0],
                                                   **opts))
        elif name == "version":
            if not settings.version_lines:
                skip("no version_lines configured in [analysis]")
                continue
            for i, line in enumerate(settings.version_lines, start=1):
                rep = analyze_version_effect(artifact, line, occupations=occupations, **opts)
                if len(settings.version_lines) > 1:
                    rep.name = f"{rep.name}_{i}"
                reports.append(rep)
        elif name == "competence":
            if not {"interest", "competence"} <= set(modes):
                skip("competence pipeline needs both interest and competence modes")
                continue
            experts = load_expert_ratings(expert_path, bank) if expert_path else None
            reports.append(analyze_interest_vs_competence(artifact, experts, **opts))

    root = _report_root(args, path, settings)
    for rep in reports:
        for w in rep.warnings:
            _warn(f"{rep.name}: {w}")
        files = render_report(rep, root, formats)
        print(f"{rep.name}: {len(files)} file(s) in {root / rep.name}")
        for row in rep.f_tables.get("anova", []):
            print(f"  {row.term}: F({row.df_num}, {row.df_den:g}) = {row.F:.3f}, p = {row.p_value:.3g}")
    return EXIT_OK


def cmd_validate(args) -> int:
    errors: list[str] = []
    warnings: list[str] = []
    if args.config is None:
        raise UsageError("validate requires --config")
    try:
        study = load_config(args.config, seed=args.seed, output_dir=args.out)
    except (ConfigError, InstrumentError) as exc:
        errors.append(str(exc))
        study = None
    if study is not None:
        bank = study.run.bank()
        print(f"item bank: {len(bank)} items, fingerprint {bank.fingerprint()}")
        try:
            occ = load_occupations(study.analysis.occupations)
            print(f"occupation table: {len(occ.by_code)} codes ({occ.coverage():.0%} of 120)")
            if occ.coverage() < 0.5:
                warnings.append(f"occupation table covers only {len(occ.by_code)} of 120 codes; "
                                "many Holland codes will be reported as uncovered")
        except InstrumentError as exc:
            errors.append(str(exc))
        if study.analysis.expert_ratings is not None:
            try:
                ex = load_expert_ratings(study.analysis.expert_ratings, bank)
                print(f"expert ratings: {len(ex.raters)} rater(s)")
            except InstrumentError as exc:
                errors.append(str(exc))
        probe = bank[0]
        for spec in study.run.providers:
            if spec.kind == "http":
                env = spec.client.endpoint.api_key_env
                if env and not spec.client.environ.get(env):
                    errors.append(f"provider {spec.key}: environment variable {env} is not set")
                    continue
                if args.offline:
                    continue
                try:
                    complete(spec.client, render_prompt(probe, Mode.INTEREST, Language.ENGLISH), spec.params)
                    print(f"provider {spec.key}: reachable")
                except ProviderError as exc:
                    errors.append(f"provider {spec.key}: unreachable ({exc})")
            else:
                print(f"provider {spec.key}: mock")
    for w in warnings:
        _warn(w)
    for e in errors:
        _err(e)
    print(f"{len(errors)} errors, {len(warnings)} warnings")
    return EXIT_DATA if errors else EXIT_OK


COMMANDS = {"run": cmd_run, "resume": cmd_resume, "score": cmd_score, "analyze": cmd_analyze,
            "validate": cmd_validate}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_Formatter())
    root = logging.getLogger("oipharness")
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO if args.verbose else logging.WARNING)
    root.propagate = False
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        _err(str(exc))
        return EXIT_USAGE
    except ProviderError as exc:
        _err(str(exc))
        return EXIT_PROVIDER
    except (ConfigError, InstrumentError, RunError, ScoringError, StatsError, AnalysisError,
            UnsupportedFormat, FileNotFoundError) as exc:
        _err(str(exc))
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
