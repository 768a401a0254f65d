"""Canned analyses from a run artifact (or an equivalent long table) to report objects.

Every analysis fits a cell-means model with a random intercept per item,
then reads F tests, marginal means and contrasts off the fit. The returned
:class:`AnalysisReport` holds only result objects and plain numbers copied
from them; rendering lives in :mod:`oipharness.report`.
"""
from __future__ import annotations

import csv
import itertools
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from .instrument import LETTERS, ItemBank, MissingFile, SchemaViolation, load_item_bank
from .runner import RunArtifact
from .scoring import (
    HollandCode,
    OccupationTable,
    aggregate_item_scores,
    holland_code,
    load_occupations,
    match_occupations,
    records_frame,
)
from .stats import (
    ContrastResult,
    CorrelationResult,
    EmmResult,
    FTestResult,
    anova_table,
    build_frame,
    emmeans,
    fit_lmm,
    grouped_contrast,
    pairwise_contrasts,
    pearson,
)

LANGUAGE_ORDER = ("en", "zh")
MODE_ORDER = ("interest", "competence")
LONG_COLUMNS = ("provider", "language", "mode", "item_id", "category", "replication", "value")


class AnalysisError(Exception):
    pass


class IncompleteArtifact(AnalysisError):
    def __init__(self, message: str, missing: Sequence[tuple] = ()):
        super().__init__(message)
        self.missing = list(missing)


class ModeMissing(AnalysisError):
    pass


# ---------------------------------------------------------------------------
# inputs


@dataclass
class ExpertRatings:
    table: pd.DataFrame  # rater, item_id, score

    @property
    def raters(self) -> list[str]:
        return sorted(self.table["rater"].unique())

    def item_means(self) -> dict[int, float]:
        """Unweighted mean over raters for each item."""
        m = self.table.groupby("item_id")["score"].mean()
        return {int(k): float(v) for k, v in m.items()}


def load_expert_ratings(path, bank: Optional[ItemBank] = None) -> ExpertRatings:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"expert ratings not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["rater", "item_id", "score"]:
            raise SchemaViolation(f"{path}: header must be rater,item_id,score")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                item, score = int(row["item_id"]), int(row["score"])
            except (TypeError, ValueError):
                raise SchemaViolation(f"{path}:{lineno}: item_id and score must be integers") from None
            if not 1 <= score <= 5:
                raise SchemaViolation(f"{path}:{lineno}: score {score} outside 1-5")
            if bank is not None and item not in {it.id for it in bank}:
                raise SchemaViolation(f"{path}:{lineno}: unknown item_id {item}")
            rows.append((row["rater"].strip(), item, score))
    table = pd.DataFrame(rows, columns=["rater", "item_id", "score"])
    if table.empty:
        raise SchemaViolation(f"{path}: no ratings")
    dup = table.duplicated(["rater", "item_id"])
    if dup.any():
        r = table[dup].iloc[0]
        raise SchemaViolation(f"{path}: rater {r['rater']!r} rates item {r['item_id']} twice")
    return ExpertRatings(table)


def long_table(source, bank: Optional[ItemBank] = None) -> pd.DataFrame:
    """Normalize a RunArtifact or a long DataFrame to the columns the analyses use."""
    if isinstance(source, RunArtifact):
        df = records_frame(source.records, bank or load_item_bank())
    elif isinstance(source, pd.DataFrame):
        missing = [c for c in LONG_COLUMNS if c not in source.columns]
        if missing:
            raise AnalysisError(f"table lacks columns {missing}")
        df = source.copy()
        if "version" not in df.columns:
            df["version"] = ""
        if "model_id" not in df.columns:
            df["model_id"] = df["provider"]
    else:
        raise TypeError(f"expected RunArtifact or DataFrame, got {type(source).__name__}")
    df["provider"] = df["provider"].astype(str)
    df["llm"] = df["provider"]
    return df


def _provider_order(source, df: pd.DataFrame) -> list[str]:
    if isinstance(source, RunArtifact):
        return [p["key"] for p in source.providers]
    return list(pd.unique(df["provider"]))


def _select(source, df, providers, languages, modes) -> tuple[pd.DataFrame, list[str]]:
    known = _provider_order(source, df)
    providers = list(providers) if providers else known
    unknown = [p for p in providers if p not in known]
    if unknown:
        raise AnalysisError(f"unknown provider(s) {unknown}; artifact has {known}")
    sub = df[df["provider"].isin(providers) & df["language"].isin(languages) & df["mode"].isin(modes)]
    return sub, providers


def _require_complete(source, sub: pd.DataFrame, providers, languages, modes, bank: Optional[ItemBank]) -> None:
    """Every (provider, language, mode, item[, replication]) cell must be present."""
    if isinstance(source, RunArtifact):
        reps = range(1, int(source.manifest["config"]["replications"]) + 1)
        items = [it.id for it in (bank or load_item_bank())]
        have = set(zip(sub["provider"], sub["language"], sub["mode"], sub["item_id"], sub["replication"]))
        want = itertools.product(providers, languages, modes, items, reps)
    else:
        items = sorted(pd.unique(sub["item_id"])) if len(sub) else []
        have = set(zip(sub["provider"], sub["language"], sub["mode"], sub["item_id"]))
        want = itertools.product(providers, languages, modes, items)
    missing = [c for c in want if c not in have]
    if not len(sub):
        raise IncompleteArtifact(
            f"no records for providers {list(providers)}, languages {list(languages)}, modes {list(modes)}")
    if missing:
        shown = ", ".join("/".join(map(str, m)) for m in missing[:5])
        raise IncompleteArtifact(f"{len(missing)} missing cell(s), e.g. {shown}", missing)


# ---------------------------------------------------------------------------
# report objects


@dataclass
class FigureSpec:
    kind: str      # radar | heatmap | bars
    name: str      # file stem
    title: str
    data: dict


@dataclass
class AnalysisReport:
    name: str
    inputs: dict
    model: dict = field(default_factory=dict)
    f_tables: dict = field(default_factory=dict)            # name -> list[FTestResult]
    emm_tables: dict = field(default_factory=dict)          # name -> list[EmmResult]
    contrast_tables: dict = field(default_factory=dict)     # name -> list[ContrastResult]
    correlation_tables: dict = field(default_factory=dict)  # name -> list[(label, CorrelationResult)]
    codes: list = field(default_factory=list)               # per-provider Holland code rows
    figures: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def f_test(self, term: str, table: str = "anova") -> FTestResult:
        for row in self.f_tables[table]:
            if row.term == term:
                return row
        raise KeyError(term)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "inputs": self.inputs,
            "model": self.model,
            "f_tables": {k: [r.to_dict() for r in v] for k, v in self.f_tables.items()},
            "emm_tables": {k: [r.to_dict() for r in v] for k, v in self.emm_tables.items()},
            "contrast_tables": {k: [r.to_dict() for r in v] for k, v in self.contrast_tables.items()},
            "correlation_tables": {k: [{"label": lab, **r.to_dict()} for lab, r in v]
                                   for k, v in self.correlation_tables.items()},
            "codes": self.codes,
            "warnings": self.warnings,
        }


def _fit(sub: pd.DataFrame, factors, levels, analysis_mode: str):
    frame = build_frame(sub, factors, analysis_mode, response="value", group="item_id",
                        levels={f: levels[f] for f in factors if f in levels})
    return fit_lmm(frame)


def _model_summary(fit, df_method: str) -> dict:
    d = fit.to_dict()
    keep = ("factors", "levels", "sigma2", "tau2", "theta", "reml_criterion", "n_obs", "rank_X",
            "n_groups", "df_resid", "analysis_mode")
    return {**{k: d[k] for k in keep}, "df_method": df_method}


def _emm_dict(rows: Iterable[EmmResult], factor: str, **at) -> dict[str, float]:
    out = {}
    for r in rows:
        if all(r.levels.get(k) == v for k, v in at.items()):
            out[r.levels[factor]] = r.estimate
    return out


def top_group(order: Sequence[str], levels: Sequence[str], contrasts: Sequence[ContrastResult],
              alpha: float) -> list[str]:
    """Greedy set of categories, starting from the highest, that no pairwise test separates.

    ``contrasts`` must be the output of :func:`pairwise_contrasts` for
    ``levels`` (same pair order).
    """
    sig = set()
    for (a, b), c in zip(itertools.combinations(levels, 2), contrasts):
        if c.p_adjusted < alpha:
            sig.add(frozenset((a, b)))
    group = [order[0]]
    for cand in order[1:]:
        if all(frozenset((cand, g)) not in sig for g in group):
            group.append(cand)
    return group


def _code_row(label: str, means: dict, occupations: OccupationTable, equivalence=None) -> dict:
    plain = holland_code(means)
    m = match_occupations(plain, occupations)
    row = {"provider": label, "means": {c: means[c] for c in LETTERS}, **plain.to_dict(),
           "occupations": m.occupations, "uncovered": m.uncovered}
    if equivalence and len(equivalence) > 1:
        grouped = holland_code(means, [equivalence])
        gm = match_occupations(grouped, occupations)
        row["grouped"] = {**grouped.to_dict(), "equivalent": list(equivalence),
                          "occupations": gm.occupations, "uncovered": gm.uncovered}
    return row


def replication_codes(sub: pd.DataFrame, by: Sequence[str]) -> dict[tuple, Counter]:
    """Frequency of the per-replication Holland codes (from category sums) per ``by`` key."""
    out: dict[tuple, Counter] = {}
    vals = sub.dropna(subset=["value"])
    sums = vals.groupby(list(by) + ["language", "replication", "category"])["value"].sum().unstack("category")
    for idx, row in sums.iterrows():
        idx = idx if isinstance(idx, tuple) else (idx,)
        key = tuple(idx[:len(by)])
        if row.isna().any():
            continue
        code = holland_code({c: float(row[c]) for c in LETTERS})
        out.setdefault(key, Counter())[str(code)] += 1
    return out


def _pair_heatmap(contrasts_by_row: dict[str, list[ContrastResult]], levels: Sequence[str]) -> dict:
    pairs = [f"{a}-{b}" for a, b in itertools.combinations(levels, 2)]
    return {
        "rows": list(contrasts_by_row),
        "cols": pairs,
        "values": [[c.p_adjusted for c in rows] for rows in contrasts_by_row.values()],
        "value_label": "Tukey-adjusted p",
    }


# ---------------------------------------------------------------------------
# pipelines


def analyze_riasec_by_llm(source, providers: Optional[Sequence[str]] = None, language: str = "en", *,
                          mode: str = "interest", bank: Optional[ItemBank] = None,
                          occupations: Optional[OccupationTable] = None, df_method: str = "residual",
                          analysis_mode: str = "item_aggregated", alpha: float = 0.05) -> AnalysisReport:
    """Category x LLM model for one language: omnibus tests, EMM grid, Tukey pairs, codes."""
    df = long_table(source, bank)
    sub, providers = _select(source, df, providers, [language], [mode])
    _require_complete(source, sub, providers, [language], [mode], bank)
    occupations = occupations or load_occupations()
    multi = len(providers) > 1
    factors = ("llm", "category") if multi else ("category",)
    fit = _fit(sub, factors, {"llm": tuple(providers)}, analysis_mode)

    rep = AnalysisReport("riasec_by_llm", {"providers": list(providers), "language": language, "mode": mode,
                                           "alpha": alpha})
    if not multi:
        rep.warnings.append("single provider: LLM factor dropped, category-only model")
    rep.model = _model_summary(fit, df_method)
    rep.f_tables["anova"] = anova_table(fit, df_method)
    grid = emmeans(fit, factors, df_method=df_method)
    rep.emm_tables["llm_by_category" if multi else "category"] = grid
    if multi:
        rep.emm_tables["category"] = emmeans(fit, ["category"], df_method=df_method)
        rep.emm_tables["llm"] = emmeans(fit, ["llm"], df_method=df_method)

    cats = list(fit.frame.levels["category"])
    tukey_rows, radar = {}, {}
    rep.contrast_tables["top3_vs_bottom3"] = []
    for p in providers:
        within = {"llm": p} if multi else {}
        tukey = pairwise_contrasts(fit, "category", "tukey", within=within, df_method=df_method)
        rep.contrast_tables[f"category_pairs[{p}]"] = tukey
        tukey_rows[p] = tukey
        means = _emm_dict(grid, "category", **within)
        radar[p] = [means[c] for c in cats]
        code = holland_code(means)
        order = [c for c in sorted(cats, key=lambda c: (-means[c], LETTERS.index(c)))]
        group = top_group(order, cats, tukey, alpha)
        rep.codes.append(_code_row(p, means, occupations, group))
        bottom = [c for c in cats if c not in code.letters]
        rep.contrast_tables["top3_vs_bottom3"].append(
            grouped_contrast(fit, "category", list(code.letters), bottom, within=within, df_method=df_method))
    if multi:
        rep.contrast_tables["llm_pairs"] = pairwise_contrasts(fit, "llm", "tukey", df_method=df_method)

    per_rep = replication_codes(sub, ["provider"])
    for row in rep.codes:
        row["replication_codes"] = dict(sorted(per_rep.get((row["provider"],), Counter()).items(),
                                               key=lambda kv: (-kv[1], kv[0])))

    rep.figures.append(FigureSpec("radar", "radar_category_emm", f"Category EMMs by LLM ({language})",
                                  {"axes": cats, "series": radar, "value_label": "EMM"}))
    rep.figures.append(FigureSpec("heatmap", "heatmap_category_pairs", "Tukey-adjusted p, category pairs",
                                  _pair_heatmap(tukey_rows, cats)))
    return rep


def analyze_language_effect(source, providers: Optional[Sequence[str]] = None, *, mode: str = "interest",
                            bank: Optional[ItemBank] = None, df_method: str = "residual",
                            analysis_mode: str = "item_aggregated") -> AnalysisReport:
    """LLM x category x language model with per-LLM Chinese minus English contrasts."""
    df = long_table(source, bank)
    present = set(df["language"])
    if not set(LANGUAGE_ORDER) <= present:
        raise IncompleteArtifact(f"language analysis needs both en and zh; artifact has {sorted(present)}")
    sub, providers = _select(source, df, providers, LANGUAGE_ORDER, [mode])
    _require_complete(source, sub, providers, LANGUAGE_ORDER, [mode], bank)
    multi = len(providers) > 1
    factors = ("llm", "category", "language") if multi else ("category", "language")
    fit = _fit(sub, factors, {"llm": tuple(providers), "language": LANGUAGE_ORDER}, analysis_mode)

    rep = AnalysisReport("language_effect", {"providers": list(providers), "mode": mode})
    rep.model = _model_summary(fit, df_method)
    rep.f_tables["anova"] = anova_table(fit, df_method)
    rep.emm_tables["language"] = emmeans(fit, ["language"], df_method=df_method)
    if multi:
        rep.emm_tables["llm_by_language"] = emmeans(fit, ["llm", "language"], df_method=df_method)
    rep.emm_tables["category_by_language"] = emmeans(fit, ["category", "language"], df_method=df_method)

    overall = grouped_contrast(fit, "language", ["zh"], ["en"], df_method=df_method)
    rep.contrast_tables["zh_minus_en"] = [overall]
    per_llm, by_cat = [], []
    for p in providers:
        within = {"llm": p} if multi else {}
        per_llm.append(grouped_contrast(fit, "language", ["zh"], ["en"], within=within, df_method=df_method))
        for c in fit.frame.levels["category"]:
            by_cat.append(grouped_contrast(fit, "language", ["zh"], ["en"], within={**within, "category": c},
                                           df_method=df_method))
    rep.contrast_tables["zh_minus_en_by_llm"] = per_llm
    rep.contrast_tables["zh_minus_en_by_llm_category"] = by_cat

    rep.figures.append(FigureSpec("bars", "bars_language_difference", "Chinese minus English, by LLM", {
        "groups": list(providers),
        "series": {"zh - en": [c.estimate for c in per_llm]},
        "errors": {"zh - en": [c.se for c in per_llm]},
        "value_label": "difference in mean score",
    }))
    if multi:
        grid = rep.emm_tables["llm_by_language"]
        rep.figures.append(FigureSpec("bars", "bars_language_emm", "EMM by LLM and language", {
            "groups": list(providers),
            "series": {lang: [_emm_dict(grid, "llm", language=lang)[p] for p in providers]
                       for lang in LANGUAGE_ORDER},
            "errors": {lang: [r.se for p in providers for r in grid
                              if r.levels["llm"] == p and r.levels["language"] == lang]
                       for lang in LANGUAGE_ORDER},
            "value_label": "EMM",
        }))
    return rep


def analyze_version_effect(source, providers: Sequence[str], languages: Optional[Sequence[str]] = None, *,
                           mode: str = "interest", bank: Optional[ItemBank] = None,
                           occupations: Optional[OccupationTable] = None, df_method: str = "residual",
                           analysis_mode: str = "item_aggregated") -> AnalysisReport:
    """Version x category (x language) model over a line of versions of one model family."""
    providers = list(providers or [])
    if len(providers) < 2:
        raise AnalysisError("version analysis needs at least two provider versions")
    df = long_table(source, bank)
    languages = tuple(languages) if languages else tuple(x for x in LANGUAGE_ORDER if x in set(df["language"]))
    sub, providers = _select(source, df, providers, languages, [mode])
    _require_complete(source, sub, providers, languages, [mode], bank)
    occupations = occupations or load_occupations()
    sub = sub.assign(version=sub["provider"])
    factors = ("version", "category") + (("language",) if len(languages) > 1 else ())
    fit = _fit(sub, factors, {"version": tuple(providers), "language": languages}, analysis_mode)

    rep = AnalysisReport("version_effect", {"providers": providers, "languages": list(languages), "mode": mode})
    families = sorted(set(sub["model_id"]))
    if len(families) > 1:
        rep.warnings.append(f"versions span several model ids: {families}")
    rep.model = _model_summary(fit, df_method)
    rep.f_tables["anova"] = anova_table(fit, df_method)
    rep.emm_tables["version"] = emmeans(fit, ["version"], df_method=df_method)
    grid = emmeans(fit, ["version", "category"], df_method=df_method)
    rep.emm_tables["version_by_category"] = grid
    rep.contrast_tables["version_pairs"] = pairwise_contrasts(fit, "version", "tukey", df_method=df_method)
    if "language" in factors:
        rep.emm_tables["version_by_language"] = emmeans(fit, ["version", "language"], df_method=df_method)
        for lang in languages:
            rep.contrast_tables[f"version_pairs[{lang}]"] = pairwise_contrasts(
                fit, "version", "tukey", within={"language": lang}, df_method=df_method)
    cats = list(fit.frame.levels["category"])
    radar = {}
    for v in providers:
        means = _emm_dict(grid, "category", version=v)
        radar[v] = [means[c] for c in cats]
        rep.codes.append(_code_row(v, means, occupations))
    rep.figures.append(FigureSpec("radar", "radar_version_emm", "Category EMMs by version",
                                  {"axes": cats, "series": radar, "value_label": "EMM"}))
    return rep


def _item_table(sub: pd.DataFrame) -> pd.DataFrame:
    """One row per (provider, language, item) with interest and competence item means."""
    items = aggregate_item_scores(sub.assign(version=sub["version"].fillna("")))
    wide = items.pivot_table(index=["provider", "language", "item_id", "category"], columns="mode",
                             values="mean", observed=True).reset_index()
    return wide.sort_values(["provider", "language", "item_id"], kind="mergesort").reset_index(drop=True)


def analyze_interest_vs_competence(source, experts: Optional[ExpertRatings] = None,
                                   providers: Optional[Sequence[str]] = None,
                                   languages: Optional[Sequence[str]] = None, *, bank: Optional[ItemBank] = None,
                                   df_method: str = "residual",
                                   analysis_mode: str = "item_aggregated") -> AnalysisReport:
    """Mode factor test plus item-level correlations among interest, self-rated and expert competence."""
    df = long_table(source, bank)
    absent = [m for m in MODE_ORDER if m not in set(df["mode"])]
    if absent:
        raise ModeMissing(f"artifact has no {', '.join(absent)} records")
    languages = tuple(languages) if languages else tuple(x for x in LANGUAGE_ORDER if x in set(df["language"]))
    sub, providers = _select(source, df, providers, languages, MODE_ORDER)
    _require_complete(source, sub, providers, languages, MODE_ORDER, bank)
    multi = len(providers) > 1
    factors = (("llm",) if multi else ()) + ("category", "mode") + (("language",) if len(languages) > 1 else ())
    fit = _fit(sub, factors, {"llm": tuple(providers), "mode": MODE_ORDER, "language": languages}, analysis_mode)

    rep = AnalysisReport("interest_vs_competence", {"providers": list(providers), "languages": list(languages),
                                                    "expert_raters": experts.raters if experts else []})
    rep.model = _model_summary(fit, df_method)
    rep.f_tables["anova"] = anova_table(fit, df_method)
    rep.emm_tables["mode"] = emmeans(fit, ["mode"], df_method=df_method)
    grid = emmeans(fit, ["category", "mode"], df_method=df_method)
    rep.emm_tables["category_by_mode"] = grid
    rep.contrast_tables["competence_minus_interest"] = [
        grouped_contrast(fit, "mode", ["competence"], ["interest"], df_method=df_method)]

    wide = _item_table(sub)
    corr: list[tuple[str, CorrelationResult]] = [
        ("interest~self_competence", pearson(wide["interest"], wide["competence"]))]
    for p in providers:
        w = wide[wide["provider"] == p]
        corr.append((f"interest~self_competence[{p}]", pearson(w["interest"], w["competence"])))
    rep.correlation_tables["item_level"] = corr

    cats = list(fit.frame.levels["category"])
    series = {
        "interest": [_emm_dict(grid, "category", mode="interest")[c] for c in cats],
        "self competence": [_emm_dict(grid, "category", mode="competence")[c] for c in cats],
    }
    errors = {
        "interest": [r.se for c in cats for r in grid if r.levels == {"category": c, "mode": "interest"}],
        "self competence": [r.se for c in cats for r in grid if r.levels == {"category": c, "mode": "competence"}],
    }
    if experts is not None:
        em = experts.item_means()
        lacking = sorted(set(wide["item_id"]) - set(em))
        if lacking:
            raise AnalysisError(f"expert ratings lack items {lacking[:10]}")
        wide["expert"] = wide["item_id"].map(em)
        ex = [("self_competence~expert", pearson(wide["competence"], wide["expert"])),
              ("interest~expert", pearson(wide["interest"], wide["expert"]))]
        for p in providers:
            w = wide[wide["provider"] == p]
            ex.append((f"self_competence~expert[{p}]", pearson(w["competence"], w["expert"])))
            ex.append((f"interest~expert[{p}]", pearson(w["interest"], w["expert"])))
        rep.correlation_tables["expert"] = ex
        cat_of = wide.drop_duplicates("item_id").set_index("item_id")["category"]
        by_cat = pd.Series(em).groupby(cat_of).mean()
        series["expert"] = [float(by_cat[c]) for c in cats]
        errors["expert"] = [0.0] * len(cats)
    rep.figures.append(FigureSpec("bars", "bars_interest_competence", "Interest and competence by category", {
        "groups": cats, "series": series, "errors": errors, "value_label": "mean score",
    }))
    return rep


PIPELINES = ("riasec", "language", "version", "competence")
