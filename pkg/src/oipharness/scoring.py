"""Category scores, item aggregates, Holland codes and occupation lookup."""
from __future__ import annotations

import csv
import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .instrument import LETTERS, RIASEC, Category, ItemBank, MissingFile, SchemaViolation, default_data_path
from .providers import AdministrationRecord

SCORED_COLUMNS = ["provider", "version", "language", "mode", "item_id", "category", "mean", "n", "missing"]
KEY_COLUMNS = ["provider", "version", "language", "mode"]

# relative to the spread of the six means, so ties survive affine rescaling
TIE_RTOL = 1e-9


class ScoringError(Exception):
    pass


class DuplicateItem(ScoringError):
    pass


class EmptyCell(ScoringError):
    pass


@dataclass(frozen=True)
class CategoryScores:
    key: tuple
    sums: dict  # letter -> int
    missing_count: int

    def total(self) -> int:
        return sum(self.sums.values())


def score_replication(records: Iterable[AdministrationRecord], bank: ItemBank, key: tuple = ()) -> CategoryScores:
    """Sum the 1-5 answers per category for one replication's records."""
    sums = {c: 0 for c in LETTERS}
    seen = set()
    missing = 0
    for rec in records:
        if rec.item_id in seen:
            raise DuplicateItem(f"item {rec.item_id} appears twice in replication {key}")
        seen.add(rec.item_id)
        if rec.final_value is None:
            missing += 1
            continue
        sums[bank.by_id(rec.item_id).category.letter] += int(rec.final_value)
    if len(seen) > len(bank):
        raise ScoringError(f"{len(seen)} records for a {len(bank)}-item bank")
    return CategoryScores(key, sums, missing)


def records_frame(records: Iterable[AdministrationRecord], bank: ItemBank) -> pd.DataFrame:
    """Long table, one row per record; ``value`` is NaN where the answer is missing."""
    rows = [
        (r.provider_key, r.model_id, r.version_tag, r.language.value, r.mode.value, r.item_id,
         bank.by_id(r.item_id).category.letter, r.replication_index,
         np.nan if r.final_value is None else float(r.final_value), len(r.attempts))
        for r in records
    ]
    return pd.DataFrame(rows, columns=["provider", "model_id", "version", "language", "mode", "item_id",
                                       "category", "replication", "value", "attempts"])


def replication_scores(frame: pd.DataFrame, bank: ItemBank) -> list[CategoryScores]:
    """CategoryScores for every (provider, version, language, mode, replication)."""
    out = []
    cat = {it.id: it.category.letter for it in bank}
    for key, grp in frame.groupby(KEY_COLUMNS + ["replication"], sort=True):
        if grp["item_id"].duplicated().any():
            raise DuplicateItem(f"duplicate items in replication {key}")
        sums = {c: 0 for c in LETTERS}
        vals = grp.dropna(subset=["value"])
        for item_id, v in zip(vals["item_id"], vals["value"]):
            sums[cat[int(item_id)]] += int(v)
        out.append(CategoryScores(tuple(key), sums, int(grp["value"].isna().sum())))
    return out


def aggregate_item_scores(frame: pd.DataFrame, keys: Optional[Iterable[tuple]] = None) -> pd.DataFrame:
    """Per-item mean over replications for each (provider, version, language, mode).

    Missing answers are excluded from the mean and counted in ``missing``.
    """
    df = frame
    if keys is not None:
        wanted = set(map(tuple, keys))
        mask = [tuple(k) in wanted for k in df[KEY_COLUMNS].itertuples(index=False, name=None)]
        df = df[mask]
    g = df.groupby(KEY_COLUMNS + ["item_id", "category"], sort=True)["value"]
    out = pd.DataFrame({"mean": g.mean(), "n": g.count(), "missing": g.size() - g.count()}).reset_index()
    empty = out[out["n"] == 0]
    if len(empty):
        first = empty.iloc[0]
        raise EmptyCell(f"{len(empty)} item cell(s) with every replication missing, e.g. "
                        f"{first['provider']}/{first['language']}/{first['mode']} item {first['item_id']}")
    out["n"] = out["n"].astype(int)
    out["missing"] = out["missing"].astype(int)
    return out[SCORED_COLUMNS]


def category_means(item_table: pd.DataFrame) -> dict[tuple, dict[str, float]]:
    """Mean of item means per category, keyed by (provider, version, language, mode)."""
    out = {}
    for key, grp in item_table.groupby(KEY_COLUMNS, sort=True):
        m = grp.groupby("category")["mean"].mean()
        out[tuple(key)] = {c: float(m[c]) for c in LETTERS if c in m.index}
    return out


def write_scored_csv(item_table: pd.DataFrame, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    item_table[SCORED_COLUMNS].to_csv(path, index=False, float_format="%.6f", lineterminator="\n")


# ---------------------------------------------------------------------------
# Holland codes


@dataclass(frozen=True)
class HollandCode:
    letters: tuple[str, str, str]
    tie_sets: tuple[tuple[str, ...], ...]
    overflow: tuple[str, ...] = ()   # tied with the last tie set but cut by the three-letter limit
    fully_tied: bool = False

    def __str__(self) -> str:
        return "".join(self.letters)

    @property
    def has_ties(self) -> bool:
        return any(len(t) > 1 for t in self.tie_sets) or bool(self.overflow)

    def candidates(self) -> list[str]:
        """Every three-letter code consistent with the tie structure."""
        parts = []
        for i, ts in enumerate(self.tie_sets):
            pool = ts + self.overflow if i == len(self.tie_sets) - 1 else ts
            parts.append([p for combo in itertools.combinations(pool, len(ts))
                          for p in itertools.permutations(combo)])
        seen: dict[str, None] = {}
        for choice in itertools.product(*parts):
            seen.setdefault("".join(itertools.chain.from_iterable(choice)), None)
        primary = str(self)
        return [primary] + [c for c in seen if c != primary]

    def to_dict(self) -> dict:
        return {"code": str(self), "tie_sets": ["".join(t) for t in self.tie_sets],
                "overflow": "".join(self.overflow), "fully_tied": self.fully_tied}


def holland_code(means: Mapping, equivalence: Optional[Iterable[Iterable]] = None) -> HollandCode:
    """Three highest categories by mean, with ties reported as tie sets.

    Categories tie when their means are equal (up to a tolerance relative to
    the spread of the six means) or when ``equivalence`` places them in one
    group. Within a tie set, letters are shown by mean and then RIASEC order.
    """
    m = {Category.parse(k).letter: float(v) for k, v in means.items()}
    if set(m) != set(LETTERS):
        raise ValueError(f"need means for all six categories, got {sorted(m)}")
    if not all(math.isfinite(v) for v in m.values()):
        raise ValueError("means must be finite")
    order = sorted(LETTERS, key=lambda c: (-m[c], LETTERS.index(c)))
    spread = max(m.values()) - min(m.values())
    tol = TIE_RTOL * spread

    parent = {c: c for c in LETTERS}

    def find(c):
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra

    for a, b in zip(order, order[1:]):
        if m[a] - m[b] <= tol:
            union(a, b)
    for group in equivalence or ():
        group = [Category.parse(g).letter for g in group]
        for g in group[1:]:
            union(group[0], g)

    classes: dict[str, list[str]] = {}
    for c in order:
        classes.setdefault(find(c), []).append(c)
    letters: list[str] = []
    tie_sets: list[tuple[str, ...]] = []
    overflow: tuple[str, ...] = ()
    for members in classes.values():
        need = 3 - len(letters)
        if need <= 0:
            break
        taken = members[:need]
        letters.extend(taken)
        tie_sets.append(tuple(taken))
        overflow = tuple(members[need:])
    return HollandCode(tuple(letters), tuple(tie_sets), overflow, fully_tied=len(classes) == 1)


# ---------------------------------------------------------------------------
# occupations


@dataclass
class OccupationTable:
    by_code: dict[str, list[str]] = field(default_factory=dict)

    def __contains__(self, code: str) -> bool:
        return code in self.by_code

    def coverage(self) -> float:
        """Fraction of the 120 ordered three-letter codes with at least one occupation."""
        return len(self.by_code) / 120.0


def _valid_code(code: str) -> bool:
    return len(code) == 3 and len(set(code)) == 3 and all(c in LETTERS for c in code)


def load_occupations(path=None) -> OccupationTable:
    path = Path(path) if path is not None else default_data_path("occupations.csv")
    if not path.is_file():
        raise MissingFile(f"occupation table not found: {path}")
    table: dict[str, list[str]] = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["code", "occupation"]:
            raise SchemaViolation(f"{path}: header must be code,occupation")
        for lineno, row in enumerate(reader, start=2):
            code = row["code"].strip().upper()
            if not _valid_code(code):
                raise SchemaViolation(f"{path}:{lineno}: invalid RIASEC code {row['code']!r}")
            title = row["occupation"].strip()
            if title and title not in table[code]:
                table[code].append(title)
    return OccupationTable(dict(table))


@dataclass
class OccupationMatch:
    code: str
    occupations: list[str]
    covered: list[str]
    uncovered: list[str]

    @property
    def is_uncovered(self) -> bool:
        return not self.occupations


def match_occupations(code: HollandCode, table: OccupationTable) -> OccupationMatch:
    """Union of occupations over every ordering consistent with the code's ties."""
    titles: list[str] = []
    covered, uncovered = [], []
    for cand in code.candidates():
        if cand in table.by_code:
            covered.append(cand)
            titles.extend(t for t in table.by_code[cand] if t not in titles)
        else:
            uncovered.append(cand)
    return OccupationMatch(str(code), titles, covered, uncovered)
