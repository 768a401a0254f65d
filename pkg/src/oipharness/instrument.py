"""O*NET Interest Profiler short form: item bank, prompt templates, Likert parsing.

The item bank and the prompt templates are data files so that translations
and wording can be swapped without touching code.
"""
from __future__ import annotations

import csv
import enum
import hashlib
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union

PathLike = Union[str, Path]

ITEM_COUNT = 60
ITEMS_PER_CATEGORY = 10


class InstrumentError(Exception):
    """Base class for item-bank and template problems."""


class MissingFile(InstrumentError):
    pass


class SchemaViolation(InstrumentError):
    pass


class CategoryCountMismatch(InstrumentError):
    def __init__(self, counts: Mapping[str, int]):
        self.counts = dict(counts)
        detail = ", ".join(f"{k}={v}" for k, v in self.counts.items())
        super().__init__(f"expected {ITEMS_PER_CATEGORY} items per category, got {detail}")


class ParseFailure(ValueError):
    """Raised when a raw model reply does not map onto exactly one scale point."""

    def __init__(self, raw: str, reason: str = "unrecognized"):
        self.raw = raw
        self.reason = reason
        super().__init__(f"{reason}: {raw!r}")


class Category(enum.Enum):
    REALISTIC = "R"
    INVESTIGATIVE = "I"
    ARTISTIC = "A"
    SOCIAL = "S"
    ENTERPRISING = "E"
    CONVENTIONAL = "C"

    @property
    def letter(self) -> str:
        return self.value

    @property
    def title(self) -> str:
        return self.name.capitalize()

    @property
    def order(self) -> int:
        return RIASEC.index(self)

    @classmethod
    def parse(cls, value: Union[str, "Category"]) -> "Category":
        if isinstance(value, cls):
            return value
        text = str(value).strip()
        if len(text) == 1:
            return cls(text.upper())
        try:
            return cls[text.upper()]
        except KeyError:
            raise ValueError(f"unknown RIASEC category {value!r}") from None


RIASEC: tuple[Category, ...] = tuple(Category)
LETTERS = "".join(c.letter for c in RIASEC)


class Mode(str, enum.Enum):
    INTEREST = "interest"
    COMPETENCE = "competence"


class Language(str, enum.Enum):
    ENGLISH = "en"
    CHINESE = "zh"

    @classmethod
    def parse(cls, value: Union[str, "Language"]) -> "Language":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        aliases = {"english": "en", "chinese": "zh", "cn": "zh"}
        return cls(aliases.get(text, text))


def _parse_mode(value) -> Mode:
    return value if isinstance(value, Mode) else Mode(str(value).strip().lower())


@dataclass(frozen=True)
class LikertValue:
    numeric: int
    label_en: str
    label_zh: str

    def label(self, language: Language = Language.ENGLISH) -> str:
        return self.label_zh if Language.parse(language) is Language.CHINESE else self.label_en


LIKERT: tuple[LikertValue, ...] = (
    LikertValue(1, "Strongly Dislike", "非常不喜欢"),
    LikertValue(2, "Dislike", "不喜欢"),
    LikertValue(3, "Unsure", "不确定"),
    LikertValue(4, "Like", "喜欢"),
    LikertValue(5, "Strongly Like", "非常喜欢"),
)


def likert(numeric: int) -> LikertValue:
    if not 1 <= numeric <= 5:
        raise ValueError(f"Likert value out of range: {numeric}")
    return LIKERT[numeric - 1]


@dataclass(frozen=True)
class Item:
    id: int
    category: Category
    text_en: str
    text_zh: str

    def text(self, language: Language) -> str:
        return self.text_zh if Language.parse(language) is Language.CHINESE else self.text_en


class ItemBank(Sequence[Item]):
    """Validated, immutable set of the 60 short-form items."""

    def __init__(self, items: Iterable[Item]):
        self._items = tuple(sorted(items, key=lambda it: it.id))
        _validate_items(self._items)
        self._by_id = {it.id: it for it in self._items}

    def __getitem__(self, index):
        return self._items[index]

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[Item]:
        return iter(self._items)

    def by_id(self, item_id: int) -> Item:
        return self._by_id[int(item_id)]

    def in_category(self, category: Category) -> list[Item]:
        return [it for it in self._items if it.category is category]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for it in self._items:
            h.update(f"{it.id}\t{it.category.letter}\t{it.text_en}\t{it.text_zh}\n".encode())
        return h.hexdigest()[:16]


def _validate_items(items: Sequence[Item]) -> None:
    if len(items) != ITEM_COUNT:
        raise SchemaViolation(f"item bank has {len(items)} rows, expected {ITEM_COUNT}")
    ids = [it.id for it in items]
    if ids != list(range(1, ITEM_COUNT + 1)):
        raise SchemaViolation("item ids must be unique and contiguous 1-60")
    counts = Counter(it.category for it in items)
    if any(counts.get(c, 0) != ITEMS_PER_CATEGORY for c in RIASEC):
        raise CategoryCountMismatch({c.title: counts.get(c, 0) for c in RIASEC})


def default_data_path(name: str) -> Path:
    return Path(str(resources.files("oipharness") / "data" / name))


def load_item_bank(path: Optional[PathLike] = None, languages: Iterable = ("en", "zh")) -> ItemBank:
    """Read and validate the item bank CSV (``id,category,text_en,text_zh``).

    Only the text columns of the requested ``languages`` must be nonempty.
    """
    path = Path(path) if path is not None else default_data_path("oip_items.csv")
    if not path.is_file():
        raise MissingFile(f"item bank not found: {path}")
    langs = {Language.parse(x) for x in languages}
    required = ["id", "category", "text_en", "text_zh"]
    items = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != required:
            raise SchemaViolation(f"{path}: header must be {','.join(required)}, got {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                item_id = int(row["id"])
                category = Category.parse(row["category"])
            except (TypeError, ValueError) as exc:
                raise SchemaViolation(f"{path}:{lineno}: {exc}") from None
            text_en = (row["text_en"] or "").strip()
            text_zh = (row["text_zh"] or "").strip()
            for lang, text in ((Language.ENGLISH, text_en), (Language.CHINESE, text_zh)):
                if lang in langs and not text:
                    raise SchemaViolation(f"{path}:{lineno}: empty text_{lang.value} for item {item_id}")
            items.append(Item(item_id, category, text_en, text_zh))
    ids = [it.id for it in items]
    dupes = sorted(i for i, n in Counter(ids).items() if n > 1)
    if dupes:
        raise SchemaViolation(f"{path}: duplicate item ids {dupes}")
    return ItemBank(items)


@dataclass(frozen=True)
class PromptText:
    instruction: str
    item_text: str
    mode: Mode
    language: Language
    item_id: int = 0

    @property
    def text(self) -> str:
        return self.instruction.replace("{item}", self.item_text)

    def __str__(self) -> str:
        return self.text


class PromptTemplates:
    """One template per (mode, language); each holds an ``{item}`` placeholder."""

    def __init__(self, templates: Mapping[tuple, str]):
        self._templates = {}
        for (mode, lang), text in templates.items():
            if "{item}" not in text:
                raise SchemaViolation(f"template for {mode}/{lang} lacks an {{item}} placeholder")
            self._templates[(_parse_mode(mode), Language.parse(lang))] = text

    @classmethod
    def from_directory(cls, directory: Optional[PathLike] = None) -> "PromptTemplates":
        directory = Path(directory) if directory is not None else default_data_path("prompts")
        found = {}
        for mode in Mode:
            for lang in Language:
                path = directory / f"{mode.value}_{lang.value}.txt"
                if path.is_file():
                    found[(mode, lang)] = path.read_text(encoding="utf-8").rstrip("\n")
        if not found:
            raise MissingFile(f"no prompt templates in {directory}")
        return cls(found)

    def get(self, mode: Mode, language: Language) -> str:
        try:
            return self._templates[(_parse_mode(mode), Language.parse(language))]
        except KeyError:
            raise MissingFile(f"no template for {mode}/{language}") from None


_DEFAULT_TEMPLATES: Optional[PromptTemplates] = None


def render_prompt(item: Item, mode, language, templates: Optional[PromptTemplates] = None) -> PromptText:
    global _DEFAULT_TEMPLATES
    if templates is None:
        if _DEFAULT_TEMPLATES is None:
            _DEFAULT_TEMPLATES = PromptTemplates.from_directory()
        templates = _DEFAULT_TEMPLATES
    mode, language = _parse_mode(mode), Language.parse(language)
    return PromptText(templates.get(mode, language), item.text(language), mode, language, item.id)


# Longest labels first so "strongly like" wins over "like" at the same position.
_LABEL_PATTERNS = {
    Language.ENGLISH: re.compile(
        r"\b(strongly dislike|strongly like|dislike|unsure|like)\b", re.IGNORECASE
    ),
    Language.CHINESE: re.compile("(非常不喜欢|非常喜欢|不喜欢|不确定|喜欢)"),
}
_LABEL_VALUES = {
    **{v.label_en.casefold(): v.numeric for v in LIKERT},
    **{v.label_zh: v.numeric for v in LIKERT},
}
_DIGIT = re.compile(r"(?<![\d.])([0-9]+(?:\.[0-9]+)?)(?![\d.])")
_STRIP = " \t\r\n\"'`*_.,;:!?()[]{}<>。，；：！？“”‘’（）【】《》"


def parse_likert(text: str, language="en", mode=Mode.INTEREST) -> LikertValue:
    """Map a raw reply onto one of the five scale points or raise ParseFailure.

    Accepted: an exact label, a lone 1-5 digit, or text mentioning exactly one
    label. In competence mode only the digit form is accepted. Replies naming
    two different scale points are ambiguous and fail.
    """
    raw = "" if text is None else str(text)
    body = raw.strip().strip(_STRIP).casefold()
    if not body:
        raise ParseFailure(raw, "empty")
    language, mode = Language.parse(language), _parse_mode(mode)

    values: set[int] = set()
    bad_number = False
    for m in _DIGIT.finditer(body):
        token = m.group(1)
        if token in {"1", "2", "3", "4", "5"}:
            values.add(int(token))
        else:
            bad_number = True

    if mode is Mode.INTEREST:
        if body in _LABEL_VALUES:
            return likert(_LABEL_VALUES[body])
        other = Language.CHINESE if language is Language.ENGLISH else Language.ENGLISH
        found = {_LABEL_VALUES[m.group(1).casefold()] for m in _LABEL_PATTERNS[language].finditer(body)}
        if not found:
            found = {_LABEL_VALUES[m.group(1).casefold()] for m in _LABEL_PATTERNS[other].finditer(body)}
        values |= found

    if bad_number and not values:
        raise ParseFailure(raw, "out of range")
    if len(values) > 1:
        raise ParseFailure(raw, "ambiguous")
    if not values:
        raise ParseFailure(raw, "unrecognized")
    return likert(values.pop())
