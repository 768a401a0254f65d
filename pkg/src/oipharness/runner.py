"""Full survey runs persisted as an append-only JSONL record log, with resume."""
from __future__ import annotations

import json
import logging
import os
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, Mapping, Optional, Sequence

from .instrument import ItemBank, Language, Mode, PromptTemplates, load_item_bank
from .providers import (
    AdministrationRecord,
    AuthError,
    ChatClient,
    FatalProviderError,
    ProviderParams,
    administer_item,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
RECORDS = "records.jsonl"


class RunError(Exception):
    pass


class ManifestMismatch(RunError):
    pass


class ArtifactExists(RunError):
    pass


@dataclass
class ProviderSpec:
    """Provider parameters plus the client that serves them."""

    params: ProviderParams
    client: ChatClient
    kind: str = "mock"
    settings: Mapping = field(default_factory=dict)  # config snapshot for the manifest

    @property
    def key(self) -> str:
        return self.params.key


@dataclass
class RunConfig:
    providers: list[ProviderSpec]
    languages: Sequence[Language] = (Language.ENGLISH,)
    modes: Sequence[Mode] = (Mode.INTEREST,)
    replications: int = 20
    item_bank: Optional[str] = None
    output_dir: str = "run"
    seed: int = 0
    concurrency: int = 1
    templates: Optional[PromptTemplates] = None

    def __post_init__(self):
        self.languages = tuple(Language.parse(x) for x in self.languages)
        self.modes = tuple(Mode(x) for x in self.modes)
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.providers or not self.languages or not self.modes:
            raise ValueError("need at least one provider, language and mode")
        keys = [p.key for p in self.providers]
        if len(set(keys)) != len(keys):
            raise ValueError(f"duplicate provider keys: {keys}")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")

    def bank(self) -> ItemBank:
        return load_item_bank(self.item_bank, self.languages)

    def snapshot(self, bank: ItemBank) -> dict:
        return {
            "providers": [
                {"key": p.key, "name": p.params.name, "model_id": p.params.model_id,
                 "version_tag": p.params.version_tag, "temperature": p.params.temperature,
                 "max_attempts": p.params.max_attempts, "kind": p.kind, "settings": _jsonable(p.settings)}
                for p in self.providers
            ],
            "languages": [x.value for x in self.languages],
            "modes": [x.value for x in self.modes],
            "replications": self.replications,
            "seed": self.seed,
            "item_bank": bank.fingerprint(),
        }


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=str, sort_keys=True))


@dataclass
class RunArtifact:
    path: Path
    manifest: dict
    records: list[AdministrationRecord]

    def keys(self) -> set:
        return {r.key for r in self.records}

    @property
    def providers(self) -> list[dict]:
        return self.manifest["config"]["providers"]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def iter_cells(config: RunConfig, bank: ItemBank) -> Iterator[tuple]:
    """Cells in administration order: all items of a replication before the next."""
    for spec in config.providers:
        for language in config.languages:
            for mode in config.modes:
                for rep in range(1, config.replications + 1):
                    for item in bank:
                        yield spec, language, mode, item, rep


def cell_key(spec: ProviderSpec, language: Language, mode: Mode, item_id: int, rep: int) -> tuple:
    return (spec.key, language.value, mode.value, item_id, rep)


def _write_manifest(path: Path, manifest: dict) -> None:
    tmp = path / (MANIFEST + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path / MANIFEST)


def read_records(path: Path, repair: bool = False) -> list[AdministrationRecord]:
    """Replay the record log. A torn final line (crash mid-write) is dropped,
    and with ``repair`` also truncated away so appends stay well-formed."""
    file = Path(path) / RECORDS
    if not file.exists():
        return []
    records = []
    good_bytes = 0
    with open(file, "rb") as fh:
        for raw in fh:
            if not raw.endswith(b"\n"):
                log.warning("dropping torn final record in %s", file)
                break
            obj = json.loads(raw.decode("utf-8"))
            if obj.get("format_version") != FORMAT_VERSION:
                raise RunError(f"{file}: unsupported format_version {obj.get('format_version')}")
            records.append(AdministrationRecord.from_json(obj))
            good_bytes += len(raw)
    if repair and good_bytes != file.stat().st_size:
        with open(file, "r+b") as fh:
            fh.truncate(good_bytes)
    return records


def load_artifact(path) -> RunArtifact:
    path = Path(path)
    if not (path / MANIFEST).is_file():
        raise RunError(f"no {MANIFEST} in {path}")
    manifest = json.loads((path / MANIFEST).read_text(encoding="utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise RunError(f"unsupported artifact format_version {manifest.get('format_version')}")
    return RunArtifact(path, manifest, read_records(path))


class _RecordLog:
    """Single writer for the JSONL log; one line per record, flushed as written."""

    def __init__(self, path: Path):
        self._fh = open(path / RECORDS, "a", encoding="utf-8", newline="\n")
        self.written = 0

    def append(self, record: AdministrationRecord) -> None:
        obj = {"format_version": FORMAT_VERSION, **record.to_json()}
        self._fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")
        self._fh.flush()
        self.written += 1

    def close(self) -> None:
        self._fh.close()


def _execute(config: RunConfig, bank: ItemBank, path: Path, manifest: dict, done: set) -> RunArtifact:
    """Administer every cell not in ``done`` and append the records in cell order."""
    writer = _RecordLog(path)
    dead: dict[str, str] = {}
    lock = threading.Lock()
    requests_before = _request_count(config)

    def task(spec, language, mode, item, rep):
        if spec.key in dead:
            return None
        try:
            return administer_item(spec.client, item, mode, language, spec.params, rep, templates=config.templates)
        except (FatalProviderError, AuthError) as exc:
            with lock:
                dead.setdefault(spec.key, str(exc))
            log.error("provider %s aborted: %s", spec.key, exc)
            return None

    todo = (c for c in iter_cells(config, bank) if cell_key(c[0], c[1], c[2], c[3].id, c[4]) not in done)
    try:
        if config.concurrency == 1:
            for cell in todo:
                rec = task(*cell)
                if rec is not None:
                    writer.append(rec)
        else:
            window = 4 * config.concurrency
            pending: deque = deque()
            with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
                for cell in todo:
                    if cell[0].key in dead:
                        continue
                    pending.append(pool.submit(task, *cell))
                    if len(pending) >= window:
                        rec = pending.popleft().result()
                        if rec is not None:
                            writer.append(rec)
                while pending:
                    rec = pending.popleft().result()
                    if rec is not None:
                        writer.append(rec)
    finally:
        writer.close()
        manifest["finished_at"] = _now()
        manifest["requests"] = manifest.get("requests", 0) + _request_count(config) - requests_before
        manifest["failed_providers"] = dict(sorted(dead.items()))
        _write_manifest(path, manifest)
    return load_artifact(path)


def _request_count(config: RunConfig) -> int:
    return sum(getattr(p.client, "calls", 0) for p in config.providers)


def run_survey(config: RunConfig) -> RunArtifact:
    """Start a fresh run in ``config.output_dir``; refuses to touch an existing log."""
    bank = config.bank()
    path = Path(config.output_dir)
    if (path / RECORDS).exists() or (path / MANIFEST).exists():
        raise ArtifactExists(f"{path} already holds a run; use resume")
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config.snapshot(bank),
        "started_at": _now(),
        "finished_at": None,
        "requests": 0,
        "failed_providers": {},
    }
    _write_manifest(path, manifest)
    return _execute(config, bank, path, manifest, set())


def check_compatible(manifest: dict, config: RunConfig, bank: ItemBank) -> None:
    old, new = manifest["config"], config.snapshot(bank)
    problems = []
    if [p["key"] for p in old["providers"]] != [p["key"] for p in new["providers"]]:
        problems.append(f"providers {[p['key'] for p in old['providers']]} != {[p['key'] for p in new['providers']]}")
    for field_name in ("languages", "modes", "replications", "item_bank", "seed"):
        if old.get(field_name) != new.get(field_name):
            problems.append(f"{field_name} {old.get(field_name)!r} != {new.get(field_name)!r}")
    if problems:
        raise ManifestMismatch("artifact does not match config: " + "; ".join(problems))


def missing_cells(artifact: RunArtifact, config: RunConfig, bank: ItemBank) -> list[tuple]:
    done = artifact.keys()
    return [cell_key(c[0], c[1], c[2], c[3].id, c[4]) for c in iter_cells(config, bank)
            if cell_key(c[0], c[1], c[2], c[3].id, c[4]) not in done]


def resume(path, config: RunConfig) -> RunArtifact:
    """Fill only the cells absent from an existing artifact."""
    path = Path(path)
    if not (path / MANIFEST).is_file():
        raise RunError(f"no {MANIFEST} in {path}")
    manifest = json.loads((path / MANIFEST).read_text(encoding="utf-8"))
    bank = config.bank()
    check_compatible(manifest, config, bank)
    records = read_records(path, repair=True)
    done = {r.key for r in records}
    if len(done) != len(records):
        raise RunError(f"{path}: duplicate cell keys in record log")
    return _execute(config, bank, path, manifest, done)
