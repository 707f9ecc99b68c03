"""Persistence of experiments as the knowledge base of previous runs.

One self-contained JSON document per experiment: domains, feasibility
expression, jobs as ``[index..., output]`` arrays, surrogate parameters
(k and metric id; k-NN models are defined by their training data, so no
weights are stored), and free-form metadata.  Floats round-trip
bit-identically through JSON's shortest-repr decimal encoding.  Writes
replace atomically via rename.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import surrogate as sg
from .space import ExperimentRecord, Job, SpaceError, space_from_dict, space_to_dict

SCHEMA_VERSION = 1

log = logging.getLogger(__name__)


class KbError(ValueError):
    pass


@dataclass(frozen=True)
class KbEntry:
    schema_version: int
    record: ExperimentRecord
    metadata: dict = field(default_factory=dict, compare=False)


def entry_to_dict(entry: KbEntry) -> dict:
    record = entry.record
    doc = space_to_dict(record.space)
    doc.update({
        "version": entry.schema_version,
        "id": record.id,
        "jobs": [[*job.point, job.output] for job in record.jobs],
        "metadata": entry.metadata,
    })
    if record.surrogate is not None:
        doc["surrogate"] = {"k": record.surrogate.k, "metric": record.surrogate.metric}
    return doc


def entry_from_dict(doc: dict) -> KbEntry:
    version = doc.get("version")
    if version != SCHEMA_VERSION:
        raise KbError(f"unrecognized schema version {version!r}")
    space = space_from_dict(doc)
    jobs = []
    for row in doc.get("jobs", []):
        *indices, output = row
        jobs.append(Job(point=tuple(int(i) for i in indices), output=float(output)))
    record = ExperimentRecord(id=str(doc["id"]), space=space, jobs=tuple(jobs))
    if "surrogate" in doc:
        params = doc["surrogate"]
        surrogate = sg.fit(record.jobs, space, k=int(params.get("k", sg.DEFAULT_K)))
        record = ExperimentRecord(id=record.id, space=space, jobs=record.jobs,
                                  surrogate=surrogate)
    return KbEntry(schema_version=version, record=record, metadata=doc.get("metadata", {}))


def save(entry: KbEntry, directory) -> Path:
    """Write one experiment document; atomic replace on overwrite."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{entry.record.id}.json"
    payload = json.dumps(entry_to_dict(entry), indent=1)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".kb-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def save_record(record: ExperimentRecord, directory, metadata: Optional[dict] = None) -> Path:
    return save(KbEntry(SCHEMA_VERSION, record, metadata or {}), directory)


def load_kb(directory) -> list[KbEntry]:
    """Load every recognized document; malformed files are skipped with a
    warning rather than aborting the load."""
    directory = Path(directory)
    if not directory.is_dir():
        raise KbError(f"knowledge-base directory {directory} does not exist")
    entries = []
    for path in sorted(directory.glob("*.json")):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
            entries.append(entry_from_dict(doc))
        except (json.JSONDecodeError, KbError, SpaceError, KeyError, TypeError, ValueError) as exc:
            log.warning("skipping malformed knowledge-base file %s: %s", path, exc)
    return entries
