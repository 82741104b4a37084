"""Flat-file entity store: one JSON document per entity.

Layout: ``<root>/entities/<kind>/<id>.json``. Reads hand out immutable
snapshots; writes are serialized through a lock so concurrent readers always
see a consistent store.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Any, Iterator

from .domain import ENTITY_KINDS, DomainError, entity_from_json, entity_to_json


class MissingEntityError(KeyError):
    """A referenced entity does not exist in the store."""

    def __init__(self, kind: str, entity_id: str):
        super().__init__(f"no {kind} entity {entity_id!r}")
        self.kind = kind
        self.entity_id = entity_id


class EntityStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()

    def _dir(self, kind: str) -> Path:
        if kind not in ENTITY_KINDS:
            raise DomainError(f"unknown entity kind {kind!r}")
        return self.root / "entities" / kind

    def _path(self, kind: str, entity_id: str) -> Path:
        if "/" in entity_id or entity_id in ("", ".", ".."):
            raise DomainError(f"bad entity id {entity_id!r}")
        return self._dir(kind) / f"{entity_id}.json"

    def get(self, kind: str, entity_id: str) -> Any:
        path = self._path(kind, entity_id)
        if not path.exists():
            raise MissingEntityError(kind, entity_id)
        with path.open() as fh:
            return entity_from_json(kind, json.load(fh))

    def get_document(self, kind: str, entity_id: str) -> dict:
        """Raw JSON document, validated against the entity schema first."""
        path = self._path(kind, entity_id)
        if not path.exists():
            raise MissingEntityError(kind, entity_id)
        with path.open() as fh:
            doc = json.load(fh)
        entity_from_json(kind, doc)
        return doc

    def put(self, entity: Any) -> None:
        doc = entity_to_json(entity)
        kind = getattr(entity, "kind", "parameter")
        entity_id = doc.get("id") or doc["name"]
        self.put_document(kind, entity_id, doc)

    def put_document(self, kind: str, entity_id: str, doc: dict) -> None:
        entity_from_json(kind, doc)  # schema check before touching disk
        path = self._path(kind, entity_id)
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".json.tmp")
            tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
            tmp.replace(path)

    def delete(self, kind: str, entity_id: str) -> None:
        path = self._path(kind, entity_id)
        with self._lock:
            if not path.exists():
                raise MissingEntityError(kind, entity_id)
            path.unlink()

    def ids(self, kind: str) -> list[str]:
        d = self._dir(kind)
        if not d.is_dir():
            return []
        return sorted(p.stem for p in d.glob("*.json"))

    def iter_entities(self, kind: str) -> Iterator[Any]:
        for entity_id in self.ids(kind):
            yield self.get(kind, entity_id)

    def snapshot(self) -> "RegistrySnapshot":
        """Immutable view of the whole store for pure validation/resolution."""
        entities: dict[str, dict[str, Any]] = {}
        for kind in ENTITY_KINDS:
            entities[kind] = {e_id: self.get(kind, e_id) for e_id in self.ids(kind)}
        return RegistrySnapshot(entities)


class RegistrySnapshot:
    """Read-only entity map, safe to share across threads."""

    def __init__(self, entities: dict[str, dict[str, Any]]):
        self._entities = entities

    @classmethod
    def from_entities(cls, entities: list[Any]) -> "RegistrySnapshot":
        grouped: dict[str, dict[str, Any]] = {k: {} for k in ENTITY_KINDS}
        for e in entities:
            kind = getattr(e, "kind", "parameter")
            key = getattr(e, "id", None) or e.name
            grouped[kind][key] = e
        return cls(grouped)

    def get(self, kind: str, entity_id: str) -> Any:
        try:
            return self._entities[kind][entity_id]
        except KeyError:
            raise MissingEntityError(kind, entity_id) from None

    def has(self, kind: str, entity_id: str) -> bool:
        return entity_id in self._entities.get(kind, {})

    def ids(self, kind: str) -> list[str]:
        return sorted(self._entities.get(kind, {}))

    def parameter(self, name: str):
        return self.get("parameter", name)
