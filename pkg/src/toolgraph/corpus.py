"""Tool documents: loading, validation, serialization and rendering."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import ValidationError

_KNOWN_KEYS = ("id", "name", "description", "category", "parameters", "returns")


class RenderMode(str, enum.Enum):
    """How a tool is turned into the text that gets embedded or indexed."""

    DESCRIPTION_ONLY = "description_only"
    STRUCTURED = "structured"


@dataclass(frozen=True)
class Parameter:
    name: str
    type_hint: str = ""
    description: str = ""

    def to_json(self) -> dict:
        return {"name": self.name, "type": self.type_hint, "description": self.description}


@dataclass(frozen=True)
class ToolDoc:
    """One retrievable tool.

    ``extra`` holds JSON keys this package does not interpret; they are kept
    so that a load/save cycle does not drop them.
    """

    id: str
    name: str
    description: str
    category: str | None = None
    parameters: tuple[Parameter, ...] = ()
    returns: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError("tool id must be a nonempty string")
        if not isinstance(self.description, str) or not self.description.strip():
            raise ValidationError(f"tool {self.id!r} has an empty description")
        seen = set()
        for p in self.parameters:
            if p.name in seen:
                raise ValidationError(f"tool {self.id!r} has duplicate parameter {p.name!r}")
            seen.add(p.name)

    @classmethod
    def from_json(cls, obj: dict) -> "ToolDoc":
        if not isinstance(obj, dict):
            raise ValidationError("tool record must be a JSON object")
        if "id" not in obj:
            raise ValidationError("tool record has no 'id'")
        params = []
        for p in obj.get("parameters") or []:
            if not isinstance(p, dict) or not isinstance(p.get("name"), str):
                raise ValidationError(f"tool {obj['id']!r}: malformed parameter {p!r}")
            params.append(
                Parameter(p["name"], str(p.get("type", "")), str(p.get("description", "")))
            )
        extra = {k: v for k, v in obj.items() if k not in _KNOWN_KEYS}
        return cls(
            id=obj["id"],
            name=obj.get("name", obj["id"]),
            description=obj.get("description", ""),
            category=obj.get("category"),
            parameters=tuple(params),
            returns=obj.get("returns"),
            extra=extra,
        )

    def to_json(self) -> dict:
        out: dict = {"id": self.id, "name": self.name, "description": self.description}
        if self.category is not None:
            out["category"] = self.category
        out["parameters"] = [p.to_json() for p in self.parameters]
        if self.returns is not None:
            out["returns"] = self.returns
        out.update(self.extra)
        return out


class ToolCorpus:
    """Ordered, immutable collection of tools.

    Position in the corpus defines the row of the tool in every embedding
    matrix and the node index in every dependency graph.
    """

    def __init__(self, tools: Iterable[ToolDoc]):
        self._tools = tuple(tools)
        index = {}
        for pos, tool in enumerate(self._tools):
            if tool.id in index:
                raise ValidationError(f"duplicate tool id {tool.id!r}")
            index[tool.id] = pos
        self._index = index

    @property
    def tools(self) -> tuple[ToolDoc, ...]:
        return self._tools

    @property
    def ids(self) -> list[str]:
        return [t.id for t in self._tools]

    def position(self, tool_id: str) -> int:
        try:
            return self._index[tool_id]
        except KeyError:
            raise ValidationError(f"unknown tool id {tool_id!r}") from None

    def __contains__(self, tool_id) -> bool:
        return tool_id in self._index

    def __getitem__(self, key) -> ToolDoc:
        if isinstance(key, str):
            return self._tools[self.position(key)]
        return self._tools[key]

    def __len__(self) -> int:
        return len(self._tools)

    def __iter__(self) -> Iterator[ToolDoc]:
        return iter(self._tools)

    def __eq__(self, other) -> bool:
        return isinstance(other, ToolCorpus) and self._tools == other._tools

    def __repr__(self) -> str:
        return f"ToolCorpus(n_tools={len(self)})"


def read_jsonl(path) -> Iterator[tuple[int, object]]:
    """Yield ``(line_number, obj)`` for every nonblank line, 1-based."""
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False))
            f.write("\n")


def load_corpus(path) -> ToolCorpus:
    tools = []
    for lineno, obj in read_jsonl(path):
        try:
            tools.append(ToolDoc.from_json(obj))
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return ToolCorpus(tools)


def save_corpus(corpus: ToolCorpus, path) -> None:
    write_jsonl(Path(path), (t.to_json() for t in corpus))


def render_document(tool: ToolDoc, mode: RenderMode | str = RenderMode.DESCRIPTION_ONLY) -> str:
    """Render ``tool`` as a single string.

    ``description_only`` is the bare description. ``structured`` is::

        name: <name>
        description: <description>
        parameters:
        - <pname> (<ptype>): <pdesc>

    with one ``-`` line per parameter and no trailing newline.
    """
    mode = RenderMode(mode)
    if mode is RenderMode.DESCRIPTION_ONLY:
        return tool.description
    lines = [f"name: {tool.name}", f"description: {tool.description}", "parameters:"]
    lines.extend(f"- {p.name} ({p.type_hint}): {p.description}" for p in tool.parameters)
    return "\n".join(lines)
