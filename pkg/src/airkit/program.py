"""Reasoning programs: atomic operation steps and their text form.

A program is a topologically ordered list of steps, one per line::

    0: select(category=jeans)
    1: relate(category=girl, relation=wearing) <- [0]
    2: relate(category=bag, relation=to the left of) <- [1]
    3: query(attribute=color) <- [2]

The last step produces the answer; every other step must feed into it.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

from airkit.errors import MappingError, ProgramError
from airkit.scene import normalize_token


class OpKind(str, enum.Enum):
    SELECT = "select"
    FILTER = "filter"
    QUERY = "query"
    VERIFY = "verify"
    COMPARE = "compare"
    RELATE = "relate"
    AND = "and"
    OR = "or"

    def __str__(self):
        return self.value


OP_KINDS: tuple[OpKind, ...] = tuple(OpKind)
SINGLE_SET_KINDS = frozenset({OpKind.SELECT, OpKind.FILTER, OpKind.QUERY, OpKind.VERIFY})
MULTI_SET_KINDS = frozenset({OpKind.RELATE, OpKind.COMPARE, OpKind.AND})

_SLOTS = ("category", "attribute", "relation")


@dataclass(frozen=True)
class Step:
    index: int
    kind: OpKind
    category: str | None = None
    attribute: str | None = None
    relation: str | None = None
    deps: tuple[int, ...] = ()

    def to_line(self) -> str:
        args = [f"{slot}={getattr(self, slot)}" for slot in _SLOTS if getattr(self, slot) is not None]
        text = f"{self.index}: {self.kind.value}"
        if args:
            text += "(" + ", ".join(args) + ")"
        if self.deps:
            text += " <- [" + ", ".join(str(d) for d in self.deps) + "]"
        return text


@dataclass(frozen=True)
class ReasoningProgram:
    steps: tuple[Step, ...]

    @property
    def final(self) -> int:
        return len(self.steps) - 1

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def __getitem__(self, i) -> Step:
        return self.steps[i]


@dataclass(frozen=True)
class Violation:
    step: int
    rule: str
    message: str

    def __str__(self):
        return f"step {self.step}: {self.rule}: {self.message}"


def _arity_violations(step: Step) -> list[Violation]:
    out = []
    i, k, n = step.index, step.kind, len(step.deps)

    def bad(msg):
        out.append(Violation(i, "arity", f"{k.value} {msg}"))

    if k is OpKind.SELECT:
        if n != 0:
            bad(f"takes no dependencies, got {n}")
        if step.category is None:
            bad("requires a category")
    elif k in (OpKind.FILTER, OpKind.QUERY, OpKind.VERIFY):
        if n != 1:
            bad(f"requires exactly 1 dependency, got {n}")
        if step.attribute is None:
            bad("requires an attribute")
    elif k is OpKind.RELATE:
        if n != 1:
            bad(f"requires exactly 1 dependency, got {n}")
        if step.category is None:
            bad("requires a category")
        if step.relation is None:
            bad("requires a relation")
    else:
        if n < 2:
            bad(f"requires at least 2 dependencies, got {n}")
        if k is OpKind.COMPARE and step.attribute is None:
            bad("requires an attribute")
    return out


def validate_program(p: ReasoningProgram) -> list[Violation]:
    """Every broken structural rule, in step order; empty for a valid program."""
    if not p.steps:
        return [Violation(-1, "empty", "program has no steps")]
    out: list[Violation] = []
    for pos, step in enumerate(p.steps):
        if step.index != pos:
            out.append(Violation(pos, "index", f"step at position {pos} is numbered {step.index}"))
        for d in step.deps:
            if d == pos:
                out.append(Violation(pos, "self-dependency", f"step depends on itself"))
            elif d > pos or d < 0:
                out.append(Violation(pos, "forward-dependency", f"depends on step {d}, which does not precede it"))
        if len(set(step.deps)) != len(step.deps):
            out.append(Violation(pos, "duplicate-dependency", f"repeated dependency in {list(step.deps)}"))
        out.extend(_arity_violations(step))

    reached = {p.final}
    stack = [p.final]
    while stack:
        for d in p.steps[stack.pop()].deps:
            if 0 <= d < len(p.steps) and d not in reached:
                reached.add(d)
                stack.append(d)
    for pos in range(len(p.steps)):
        if pos not in reached:
            out.append(Violation(pos, "unreachable", f"step does not contribute to final step {p.final}"))
    return sorted(out, key=lambda v: v.step)


class _Cursor:
    """Character cursor over one program line, tracking columns for errors."""

    def __init__(self, text: str, line: int):
        self.text = text
        self.pos = 0
        self.line = line

    def error(self, msg: str, step: int | None = None) -> ProgramError:
        return ProgramError(msg, step=step, line=self.line, column=self.pos + 1)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, token: str):
        self.skip_ws()
        if not self.text.startswith(token, self.pos):
            found = self.text[self.pos:self.pos + len(token)] or "end of line"
            raise self.error(f"expected {token!r}, found {found!r}")
        self.pos += len(token)

    def integer(self) -> int:
        self.skip_ws()
        start = self.pos
        while self.peek().isdigit():
            self.pos += 1
        if start == self.pos:
            raise self.error("expected a step index")
        return int(self.text[start:self.pos])

    def word(self) -> str:
        self.skip_ws()
        start = self.pos
        while self.peek().isalpha() or self.peek() == "_":
            self.pos += 1
        if start == self.pos:
            raise self.error("expected a name")
        return self.text[start:self.pos]

    def value(self) -> str:
        start = self.pos
        while self.peek() not in (",", ")", ""):
            self.pos += 1
        raw = self.text[start:self.pos]
        if not raw.strip():
            self.pos = start
            raise self.error("empty argument value")
        return raw


def _parse_line(line_text: str, lineno: int) -> Step:
    cur = _Cursor(line_text, lineno)
    index = cur.integer()
    cur.expect(":")
    name_col = cur.pos
    name = cur.word().lower()
    try:
        kind = OpKind(name)
    except ValueError:
        cur.pos = name_col
        cur.skip_ws()
        raise cur.error(f"unknown operation {name!r}; expected one of {', '.join(k.value for k in OpKind)}", step=index)

    slots: dict[str, str] = {}
    cur.skip_ws()
    if cur.peek() == "(":
        cur.pos += 1
        while True:
            key = cur.word().lower()
            if key not in _SLOTS:
                cur.pos -= len(key)
                raise cur.error(f"unknown argument {key!r}; expected category, attribute or relation", step=index)
            if key in slots:
                cur.pos -= len(key)
                raise cur.error(f"argument {key!r} given twice", step=index)
            cur.expect("=")
            slots[key] = normalize_token(cur.value())
            cur.skip_ws()
            if cur.peek() == ",":
                cur.pos += 1
                continue
            cur.expect(")")
            break

    deps: list[int] = []
    cur.skip_ws()
    if cur.peek() == "<":
        cur.expect("<-")
        cur.expect("[")
        cur.skip_ws()
        if cur.peek() != "]":
            while True:
                deps.append(cur.integer())
                cur.skip_ws()
                if cur.peek() == ",":
                    cur.pos += 1
                    continue
                break
        cur.expect("]")
    cur.skip_ws()
    if cur.pos < len(cur.text):
        raise cur.error(f"unexpected trailing text {cur.text[cur.pos:]!r}", step=index)
    return Step(index=index, kind=kind, deps=tuple(deps), **slots)


def parse_program(text: str) -> ReasoningProgram:
    """Parse the line-oriented program grammar and validate the result.

    Blank lines and ``#`` comment lines are ignored.
    """
    steps = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        step = _parse_line(raw, lineno)
        if step.index != len(steps):
            raise ProgramError(
                f"step numbered {step.index}, expected {len(steps)}",
                step=step.index, line=lineno, column=1 + len(raw) - len(raw.lstrip()),
            )
        steps.append(step)
    if not steps:
        raise ProgramError("program has no steps")
    program = ReasoningProgram(tuple(steps))
    violations = validate_program(program)
    if violations:
        first = violations[0]
        detail = "; ".join(str(v) for v in violations)
        raise ProgramError(detail, step=first.step)
    return program


def serialize_program(p: ReasoningProgram) -> str:
    return "\n".join(s.to_line() for s in p.steps) + "\n"


def make_program(steps: Iterable[Step]) -> ReasoningProgram:
    """Build and validate a program from step objects."""
    program = ReasoningProgram(tuple(steps))
    violations = validate_program(program)
    if violations:
        raise ProgramError("; ".join(str(v) for v in violations), step=violations[0].step)
    return program


# --- GQA operation normalization ------------------------------------------

@dataclass(frozen=True)
class MappingEntry:
    raw_op: str
    kind: OpKind
    arg_roles: tuple[str, ...]
    fixed: dict = field(default_factory=dict, compare=False)
    flag: str | None = None


@dataclass(frozen=True)
class StepTemplate:
    """A normalized operation before it is placed in a program.

    ``dep_refs`` holds the raw arguments that name earlier results; the caller
    resolves them to step indices.
    """

    kind: OpKind
    category: str | None = None
    attribute: str | None = None
    relation: str | None = None
    dep_refs: tuple[str, ...] = ()
    flag: str | None = None

    def to_step(self, index: int, deps: Sequence[int]) -> Step:
        return Step(index, self.kind, self.category, self.attribute, self.relation, tuple(deps))


_ROLES = frozenset({"category", "attribute", "relation", "dep"})


class OperationTable:
    """Raw GQA operation name -> triplet mapping, loaded from JSON."""

    def __init__(self, entries: Iterable[MappingEntry]):
        self._entries: dict[str, MappingEntry] = {}
        for e in entries:
            key = normalize_token(e.raw_op)
            if key in self._entries:
                raise MappingError(f"duplicate mapping for raw operation {e.raw_op!r}")
            self._entries[key] = e

    @classmethod
    def from_json(cls, text: str) -> OperationTable:
        rows = json.loads(text)
        if not isinstance(rows, list):
            raise MappingError("mapping table must be a JSON array")
        entries = []
        for row in rows:
            try:
                kind = OpKind(row["kind"].lower())
                roles = tuple(row["arg_roles"])
            except (KeyError, ValueError, AttributeError, TypeError) as exc:
                raise MappingError(f"bad mapping row {row!r}: {exc}") from exc
            unknown = set(roles) - _ROLES
            if unknown:
                raise MappingError(f"mapping for {row['raw_op']!r} uses unknown roles {sorted(unknown)}")
            fixed = {k: normalize_token(v) for k, v in row.get("fixed", {}).items()}
            entries.append(MappingEntry(row["raw_op"], kind, roles, fixed, row.get("flag")))
        return cls(entries)

    @classmethod
    def default(cls) -> OperationTable:
        text = resources.files("airkit").joinpath("data/gqa_operations.json").read_text(encoding="utf-8")
        return cls.from_json(text)

    def __contains__(self, raw_name: str) -> bool:
        return normalize_token(raw_name) in self._entries

    def __len__(self):
        return len(self._entries)

    def entries(self) -> list[MappingEntry]:
        return list(self._entries.values())

    def normalize(self, raw_name: str, raw_args: Sequence[str]) -> StepTemplate:
        key = normalize_token(raw_name)
        entry = self._entries.get(key)
        if entry is None:
            raise MappingError(f"unmapped GQA operation {raw_name!r}")
        if len(raw_args) != len(entry.arg_roles):
            raise MappingError(
                f"GQA operation {raw_name!r} expects {len(entry.arg_roles)} arguments "
                f"{list(entry.arg_roles)}, got {len(raw_args)}"
            )
        slots = dict(entry.fixed)
        dep_refs = []
        for role, arg in zip(entry.arg_roles, raw_args):
            if role == "dep":
                dep_refs.append(str(arg))
            else:
                slots[role] = normalize_token(arg)
        return StepTemplate(kind=entry.kind, dep_refs=tuple(dep_refs), flag=entry.flag, **slots)


_DEFAULT_TABLE: OperationTable | None = None


def normalize_gqa_operation(raw_name: str, raw_args: Sequence[str], table: OperationTable | None = None) -> StepTemplate:
    """Map one raw GQA operation onto a step template via the mapping table."""
    global _DEFAULT_TABLE
    if table is None:
        if _DEFAULT_TABLE is None:
            _DEFAULT_TABLE = OperationTable.default()
        table = _DEFAULT_TABLE
    return table.normalize(raw_name, raw_args)


def compile_gqa_program(raw_steps: Sequence[dict], table: OperationTable | None = None) -> tuple[ReasoningProgram, list[str]]:
    """Compile GQA-style ``{"operation", "arguments", "dependencies"}`` records.

    Dependencies come from the record's ``dependencies`` list; ``dep`` role
    arguments that are integers are used when that list is absent. Returns
    the program and the list of flagged (non-canonical) raw operations.
    """
    steps, flags = [], []
    for i, rec in enumerate(raw_steps):
        tpl = normalize_gqa_operation(rec["operation"], rec.get("arguments", []), table)
        deps = rec.get("dependencies")
        if deps is None:
            try:
                deps = [int(r) for r in tpl.dep_refs]
            except ValueError as exc:
                raise ProgramError(f"cannot resolve dependency references {list(tpl.dep_refs)}", step=i) from exc
        if tpl.flag:
            flags.append(f"step {i}: {rec['operation']} ({tpl.flag})")
        steps.append(tpl.to_step(i, [int(d) for d in deps]))
    return make_program(steps), flags
