import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airkit.errors import MappingError, ProgramError
from airkit.program import (
    OpKind,
    OperationTable,
    ReasoningProgram,
    Step,
    compile_gqa_program,
    normalize_gqa_operation,
    parse_program,
    serialize_program,
    validate_program,
)

CHAIN = (
    "0: select(category=jeans)\n"
    "1: relate(category=girl, relation=wearing) <- [0]\n"
    "2: relate(category=bag, relation=to the left of) <- [1]\n"
    "3: query(attribute=color) <- [2]"
)


def test_parse_chain():
    p = parse_program(CHAIN)
    assert len(p) == 4 and p.final == 3
    assert p[0] == Step(0, OpKind.SELECT, category="jeans")
    assert p[1] == Step(1, OpKind.RELATE, category="girl", relation="wearing", deps=(0,))
    assert p[2] == Step(2, OpKind.RELATE, category="bag", relation="to the left of", deps=(1,))
    assert p[3] == Step(3, OpKind.QUERY, attribute="color", deps=(2,))


def test_filter_without_dependency_is_arity_error():
    with pytest.raises(ProgramError, match="arity") as exc:
        parse_program("0: filter(attribute=red)")
    assert exc.value.step == 0


def test_and_without_parentheses():
    p = parse_program("0: select(category=a)\n1: select(category=b)\n2: and <- [0,1]")
    assert len(p) == 3
    assert p[2].kind is OpKind.AND and p[2].deps == (0, 1)


def test_blank_and_comment_lines_ignored():
    p = parse_program("# header\n\n0: select(category=a)\n\n1: verify(attribute=exist) <- [0]\n")
    assert len(p) == 2


@pytest.mark.parametrize("text, column", [
    ("0: selekt(category=a)", 4),
    ("0: select(colour=a)", 11),
    ("0: select(category=a", 21),
    ("0 select(category=a)", 3),
    ("0: select(category=a) extra", 23),
    ("0: select(category=)", 20),
])
def test_syntax_errors_carry_position(text, column):
    with pytest.raises(ProgramError) as exc:
        parse_program(text)
    assert exc.value.line == 1
    assert exc.value.column == column


def test_misnumbered_step():
    with pytest.raises(ProgramError, match="expected 1") as exc:
        parse_program("0: select(category=a)\n2: query(attribute=color) <- [0]")
    assert exc.value.line == 2


def test_self_dependency():
    with pytest.raises(ProgramError, match="self-dependency"):
        parse_program("0: select(category=a)\n1: query(attribute=c) <- [1]")


def test_values_may_contain_spaces_and_case():
    p = parse_program("0: select(category=Palm  Tree)\n1: relate(category=man, relation=To The Left Of) <- [0]")
    assert p[0].category == "palm tree"
    assert p[1].relation == "to the left of"


def test_validate_valid_program():
    assert validate_program(parse_program(CHAIN)) == []


def test_validate_forward_dependency():
    steps = (
        Step(0, OpKind.SELECT, "a"),
        Step(1, OpKind.FILTER, attribute="x", deps=(0,)),
        Step(2, OpKind.FILTER, attribute="y", deps=(5,)),
        Step(3, OpKind.SELECT, "b"),
        Step(4, OpKind.AND, deps=(1, 3)),
        Step(5, OpKind.AND, deps=(4, 2)),
    )
    violations = validate_program(ReasoningProgram(steps))
    assert [(v.step, v.rule) for v in violations] == [(2, "forward-dependency")]


def test_validate_unreachable():
    steps = (
        Step(0, OpKind.SELECT, "a"),
        Step(1, OpKind.SELECT, "b"),
        Step(2, OpKind.QUERY, attribute="color", deps=(1,)),
    )
    violations = validate_program(ReasoningProgram(steps))
    assert [(v.step, v.rule) for v in violations] == [(0, "unreachable")]


def test_validate_empty():
    assert validate_program(ReasoningProgram(())) != []


@pytest.mark.parametrize("step", [
    Step(0, OpKind.SELECT),
    Step(1, OpKind.RELATE, category="x", deps=(0,)),
    Step(1, OpKind.COMPARE, deps=(0,)),
    Step(1, OpKind.OR, deps=(0,)),
    Step(1, OpKind.QUERY, deps=(0,)),
])
def test_arity_rules(step):
    base = [Step(0, OpKind.SELECT, "a")] if step.index == 1 else []
    violations = validate_program(ReasoningProgram(tuple(base + [step])))
    assert any(v.rule == "arity" and v.step == step.index for v in violations)


# --- GQA mapping -------------------------------------------------------------

def test_filter_size_table():
    tpl = normalize_gqa_operation("filter size", ["table", "large"])
    assert (tpl.kind, tpl.attribute, tpl.category) == (OpKind.FILTER, "large", "table")


def test_different_color():
    tpl = normalize_gqa_operation("different color", ["A", "B"])
    assert tpl.kind is OpKind.COMPARE
    assert tpl.attribute == "color"
    assert tpl.dep_refs == ("A", "B")


def test_select_identity():
    tpl = normalize_gqa_operation("select", ["girl"])
    assert (tpl.kind, tpl.category) == (OpKind.SELECT, "girl")


def test_unmapped_operation_fails_loudly():
    with pytest.raises(MappingError, match="teleport"):
        normalize_gqa_operation("teleport", [])


def test_exist_is_flagged():
    tpl = normalize_gqa_operation("exist", [])
    assert tpl.kind is OpKind.VERIFY and tpl.flag


def test_seed_table_covers_every_kind():
    table = OperationTable.default()
    assert len(table) >= 30
    assert {e.kind for e in table.entries()} == set(OpKind)


def test_custom_table():
    table = OperationTable.from_json('[{"raw_op": "locate", "kind": "select", "arg_roles": ["category"]}]')
    assert normalize_gqa_operation("locate", ["cat"], table).category == "cat"
    with pytest.raises(MappingError):
        OperationTable.from_json('[{"raw_op": "x", "kind": "select", "arg_roles": ["colour"]}]')


def test_compile_gqa_program():
    raw = [
        {"operation": "select", "arguments": ["table"], "dependencies": []},
        {"operation": "filter size", "arguments": ["table", "large"], "dependencies": [0]},
        {"operation": "select", "arguments": ["chair"], "dependencies": []},
        {"operation": "different color", "arguments": ["1", "2"]},
    ]
    p, flags = compile_gqa_program(raw)
    assert p[3] == Step(3, OpKind.COMPARE, attribute="color", deps=(1, 2))
    assert flags == []


# --- round trip ------------------------------------------------------------

names = st.sampled_from(["car", "red", "to the left of", "girl", "large", "color"])


@st.composite
def programs(draw):
    n = draw(st.integers(1, 7))
    steps = []
    for i in range(n):
        kinds = [OpKind.SELECT] if i == 0 else list(OpKind)
        if i < 2:
            kinds = [k for k in kinds if k not in (OpKind.AND, OpKind.OR, OpKind.COMPARE)]
        kind = draw(st.sampled_from(kinds))
        if kind is OpKind.SELECT:
            steps.append(Step(i, kind, category=draw(names)))
        elif kind in (OpKind.FILTER, OpKind.QUERY, OpKind.VERIFY):
            cat = draw(st.none() | names)
            steps.append(Step(i, kind, category=cat, attribute=draw(names), deps=(draw(st.integers(0, i - 1)),)))
        elif kind is OpKind.RELATE:
            steps.append(Step(i, kind, category=draw(names), relation=draw(names),
                              deps=(draw(st.integers(0, i - 1)),)))
        else:
            deps = tuple(sorted(draw(st.sets(st.integers(0, i - 1), min_size=2, max_size=3))))
            attr = draw(names) if kind is OpKind.COMPARE else None
            steps.append(Step(i, kind, attribute=attr, deps=deps))
    # join dangling steps into the final one so everything is reachable
    used = {d for s in steps for d in s.deps}
    loose = [s.index for s in steps[:-1] if s.index not in used]
    if loose:
        steps.append(Step(len(steps), OpKind.AND, deps=tuple(loose + [len(steps) - 1])))
    return ReasoningProgram(tuple(steps))


@settings(max_examples=150, deadline=None)
@given(programs())
def test_round_trip_and_validity(p):
    assert validate_program(p) == []
    text = serialize_program(p)
    again = parse_program(text)
    assert again == p
    assert validate_program(again) == []
    for s in again:
        assert all(d < s.index for d in s.deps)
