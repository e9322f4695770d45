import random
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathway_miner import rules
from pathway_miner.rules import (
    A1_A3,
    CONSTRAINTS,
    REVERSED,
    Rule,
    RuleBindError,
    RuleSet,
    RuleSyntaxError,
    eval_rules,
    filter_patterns,
    load_rules,
    parse_rules,
    prevalence,
    prevalence_significance,
    read_bitmap,
    write_bitmap,
)
from pathway_miner.sequences import Occurrence, PatternIndex

SCHEMA = ["AEROD_v", "FLNT", "T050"]
RULES_FILE = Path(__file__).resolve().parents[1] / "configs" / "a1_a3.rules"
TOP_PATHWAY = ((1, 3, 1), (1, 3, 2), (1, 2, 2), (1, 1, 2))


def test_rules_file_equals_builtin():
    assert load_rules(RULES_FILE) == parse_rules(A1_A3)
    assert len(parse_rules(A1_A3)) == 5


def test_top_pathway_satisfies_a1_a3():
    assert eval_rules(TOP_PATHWAY, parse_rules(A1_A3), SCHEMA)


@pytest.mark.parametrize(
    "pattern, broken",
    [
        (((0, 3, 1), (1, 3, 2), (1, 2, 2), (1, 1, 2)), "aerosol reaches clear sky"),
        (((1, 2, 1), (1, 3, 2), (1, 2, 2), (1, 1, 2)), "flux rises"),
        (((1, 2, 1), (1, 2, 2)), "flux flat, end not below start"),
        (((1, 3, 2), (1, 2, 1), (1, 1, 2)), "temperature falls"),
        (((1, 3, 2), (1, 2, 2)), "temperature flat, end not above start"),
        (((1, 3, 1),), "single symbol has no start/end change"),
    ],
)
def test_each_violation_fails(pattern, broken):
    assert not eval_rules(pattern, parse_rules(A1_A3), SCHEMA), broken


def test_constraint_semantics():
    assert CONSTRAINTS["nonzero"]([1, 2]) and not CONSTRAINTS["nonzero"]([1, 0])
    assert CONSTRAINTS["zero"]([0, 0])
    assert CONSTRAINTS["noninc"]([3, 3, 1]) and not CONSTRAINTS["noninc"]([1, 2])
    assert CONSTRAINTS["dec"]([3, 2, 1]) and not CONSTRAINTS["dec"]([3, 3])
    assert CONSTRAINTS["inc"]([1, 2]) and CONSTRAINTS["const"]([4, 4])
    assert CONSTRAINTS["end>start"]([1, 0, 2]) and not CONSTRAINTS["end>start"]([1])


def test_empty_ruleset_accepts_everything():
    assert parse_rules("") == RuleSet()
    assert parse_rules("  # only a comment\n") == RuleSet()
    assert eval_rules(TOP_PATHWAY, RuleSet(), SCHEMA)


def test_trailing_semicolon_and_comments():
    rs = parse_rules("FLNT: dec; # falling\nT050 : inc;\n")
    assert rs.rules == (Rule("FLNT", "dec"), Rule("T050", "inc"))


@pytest.mark.parametrize(
    "text, line, col, expected",
    [
        ("FLNT noninc", 1, 6, "':'"),
        ("FLNT: noninc;\nT050: warmer", 2, 7, "'nonzero'"),
        ("FLNT: end = start", 1, 11, None),
        ("FLNT: end<finish", 1, 11, "'start'"),
        ("FLNT: noninc T050: inc", 1, 14, "';'"),
        ("FLNT:", 1, 6, "end of input"),
        ("; FLNT: inc", 1, 1, "IDENT"),
    ],
)
def test_syntax_errors_report_position(text, line, col, expected):
    with pytest.raises(RuleSyntaxError) as exc:
        parse_rules(text, source="r.rules")
    e = exc.value
    assert (e.line, e.column) == (line, col)
    assert str(e).startswith(f"r.rules:{line}:{col}:")
    if expected:
        assert expected in str(e)


def test_duplicate_rule_rejected():
    with pytest.raises(RuleSyntaxError, match="duplicate"):
        parse_rules("FLNT: dec; FLNT: dec")


def test_unknown_variable_fails_at_bind():
    with pytest.raises(RuleBindError, match="QREFHT"):
        eval_rules(TOP_PATHWAY, parse_rules("QREFHT: inc"), SCHEMA)


def test_arity_mismatch():
    with pytest.raises(ValueError, match="arity"):
        eval_rules(((1, 2),), parse_rules("FLNT: inc"), SCHEMA)


rule_st = st.builds(Rule, st.sampled_from(SCHEMA), st.sampled_from(sorted(CONSTRAINTS)))
ruleset_st = st.lists(rule_st, max_size=6, unique=True).map(lambda rs: RuleSet(tuple(rs)))
pattern_st = st.lists(st.tuples(*[st.integers(0, 4)] * 3), min_size=1, max_size=4).map(tuple)


@settings(max_examples=200, deadline=None)
@given(ruleset_st)
def test_render_parse_round_trip(rs):
    assert parse_rules(rs.render()) == rs


@settings(max_examples=300, deadline=None)
@given(pattern_st, ruleset_st)
def test_reversal_duality(pattern, rs):
    mirrored = RuleSet(tuple(Rule(r.variable, REVERSED[r.constraint]) for r in rs.rules))
    assert eval_rules(pattern, rs, SCHEMA) == eval_rules(pattern[::-1], mirrored, SCHEMA)


def random_index(rng, n_patterns=40):
    occ = {}
    while len(occ) < n_patterns:
        p = tuple(tuple(rng.randrange(4) for _ in range(3)) for _ in range(rng.randint(1, 4)))
        occ[p] = [Occurrence(rng.randrange(6), 0, len(p) - 1, 0, 1, 2)]
    return PatternIndex(occ)


def test_filter_monotonicity_on_random_indices():
    rng = random.Random(0)
    for _ in range(100):
        idx = random_index(rng)
        rs = RuleSet()
        kept = set(idx.occurrences)
        for _ in range(4):
            rs = rs.plus(Rule(rng.choice(SCHEMA), rng.choice(sorted(CONSTRAINTS))))
            now = set(filter_patterns(idx, rs, SCHEMA).occurrences)
            assert now <= kept
            kept = now


# ---------------------------------------------------------------- prevalence


def occ(part, t0, t1, arm="forced", member=0):
    return Occurrence(part, 0, 0, t0, t1, t1 - t0 + 1, arm, member)


def test_prevalence_partition_level_or():
    idx = PatternIndex({
        ((1,),): [occ(0, 0, 2), occ(1, 1, 1)],
        ((2,),): [occ(0, 1, 3)],  # overlaps partition 0
        ((3,),): [occ(2, 0, 0, arm="baseline")],
    })
    s = prevalence(idx, T=5, npart=3, arm="forced", member=0)
    assert s.counts.tolist() == [1, 2, 1, 1, 0]
    assert s.instances.tolist() == [1, 3, 2, 1, 0]
    assert (0 <= s.counts).all() and (s.counts <= 3).all()


def test_prevalence_without_rules_is_any_activity():
    idx = PatternIndex({((1,),): [occ(0, 0, 4), occ(1, 0, 4)]})
    filtered = filter_patterns(idx, RuleSet(), SCHEMA[:1])
    assert prevalence(filtered, 5, 2).counts.tolist() == [2] * 5


def test_prevalence_significance_null_and_signal():
    same = [prevalence(PatternIndex({((1,),): [occ(0, 0, 1, member=m)]}), 3, 2, member=m) for m in range(3)]
    assert (prevalence_significance(same, same).flag == 0).all()
    with pytest.raises(ValueError):
        prevalence_significance(same[:1], same)


def test_bitmap_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    active = rng.random((7, 13)) < 0.4
    s = rules.PrevalenceSeries(active.sum(1), active, active.sum(1))
    path = write_bitmap(s, tmp_path / "bits" / "f.bin")
    assert path.stat().st_size == 7 * 2
    np.testing.assert_array_equal(read_bitmap(path, 7, 13), active)
    # bit j of a timestep's first byte is partition j
    first = path.read_bytes()[0]
    assert [(first >> j) & 1 for j in range(8)] == active[0, :8].astype(int).tolist()
