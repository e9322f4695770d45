"""Pathway assertions over evolution patterns.

Concrete syntax::

    ruleset    := [rule (";" rule)* [";"]]
    rule       := IDENT ":" constraint
    constraint := "nonzero" | "zero" | "noninc" | "nondec" | "dec" | "inc"
                | "end<start" | "end>start" | "const"

``#`` starts a comment running to the end of the line. The stratospheric
warming assertions read::

    AEROD_v: nonzero; FLNT: noninc; FLNT: end<start; T050: nondec; T050: end>start
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .detection import SignificanceSeries, significance
from .sequences import Pattern, PatternIndex


def _pairs(xs):
    return zip(xs, xs[1:])


CONSTRAINTS: dict[str, Callable[[list], bool]] = {
    "nonzero": lambda xs: all(x > 0 for x in xs),
    "zero": lambda xs: all(x == 0 for x in xs),
    "noninc": lambda xs: all(b <= a for a, b in _pairs(xs)),
    "nondec": lambda xs: all(b >= a for a, b in _pairs(xs)),
    "dec": lambda xs: all(b < a for a, b in _pairs(xs)),
    "inc": lambda xs: all(b > a for a, b in _pairs(xs)),
    "end<start": lambda xs: len(xs) > 1 and xs[-1] < xs[0],
    "end>start": lambda xs: len(xs) > 1 and xs[-1] > xs[0],
    "const": lambda xs: all(b == a for a, b in _pairs(xs)),
}

# constraint each one turns into when the pattern is read backwards
REVERSED = {
    "nonzero": "nonzero",
    "zero": "zero",
    "noninc": "nondec",
    "nondec": "noninc",
    "dec": "inc",
    "inc": "dec",
    "end<start": "end>start",
    "end>start": "end<start",
    "const": "const",
}

A1_A3 = "AEROD_v: nonzero; FLNT: noninc; FLNT: end<start; T050: nondec; T050: end>start"


class RuleSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int, expected: Sequence[str] = (), source: str = "<rules>"):
        self.line, self.column = line, column
        self.expected = tuple(expected)
        self.source = source
        exp = ""
        if expected:
            exp = " (expected " + " or ".join(repr(e) for e in expected) + ")"
        super().__init__(f"{source}:{line}:{column}: {message}{exp}")


class RuleBindError(ValueError):
    pass


class Rule(NamedTuple):
    variable: str
    constraint: str


@dataclass(frozen=True)
class RuleSet:
    rules: tuple = ()

    def __len__(self) -> int:
        return len(self.rules)

    @property
    def variables(self) -> list[str]:
        return list(dict.fromkeys(r.variable for r in self.rules))

    def render(self) -> str:
        return "; ".join(f"{r.variable}: {r.constraint}" for r in self.rules)

    def bind(self, schema: Sequence[str]) -> list[tuple[int, Callable]]:
        """Resolve variable names to tuple positions."""
        pos = {name: i for i, name in enumerate(schema)}
        bound = []
        for r in self.rules:
            if r.variable not in pos:
                raise RuleBindError(f"rule references unknown variable {r.variable!r}; schema is {list(schema)}")
            bound.append((pos[r.variable], CONSTRAINTS[r.constraint]))
        return bound

    def plus(self, rule: Rule) -> "RuleSet":
        return RuleSet(self.rules + (rule,))


# --------------------------------------------------------------------------
# recursive-descent parser


class _Tok(NamedTuple):
    kind: str  # IDENT, PUNCT, EOF
    text: str
    line: int
    col: int


def _tokenize(text: str, source: str) -> list[_Tok]:
    toks = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line, col = line + 1, 1
            i += 1
        elif ch.isspace():
            i += 1
            col += 1
        elif ch == "#":
            while i < n and text[i] != "\n":
                i += 1
        elif ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append(_Tok("IDENT", text[i:j], line, col))
            col += j - i
            i = j
        elif ch in ":;<>":
            toks.append(_Tok("PUNCT", ch, line, col))
            i += 1
            col += 1
        else:
            raise RuleSyntaxError(f"unexpected character {ch!r}", line, col, source=source)
    toks.append(_Tok("EOF", "", line, col))
    return toks


_WORD_CONSTRAINTS = ("nonzero", "zero", "noninc", "nondec", "dec", "inc", "const")
_ALL_CONSTRAINTS = _WORD_CONSTRAINTS + ("end<start", "end>start")


class _Parser:
    def __init__(self, text: str, source: str):
        self.source = source
        self.toks = _tokenize(text, source)
        self.pos = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.pos]

    def _error(self, expected, tok=None):
        tok = tok or self.tok
        found = "end of input" if tok.kind == "EOF" else repr(tok.text)
        raise RuleSyntaxError(f"unexpected {found}", tok.line, tok.col, expected, self.source)

    def _expect(self, kind, text=None) -> _Tok:
        tok = self.tok
        if tok.kind != kind or (text is not None and tok.text != text):
            self._error([text if text is not None else kind])
        self.pos += 1
        return tok

    def ruleset(self) -> RuleSet:
        rules = []
        seen = {}
        if self.tok.kind == "EOF":
            return RuleSet(())
        while True:
            start = self.tok
            rule = self.rule()
            if rule in seen:
                raise RuleSyntaxError(
                    f"duplicate constraint {rule.constraint!r} for {rule.variable!r} "
                    f"(first given at line {seen[rule][0]})",
                    start.line,
                    start.col,
                    source=self.source,
                )
            seen[rule] = (start.line, start.col)
            rules.append(rule)
            if self.tok.kind == "EOF":
                break
            self._expect("PUNCT", ";")
            if self.tok.kind == "EOF":
                break
        return RuleSet(tuple(rules))

    def rule(self) -> Rule:
        if self.tok.kind != "IDENT":
            self._error(["IDENT"])
        name = self._expect("IDENT").text
        self._expect("PUNCT", ":")
        return Rule(name, self.constraint())

    def constraint(self) -> str:
        tok = self.tok
        if tok.kind != "IDENT":
            self._error(_ALL_CONSTRAINTS)
        if tok.text in _WORD_CONSTRAINTS:
            self.pos += 1
            return tok.text
        if tok.text == "end":
            self.pos += 1
            op = self.tok
            if op.kind != "PUNCT" or op.text not in "<>":
                self._error(["<", ">"])
            self.pos += 1
            self._expect("IDENT", "start")
            return f"end{op.text}start"
        self._error(_ALL_CONSTRAINTS)


def parse_rules(text: str, source: str = "<rules>") -> RuleSet:
    return _Parser(text, source).ruleset()


def load_rules(path) -> RuleSet:
    path = Path(path)
    return parse_rules(path.read_text(encoding="utf-8"), source=str(path))


# --------------------------------------------------------------------------
# evaluation


def eval_rules(pattern: Pattern, rules: RuleSet, schema: Sequence[str]) -> bool:
    """Conjunction of all constraints over the pattern's per-variable component sequences."""
    bound = rules.bind(schema)
    return _eval_bound(pattern, bound, len(schema))


def _eval_bound(pattern: Pattern, bound, arity: int) -> bool:
    for sym in pattern:
        if len(sym) != arity:
            raise ValueError(f"symbol {sym} has arity {len(sym)}, schema has {arity}")
    for pos, check in bound:
        if not check([s[pos] for s in pattern]):
            return False
    return True


def filter_patterns(index: PatternIndex, rules: RuleSet, schema: Sequence[str]) -> PatternIndex:
    bound = rules.bind(schema)
    arity = len(schema)
    return PatternIndex({p: occ for p, occ in index.occurrences.items() if _eval_bound(p, bound, arity)})


@dataclass
class PrevalenceSeries:
    counts: np.ndarray  # (T,) partitions with an active matching occurrence
    active: np.ndarray  # (T, NPART) bool
    instances: np.ndarray  # (T,) raw count of active occurrences, overlaps counted separately
    arm: str = ""
    member: int = 0


def prevalence(
    filtered: PatternIndex, T: int, npart: int, arm: str | None = None, member: int | None = None
) -> PrevalenceSeries:
    """Partition-level activity: active at t iff some occurrence's time span contains t."""
    active = np.zeros((T, npart), dtype=bool)
    diff = np.zeros(T + 1, dtype=np.int64)
    for occ in filtered.occurrences.values():
        for o in occ:
            if (arm is not None and o.arm != arm) or (member is not None and o.member != member):
                continue
            active[o.t_start : o.t_end + 1, o.partition] = True
            diff[o.t_start] += 1
            diff[o.t_end + 1] -= 1
    return PrevalenceSeries(
        counts=active.sum(axis=1),
        active=active,
        instances=np.cumsum(diff)[:T],
        arm=arm or "",
        member=member or 0,
    )


def prevalence_significance(
    forced: Sequence[PrevalenceSeries], baseline: Sequence[PrevalenceSeries], alpha: float = 0.05
) -> SignificanceSeries:
    if len(forced) < 2 or len(baseline) < 2:
        raise ValueError("prevalence_significance needs >= 2 members per arm")
    return significance(
        np.stack([s.counts for s in forced]), np.stack([s.counts for s in baseline]), alpha
    )


def write_bitmap(series: PrevalenceSeries, path) -> Path:
    """Per-timestep row-major partition bits, each timestep padded to whole bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    packed = np.packbits(series.active, axis=1, bitorder="little")
    path.write_bytes(packed.tobytes())
    return path


def read_bitmap(path, T: int, npart: int) -> np.ndarray:
    raw = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    nbytes = (npart + 7) // 8
    if raw.size != T * nbytes:
        raise ValueError(f"bitmap has {raw.size} bytes, expected {T * nbytes}")
    return np.unpackbits(raw.reshape(T, nbytes), axis=1, bitorder="little")[:, :npart].astype(bool)
