"""Deterministic rule-based labeler: extraction, negation, classification.

Findings are lexicon terms located by left-to-right longest match over
normalized tokens. A finding is negated when a trigger phrase points at it
within a bounded token window with no terminator in between. A sentence is
abnormal iff it keeps at least one non-negated abnormality finding; a report
is abnormal iff any of its sentences is.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Report, Sentence, split_sentences, tokenize
from .errors import InputError

CATEGORIES = ("abnormality", "normal_marker")
DIRECTIONS = ("pre", "post")


@dataclass(frozen=True)
class LexiconEntry:
    concept_id: str
    term: tuple[str, ...]  # normalized tokens
    category: str


@dataclass
class Lexicon:
    entries: list[LexiconEntry]

    def __post_init__(self) -> None:
        if not self.entries:
            raise InputError("lexicon is empty")
        seen: set[tuple[str, tuple[str, ...]]] = set()
        for entry in self.entries:
            if not entry.term:
                raise InputError(f"lexicon concept {entry.concept_id!r}: empty term")
            if entry.category not in CATEGORIES:
                raise InputError(
                    f"lexicon concept {entry.concept_id!r}: bad category {entry.category!r}"
                )
            key = (entry.concept_id, entry.term)
            if key in seen:
                raise InputError(f"duplicate lexicon entry {key!r}")
            seen.add(key)
        # First token -> candidate entries, longest term first, then file order.
        index: dict[str, list[LexiconEntry]] = {}
        order = {id(entry): i for i, entry in enumerate(self.entries)}
        for entry in self.entries:
            index.setdefault(entry.term[0], []).append(entry)
        for candidates in index.values():
            candidates.sort(key=lambda e: (-len(e.term), order[id(e)]))
        self._index = index

    def candidates(self, first_token: str) -> list[LexiconEntry]:
        return self._index.get(first_token, [])


@dataclass(frozen=True)
class NegationRule:
    trigger: tuple[str, ...]
    direction: str
    max_scope: int
    terminators: frozenset[str]

    def __post_init__(self) -> None:
        if not self.trigger:
            raise InputError("negation rule with empty trigger")
        if self.direction not in DIRECTIONS:
            raise InputError(f"negation direction must be pre|post, got {self.direction!r}")
        if self.max_scope < 1:
            raise InputError("negation max_scope must be >= 1")


@dataclass
class Finding:
    concept_id: str
    sentence_index: int
    token_span: tuple[int, int]
    negated: bool = False
    category: str = "abnormality"

    def to_record(self) -> dict:
        return {
            "concept_id": self.concept_id,
            "sentence": self.sentence_index,
            "span": list(self.token_span),
            "negated": self.negated,
        }


@dataclass
class RuleLabel:
    sentence_labels: list[int]
    report_label: int


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def _tsv_rows(path: Path) -> Iterable[tuple[int, list[str]]]:
    if not path.exists():
        raise InputError(f"file not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            stripped = line.strip("\n")
            if not stripped.strip() or stripped.lstrip().startswith("#"):
                continue
            yield lineno, stripped.split("\t")


def _term_tokens(text: str) -> tuple[str, ...]:
    return tuple(token.normalized for token in tokenize(text))


def load_lexicon(path: str | Path) -> Lexicon:
    """TSV columns: concept_id, term, category."""
    path = Path(path)
    entries = []
    for lineno, fields in _tsv_rows(path):
        if len(fields) != 3:
            raise InputError(f"{path}:{lineno}: expected 3 tab-separated columns")
        concept_id, term, category = (f.strip() for f in fields)
        if not concept_id:
            raise InputError(f"{path}:{lineno}: empty concept_id")
        entries.append(LexiconEntry(concept_id, _term_tokens(term), category))
    return Lexicon(entries)


def load_negation_rules(path: str | Path) -> list[NegationRule]:
    """TSV columns: trigger, direction, max_scope, comma-joined terminators."""
    path = Path(path)
    rules = []
    for lineno, fields in _tsv_rows(path):
        if len(fields) != 4:
            raise InputError(f"{path}:{lineno}: expected 4 tab-separated columns")
        trigger, direction, scope_text, terminators = (f.strip() for f in fields)
        try:
            max_scope = int(scope_text)
        except ValueError:
            raise InputError(f"{path}:{lineno}: max_scope must be an integer") from None
        terms = frozenset(t.strip() for t in terminators.split(",") if t.strip())
        rules.append(NegationRule(_term_tokens(trigger), direction, max_scope, terms))
    if not rules:
        raise InputError(f"{path}: no negation rules")
    return rules


def default_lexicon_path() -> Path:
    return Path(str(resources.files("radlabel") / "data" / "lexicon.tsv"))


def default_negation_rules_path() -> Path:
    return Path(str(resources.files("radlabel") / "data" / "negation_rules.tsv"))


# ---------------------------------------------------------------------------
# Labeling operations
# ---------------------------------------------------------------------------


def match_findings(sentence: Sentence, lexicon: Lexicon) -> list[Finding]:
    """Left-to-right longest match; matched spans are consumed."""
    tokens = [t.normalized for t in sentence.tokens]
    findings: list[Finding] = []
    i = 0
    while i < len(tokens):
        matched = None
        for entry in lexicon.candidates(tokens[i]):
            n = len(entry.term)
            if tuple(tokens[i : i + n]) == entry.term:
                matched = entry
                break  # candidates are longest-first, file order on ties
        if matched is None:
            i += 1
            continue
        end = i + len(matched.term)
        findings.append(
            Finding(
                concept_id=matched.concept_id,
                sentence_index=sentence.index,
                token_span=(i, end),
                category=matched.category,
            )
        )
        i = end
    return findings


def _trigger_occurrences(tokens: list[str], trigger: tuple[str, ...]) -> list[tuple[int, int]]:
    n = len(trigger)
    return [
        (i, i + n)
        for i in range(len(tokens) - n + 1)
        if tuple(tokens[i : i + n]) == trigger
    ]


def _rule_negates(
    tokens: list[str], rule: NegationRule, span: tuple[int, int]
) -> bool:
    start, end = span
    for t_start, t_end in _trigger_occurrences(tokens, rule.trigger):
        if rule.direction == "pre":
            gap = start - t_end
            between = range(t_end, start)
        else:
            gap = t_start - end
            between = range(end, t_start)
        if gap < 0 or gap >= rule.max_scope:
            continue
        if any(tokens[k] in rule.terminators for k in between):
            continue
        return True
    return False


def detect_negation(
    sentence: Sentence, findings: list[Finding], rules: Sequence[NegationRule]
) -> list[Finding]:
    """Set negated flags; the first matching rule in file order decides."""
    tokens = [t.normalized for t in sentence.tokens]
    for finding in findings:
        finding.negated = any(
            _rule_negates(tokens, rule, finding.token_span) for rule in rules
        )
    return findings


def classify_sentence(findings: Sequence[Finding]) -> int:
    """Abnormal iff any non-negated abnormality finding survives."""
    return int(
        any(not f.negated and f.category == "abnormality" for f in findings)
    )


def classify_report(sentence_labels: Sequence[int]) -> RuleLabel:
    if not sentence_labels:
        raise InputError("cannot classify a report with no sentences")
    return RuleLabel(
        sentence_labels=list(sentence_labels),
        report_label=int(any(sentence_labels)),
    )


def label_report(
    report: Report, lexicon: Lexicon, rules: Sequence[NegationRule]
) -> tuple[RuleLabel, list[Finding]]:
    """Full teacher pipeline for one report."""
    sentences = split_sentences(report)
    if not sentences:
        raise InputError(f"report {report.id!r} has no sentences")
    all_findings: list[Finding] = []
    labels: list[int] = []
    for sentence in sentences:
        findings = detect_negation(
            sentence, match_findings(sentence, lexicon), rules
        )
        all_findings.extend(findings)
        labels.append(classify_sentence(findings))
    return classify_report(labels), all_findings


def label_record(
    report: Report, lexicon: Lexicon, rules: Sequence[NegationRule]
) -> dict:
    """JSONL record for one labeled report."""
    rule_label, findings = label_report(report, lexicon, rules)
    return {
        "id": report.id,
        "report_label": rule_label.report_label,
        "sentence_labels": rule_label.sentence_labels,
        "findings": [f.to_record() for f in findings],
    }
