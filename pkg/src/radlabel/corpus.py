"""Report data model, ingestion, segmentation, vocabulary, and synthetic corpora.

Reports are plain text; sentences and tokens keep character offsets back into
the report so downstream stages can always point at the source. The synthetic
generator exists because desk-scale experiments need a corpus whose sentence
labels are knowable by construction.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError
from .ioutil import read_jsonl

BODY_REGIONS = frozenset(
    {"abdomen", "chest", "spine", "upper_extremity", "lower_extremity", "head_neck"}
)


@dataclass
class Token:
    surface: str
    normalized: str
    span: tuple[int, int]  # [start, end) character offsets


@dataclass
class Sentence:
    report_id: str
    index: int
    tokens: list[Token]
    char_span: tuple[int, int]


@dataclass
class Report:
    id: str
    text: str
    body_region: str | None = None
    gold_label: int | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise InputError("report id must be nonempty")
        if not self.text:
            raise InputError(f"report {self.id!r}: text must be nonempty")
        if self.body_region is not None and self.body_region not in BODY_REGIONS:
            raise InputError(
                f"report {self.id!r}: unknown body_region {self.body_region!r}"
            )
        if self.gold_label is not None and self.gold_label not in (0, 1):
            raise InputError(f"report {self.id!r}: gold_label must be 0 or 1")

    def to_record(self) -> dict:
        record: dict = {"id": self.id, "text": self.text}
        if self.body_region is not None:
            record["body_region"] = self.body_region
        if self.gold_label is not None:
            record["gold_label"] = self.gold_label
        return record


# ---------------------------------------------------------------------------
# Tokenization
# ---------------------------------------------------------------------------

# Alphanumeric runs, or any single non-space symbol (incl. underscore).
_TOKEN_RE = re.compile(r"[^\W_]+|[^\w\s]|_", re.UNICODE)


def tokenize(text: str, offset: int = 0) -> list[Token]:
    """Split text into alphanumeric-run and single-punctuation tokens."""
    return [
        Token(
            surface=match.group(0),
            normalized=match.group(0).lower(),
            span=(offset + match.start(), offset + match.end()),
        )
        for match in _TOKEN_RE.finditer(text)
    ]


# ---------------------------------------------------------------------------
# Sentence segmentation
# ---------------------------------------------------------------------------

# Words whose trailing period never ends a sentence. Single letters ("e",
# "g", middle initials) are guarded separately.
_ABBREVIATIONS = {
    "dr", "mr", "mrs", "ms", "prof", "st", "vs", "etc", "eg", "ie",
    "approx", "cf", "fig", "al", "resp",
}

_BLANK_LINE_RE = re.compile(r"\n[ \t]*\n")
_ENUMERATOR_RE = re.compile(r"^\(?(?:\d{1,2}|[A-Za-z])[.)]\s+")
# "Impression:", "Bones and joints:" -- at most three words before the colon.
_HEADER_RE = re.compile(r"^[A-Za-z][\w/-]*(?:[ ][A-Za-z][\w/-]*){0,2}:\s*")


def _word_before(text: str, pos: int) -> str:
    end = pos
    start = end
    while start > 0 and (text[start - 1].isalnum() or text[start - 1] == "_"):
        start -= 1
    return text[start:end].lower()


def _is_protected_period(text: str, pos: int) -> bool:
    """True when the period at pos is an abbreviation dot, a decimal point,
    or the dot of a list enumerator like "1." after a header or newline."""
    word = _word_before(text, pos)
    if word in _ABBREVIATIONS:
        return True
    if len(word) == 1 and word.isalpha():
        return True
    if pos + 1 < len(text) and pos > 0 and text[pos - 1].isdigit() and text[pos + 1].isdigit():
        return True
    if word.isdigit():
        # Enumerator when the digits open a list item: preceded (ignoring
        # whitespace) by nothing, a colon, a newline, or a terminator.
        i = pos - len(word)
        while i > 0 and text[i - 1] in " \t":
            i -= 1
        if i == 0 or text[i - 1] in ":\n.!?":
            return True
    return False


def _boundaries(text: str) -> list[tuple[int, int]]:
    """Return [start, end) spans of sentence-terminating delimiters."""
    spans: list[tuple[int, int]] = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch in "!?" or (ch == "." and not _is_protected_period(text, i)):
            j = i + 1
            while j < n and text[j] in ".!?":
                j += 1
            spans.append((i, j))
            i = j
        elif ch == "\n":
            match = _BLANK_LINE_RE.match(text, i)
            if match:
                spans.append((i, match.end()))
                i = match.end()
            else:
                i += 1
        else:
            i += 1
    return spans


def _strip_prefixes(text: str, start: int, end: int) -> int:
    """Advance start past whitespace, enumerators, and section headers."""
    while True:
        moved = False
        while start < end and text[start].isspace():
            start += 1
            moved = True
        segment = text[start:end]
        for pattern in (_ENUMERATOR_RE, _HEADER_RE):
            match = pattern.match(segment)
            if match and match.end() < len(segment):
                start += match.end()
                segment = text[start:end]
                moved = True
        if not moved:
            return start


def split_sentences(report: Report) -> list[Sentence]:
    """Segment a report into sentences with character spans into its text.

    Terminators are ., !, ? and blank lines, with guards for abbreviations,
    decimals, and list enumerators. Leading enumerators ("1.", "a)") and
    section headers ("Impression:") are treated as delimiter text and
    excluded from the sentence span.
    """
    text = report.text
    sentences: list[Sentence] = []
    cursor = 0
    segments: list[tuple[int, int]] = []
    for b_start, b_end in _boundaries(text):
        # Content span includes its terminator run but not blank lines.
        content_end = b_end if text[b_start] in ".!?" else b_start
        segments.append((cursor, content_end))
        cursor = b_end
    segments.append((cursor, len(text)))

    for seg_start, seg_end in segments:
        while seg_end > seg_start and text[seg_end - 1].isspace():
            seg_end -= 1
        start = _strip_prefixes(text, seg_start, seg_end)
        if start >= seg_end:
            continue
        tokens = tokenize(text[start:seg_end], offset=start)
        if not tokens:
            continue
        sentences.append(
            Sentence(
                report_id=report.id,
                index=len(sentences),
                tokens=tokens,
                char_span=(start, seg_end),
            )
        )
    return sentences


# ---------------------------------------------------------------------------
# Vocabulary and encoding
# ---------------------------------------------------------------------------

PAD_INDEX = 0
OOV_INDEX = 1


@dataclass
class Vocabulary:
    """Token-to-index map with reserved PAD=0 and OOV=1 entries."""

    token_to_index: dict[str, int]
    max_size: int

    @property
    def size(self) -> int:
        return len(self.token_to_index) + 2

    def index_of(self, normalized_token: str) -> int:
        return self.token_to_index.get(normalized_token, OOV_INDEX)

    def tokens_by_index(self) -> list[str]:
        """Tokens ordered by index, starting at index 2."""
        return sorted(self.token_to_index, key=self.token_to_index.__getitem__)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str], max_size: int) -> "Vocabulary":
        return cls(
            token_to_index={tok: i + 2 for i, tok in enumerate(tokens)},
            max_size=max_size,
        )


def build_vocabulary(sentences: Iterable[Sentence], max_size: int) -> Vocabulary:
    """Keep the most frequent normalized tokens, ties broken lexicographically."""
    if max_size < 3:
        raise InputError(f"vocabulary max_size must be >= 3, got {max_size}")
    counts: dict[str, int] = {}
    for sentence in sentences:
        for token in sentence.tokens:
            counts[token.normalized] = counts.get(token.normalized, 0) + 1
    ranked = sorted(counts, key=lambda tok: (-counts[tok], tok))
    return Vocabulary.from_tokens(ranked[: max_size - 2], max_size)


@dataclass
class EncodedSentence:
    indices: np.ndarray  # int32, length == max_len
    true_length: int
    label: int


def encode_tokens(
    normalized_tokens: Sequence[str], vocab: Vocabulary, max_len: int, label: int = 0
) -> EncodedSentence:
    """Map tokens to indices, truncate to max_len, right-pad with PAD."""
    if max_len < 1:
        raise InputError(f"max_len must be >= 1, got {max_len}")
    kept = normalized_tokens[:max_len]
    indices = np.full(max_len, PAD_INDEX, dtype=np.int32)
    for i, token in enumerate(kept):
        indices[i] = vocab.index_of(token)
    return EncodedSentence(indices=indices, true_length=len(kept), label=label)


def encode(sentence: Sentence, vocab: Vocabulary, max_len: int, label: int = 0) -> EncodedSentence:
    return encode_tokens([t.normalized for t in sentence.tokens], vocab, max_len, label)


def decode(encoded: EncodedSentence, vocab: Vocabulary) -> list[str]:
    """Inverse of encode for in-vocabulary tokens (OOV/PAD are symbolic)."""
    by_index = {index: token for token, index in vocab.token_to_index.items()}
    by_index[PAD_INDEX] = "<pad>"
    by_index[OOV_INDEX] = "<oov>"
    return [by_index[int(i)] for i in encoded.indices[: encoded.true_length]]


# ---------------------------------------------------------------------------
# Corpus ingestion
# ---------------------------------------------------------------------------


def load_corpus(path: str | Path, format: str = "jsonl") -> list[Report]:
    """Load reports from JSONL (canonical) or OpenI-style XML."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"corpus path does not exist: {path}")
    if format == "jsonl":
        reports = list(_load_jsonl(path))
    elif format == "openi_xml":
        reports = list(_load_openi_xml(path))
    else:
        raise InputError(f"unknown corpus format {format!r}")
    seen: set[str] = set()
    for report in reports:
        if report.id in seen:
            raise InputError(f"duplicate report id {report.id!r} in {path}")
        seen.add(report.id)
    return reports


def _load_jsonl(path: Path) -> Iterable[Report]:
    known = {"id", "text", "body_region", "gold_label"}
    for lineno, record in read_jsonl(path):
        unknown = set(record) - known
        if unknown:
            raise InputError(f"{path}: line {lineno}: unknown fields {sorted(unknown)}")
        if not isinstance(record.get("id"), str) or not isinstance(record.get("text"), str):
            raise InputError(f"{path}: line {lineno}: 'id' and 'text' must be strings")
        try:
            yield Report(
                id=record["id"],
                text=record["text"],
                body_region=record.get("body_region"),
                gold_label=record.get("gold_label"),
            )
        except InputError as exc:
            raise InputError(f"{path}: line {lineno}: {exc}") from exc


def _load_openi_xml(path: Path) -> Iterable[Report]:
    files = sorted(path.glob("*.xml")) if path.is_dir() else [path]
    if not files:
        raise InputError(f"no .xml files found under {path}")
    for file in files:
        try:
            root = ET.parse(file).getroot()
        except ET.ParseError as exc:
            raise InputError(f"{file}: XML parse error: {exc}") from exc
        records = root.findall(".//eCitation") or [root]
        for number, record in enumerate(records, start=1):
            yield _openi_record(record, file, number)


def _openi_record(record: ET.Element, file: Path, number: int) -> Report:
    report_id = None
    for tag in ("uId", "pmcId"):
        elem = record.find(f".//{tag}")
        if elem is not None and elem.get("id"):
            report_id = elem.get("id")
            break
    if report_id is None:
        raise InputError(f"{file}: record {number}: no uId/pmcId element")

    wanted = {"FINDINGS", "IMPRESSION"}
    parts = [
        (elem.text or "").strip()
        for elem in record.findall(".//AbstractText")
        if elem.get("Label", "").upper() in wanted and (elem.text or "").strip()
    ]
    if not parts:
        raise InputError(f"{file}: record {number} ({report_id}): empty FINDINGS/IMPRESSION")

    majors = [
        (elem.text or "").strip().lower() for elem in record.findall(".//MeSH/major")
    ]
    gold: int | None = None
    if majors:
        gold = 0 if any(term == "normal" for term in majors) else 1
    return Report(
        id=report_id, text="\n".join(parts), body_region="chest", gold_label=gold
    )


# ---------------------------------------------------------------------------
# Synthetic corpus generation
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _unit_rand(seed: int, *counters: int) -> float:
    """Uniform in [0, 1), a pure function of (seed, counters).

    Counter-based so generation is reproducible across platforms and a
    prefix of the corpus never depends on how many reports follow it.
    """
    z = _mix64(seed)
    for counter in counters:
        z = _mix64(z ^ _mix64((counter + 1) * _GOLDEN))
    return (z >> 11) * (1.0 / (1 << 53))


class _DrawStream:
    """Sequential uniform draws for one report."""

    def __init__(self, seed: int, report_index: int):
        self._seed = seed
        self._report = report_index
        self._count = 0

    def next(self) -> float:
        value = _unit_rand(self._seed, self._report, self._count)
        self._count += 1
        return value

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive."""
        return lo + int(self.next() * (hi - lo + 1))


_SLOT_RE = re.compile(r"\{([^{}]*)\}")


@dataclass
class Template:
    """One sentence pattern with an abnormal and a normal surface form.

    Texts may contain alternation slots like "{mild|moderate|severe}".
    """

    name: str
    body_region: str
    abnormal_probability: float
    abnormal_text: str
    normal_text: str
    weight: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.abnormal_probability <= 1.0:
            raise InputError(
                f"template {self.name!r}: abnormal_probability must be in [0,1]"
            )
        if self.body_region not in BODY_REGIONS:
            raise InputError(f"template {self.name!r}: unknown body_region")
        if self.weight <= 0:
            raise InputError(f"template {self.name!r}: weight must be positive")


@dataclass
class SyntheticSpec:
    seed: int
    n_reports: int
    templates: list[Template]
    sentences_per_report: tuple[int, int]

    def __post_init__(self) -> None:
        lo, hi = self.sentences_per_report
        if not (1 <= lo <= hi):
            raise InputError("sentences_per_report must satisfy 1 <= lo <= hi")
        if self.n_reports < 1:
            raise InputError("n_reports must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        try:
            templates = [Template(**t) for t in data["templates"]]
            return cls(
                seed=int(data["seed"]),
                n_reports=int(data["n_reports"]),
                templates=templates,
                sentences_per_report=tuple(data["sentences_per_report"]),
            )
        except (KeyError, TypeError) as exc:
            raise InputError(f"invalid synthetic spec: {exc}") from exc


@dataclass
class SentenceDraw:
    """Provenance of one generated sentence, used by evaluation code."""

    template_name: str
    abnormal: bool


def _render(text: str, stream: _DrawStream) -> str:
    def pick(match: re.Match) -> str:
        options = match.group(1).split("|")
        return options[stream.randint(0, len(options) - 1)]

    return _SLOT_RE.sub(pick, text)


def generate_synthetic_detailed(
    spec: SyntheticSpec,
) -> tuple[list[Report], list[list[SentenceDraw]]]:
    """Generate reports plus per-sentence provenance."""
    if not spec.templates:
        raise InputError("synthetic spec has no templates")
    regions = sorted({t.body_region for t in spec.templates})
    by_region = {
        region: [t for t in spec.templates if t.body_region == region]
        for region in regions
    }
    lo, hi = spec.sentences_per_report

    reports: list[Report] = []
    draws: list[list[SentenceDraw]] = []
    for i in range(spec.n_reports):
        stream = _DrawStream(spec.seed, i)
        region = regions[stream.randint(0, len(regions) - 1)]
        candidates = by_region[region]
        total_weight = sum(t.weight for t in candidates)
        n_sentences = stream.randint(lo, hi)

        sentences: list[str] = []
        report_draws: list[SentenceDraw] = []
        for _ in range(n_sentences):
            ticket = stream.next() * total_weight
            cumulative = 0.0
            template = candidates[-1]
            for candidate in candidates:
                cumulative += candidate.weight
                if ticket < cumulative:
                    template = candidate
                    break
            abnormal = stream.next() < template.abnormal_probability
            text = template.abnormal_text if abnormal else template.normal_text
            sentences.append(_render(text, stream))
            report_draws.append(SentenceDraw(template.name, abnormal))

        reports.append(
            Report(
                id=f"synth-{i:06d}",
                text=" ".join(sentences),
                body_region=region,
                gold_label=int(any(d.abnormal for d in report_draws)),
            )
        )
        draws.append(report_draws)
    return reports, draws


def generate_synthetic(spec: SyntheticSpec) -> list[Report]:
    """Deterministic synthetic corpus; a pure function of (spec, seed)."""
    return generate_synthetic_detailed(spec)[0]
