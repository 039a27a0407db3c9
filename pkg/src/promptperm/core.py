"""Domain types, dataset handling, permutation validity, and prompt assembly.

A prompt is represented as a sequence of segments (literal text, separator
slots, one mask slot) rather than a flat string, so the same assembly serves
both a literal separator string and a learned separator embedding.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ContractViolation, DatasetError

TASK_KINDS = ("sentiment", "nli", "fact-retrieval")

# Name of the answer slot inside each task's example pattern.
LABEL_SLOTS = {"sentiment": "label", "nli": "label", "fact-retrieval": "object"}

DEFAULT_PATTERNS = {
    "sentiment": "{text} Answer: {label}",
    "nli": '"{premise}" implies "{hypothesis}" Answer: {label}',
    "fact-retrieval": "{subject} is related to {object}",
}


@dataclass(frozen=True)
class Example:
    """One training/validation/test item.

    ``text`` holds the task input (the premise for NLI, the subject for fact
    retrieval); ``text_pair`` holds the NLI hypothesis.  ``label`` is a label
    id for classification tasks or the gold object token for fact retrieval.
    """

    index: int
    text: str
    label: str
    text_pair: str | None = None
    split: str = "train"

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ContractViolation(f"example index must be >= 0, got {self.index}")
        if not self.text:
            raise ContractViolation("example text must be non-empty")


@dataclass(frozen=True)
class LabelSet:
    """Ordered (label id, surface text) pairs for a classification task."""

    entries: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        surfaces = [s for _, s in self.entries]
        if len(self.entries) < 2:
            raise ContractViolation("a label set needs at least 2 labels")
        if any(not s for s in surfaces) or len(set(surfaces)) != len(surfaces):
            raise ContractViolation("label surface texts must be distinct and non-empty")
        ids = [i for i, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ContractViolation("label ids must be distinct")

    @property
    def n_labels(self) -> int:
        return len(self.entries)

    def ids(self) -> tuple[str, ...]:
        return tuple(i for i, _ in self.entries)

    def surfaces(self) -> tuple[str, ...]:
        return tuple(s for _, s in self.entries)

    def surface(self, label_id: str) -> str:
        for lid, s in self.entries:
            if lid == label_id:
                return s
        raise ContractViolation(f"unknown label id {label_id!r}")


@dataclass(frozen=True)
class Permutation:
    """Ordered sequence of k unique training-example indices."""

    indices: tuple[int, ...]

    def __post_init__(self) -> None:
        problem = validate_permutation(self.indices)
        if problem is not None:
            raise ContractViolation(problem)

    @property
    def k(self) -> int:
        return len(self.indices)


def validate_permutation(indices: Sequence[int] | Permutation, n_train: int | None = None) -> str | None:
    """Return None if ``indices`` is a valid permutation, else a diagnosis.

    With ``n_train`` given, every index must also fall in [0, n_train).
    """
    if isinstance(indices, Permutation):
        indices = indices.indices
    seen: set[int] = set()
    for pos, idx in enumerate(indices):
        if idx < 0:
            return f"index {idx} at position {pos} is negative"
        if n_train is not None and idx >= n_train:
            return f"index {idx} at position {pos} out of range for N_train={n_train}"
        if idx in seen:
            return f"duplicate index {idx} at position {pos}"
        seen.add(idx)
    return None


@dataclass(frozen=True)
class Dataset:
    train: tuple[Example, ...]
    validation: tuple[Example, ...] = ()
    test: tuple[Example, ...] = ()
    label_set: LabelSet | None = None

    @property
    def n_train(self) -> int:
        return len(self.train)

    def split(self, name: str) -> tuple[Example, ...]:
        if name not in ("train", "validation", "test"):
            raise ContractViolation(f"unknown split {name!r}")
        return getattr(self, name)


# ---------------------------------------------------------------------------
# Prompt segments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    kind: str  # "text" | "sep" | "mask"
    text: str = ""


SEP_SEGMENT = Segment("sep")
MASK_SEGMENT = Segment("mask")


@dataclass(frozen=True)
class PromptMeta:
    """Provenance of an assembled prompt (which examples, which query).

    Carried alongside the segments so deterministic desk-scale oracles can
    score a prompt without parsing text; remote oracles ignore it.
    """

    context_indices: tuple[int, ...]
    query_split: str
    query_index: int


@dataclass(frozen=True)
class PromptText:
    segments: tuple[Segment, ...]
    meta: PromptMeta | None = None

    @property
    def n_masks(self) -> int:
        return sum(1 for s in self.segments if s.kind == "mask")

    @property
    def n_separators(self) -> int:
        return sum(1 for s in self.segments if s.kind == "sep")

    def flatten(self, mask_symbol: str = "[MASK]", separator: str = "\n") -> str:
        parts = []
        for seg in self.segments:
            if seg.kind == "text":
                parts.append(seg.text)
            elif seg.kind == "sep":
                parts.append(separator)
            elif seg.kind == "mask":
                parts.append(mask_symbol)
            else:
                raise ContractViolation(f"unknown segment kind {seg.kind!r}")
        return "".join(parts)


@dataclass(frozen=True)
class PromptTemplate:
    """Per-task formatting pattern plus mask/separator symbols.

    The pattern must contain the task's answer slot exactly once; any other
    named slots are filled from the example's fields.
    """

    task: str
    pattern: str
    mask_symbol: str = "[MASK]"
    separator: str = "\n"

    def __post_init__(self) -> None:
        if self.task not in TASK_KINDS:
            raise ContractViolation(f"unknown task kind {self.task!r}")
        slot = LABEL_SLOTS[self.task]
        n = sum(1 for _, name, _, _ in string.Formatter().parse(self.pattern) if name == slot)
        if n != 1:
            raise ContractViolation(
                f"pattern must contain the {{{slot}}} slot exactly once, found {n}"
            )

    @property
    def label_slot(self) -> str:
        return LABEL_SLOTS[self.task]

    def _fields(self, ex: Example) -> dict[str, str]:
        if self.task == "sentiment":
            return {"text": ex.text}
        if self.task == "nli":
            if ex.text_pair is None:
                raise ContractViolation("NLI examples need a text_pair (hypothesis)")
            return {"premise": ex.text, "hypothesis": ex.text_pair}
        return {"subject": ex.text}

    def _answer_text(self, ex: Example, label_set: LabelSet | None) -> str:
        if self.task == "fact-retrieval":
            return ex.label
        if label_set is None:
            raise ContractViolation("classification rendering needs a label set")
        return label_set.surface(ex.label)

    def render_example(self, ex: Example, label_set: LabelSet | None) -> str:
        """Render one in-context example with its answer filled in."""
        values = self._fields(ex)
        values[self.label_slot] = self._answer_text(ex, label_set)
        return self.pattern.format(**values)

    def render_query(self, ex: Example) -> tuple[str, str]:
        """Render the query with the answer slot left open.

        Returns the literal text before and after the mask position.
        """
        values = self._fields(ex)
        before: list[str] = []
        after: list[str] = []
        target = before
        for literal, name, _, _ in string.Formatter().parse(self.pattern):
            target.append(literal)
            if name is None:
                continue
            if name == self.label_slot:
                target = after
            else:
                target.append(values[name])
        return "".join(before), "".join(after)


def assemble_prompt(
    indices: Sequence[int] | Permutation,
    query: Example,
    tmpl: PromptTemplate,
    dataset: Dataset,
    drop_query: bool = False,
) -> PromptText:
    """Concatenate the selected training examples and the masked query.

    ``indices`` is normally a valid Permutation; plain index sequences with
    repetition are accepted for one-shot prompt growth.  With ``drop_query``
    set, any occurrence of the query itself (same train index) is omitted
    from the in-context examples.
    """
    return PromptAssembler(dataset, tmpl).assemble(indices, query, drop_query)


class PromptAssembler:
    """assemble_prompt with per-dataset render caching for hot loops."""

    def __init__(self, dataset: Dataset, tmpl: PromptTemplate):
        self.dataset = dataset
        self.tmpl = tmpl
        self._rendered: dict[int, Segment] = {}
        self._query_cache: dict[tuple[str, int], tuple[Segment, ...]] = {}

    def _example_segment(self, idx: int) -> Segment:
        seg = self._rendered.get(idx)
        if seg is None:
            ex = self.dataset.train[idx]
            seg = Segment("text", self.tmpl.render_example(ex, self.dataset.label_set))
            self._rendered[idx] = seg
        return seg

    def _query_segments(self, query: Example) -> tuple[Segment, ...]:
        key = (query.split, query.index)
        segs = self._query_cache.get(key)
        if segs is None:
            before, after = self.tmpl.render_query(query)
            parts = [Segment("text", before), MASK_SEGMENT]
            if after:
                parts.append(Segment("text", after))
            segs = tuple(parts)
            self._query_cache[key] = segs
        return segs

    def assemble(
        self,
        indices: Sequence[int] | Permutation,
        query: Example,
        drop_query: bool = False,
    ) -> PromptText:
        if isinstance(indices, Permutation):
            indices = indices.indices
        n_train = self.dataset.n_train
        for idx in indices:
            if idx < 0 or idx >= n_train:
                raise ContractViolation(
                    f"index {idx} out of range for N_train={n_train}"
                )
        if drop_query and query.split == "train":
            effective = tuple(i for i in indices if i != query.index)
        else:
            effective = tuple(indices)

        segments: list[Segment] = []
        for idx in effective:
            segments.append(self._example_segment(idx))
            segments.append(SEP_SEGMENT)
        segments.extend(self._query_segments(query))
        meta = PromptMeta(effective, query.split, query.index)
        return PromptText(tuple(segments), meta)


# ---------------------------------------------------------------------------
# Dataset files: line-delimited JSON records
# ---------------------------------------------------------------------------

def _example_from_record(
    record: Mapping, task: str, index: int, split: str, label_set: LabelSet | None
) -> Example:
    if task == "fact-retrieval":
        for key in ("subject", "object"):
            if key not in record:
                raise KeyError(key)
        return Example(index=index, text=record["subject"], label=record["object"], split=split)
    if "label" not in record:
        raise KeyError("label")
    label = str(record["label"])
    if label_set is not None and label not in label_set.ids():
        raise DatasetError(f"unknown label {label!r}")
    if task == "nli":
        for key in ("premise", "hypothesis"):
            if key not in record:
                raise KeyError(key)
        return Example(
            index=index,
            text=record["premise"],
            label=label,
            text_pair=record["hypothesis"],
            split=split,
        )
    if "text" not in record:
        raise KeyError("text")
    return Example(index=index, text=record["text"], label=label, split=split)


def load_examples(
    path: str | Path,
    task: str,
    label_set: LabelSet | None = None,
    split: str = "train",
) -> tuple[Example, ...]:
    """Load one split from a JSONL file; examples are indexed in file order."""
    if task not in TASK_KINDS:
        raise DatasetError(f"unknown task kind {task!r}")
    path = Path(path)
    examples: list[Example] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
            if not isinstance(record, dict):
                raise DatasetError(f"{path}:{lineno}: record must be a JSON object")
            try:
                examples.append(
                    _example_from_record(record, task, len(examples), split, label_set)
                )
            except KeyError as exc:
                raise DatasetError(f"{path}:{lineno}: record missing field {exc.args[0]!r}") from exc
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    if not examples:
        raise DatasetError(f"{path}: no examples")
    return tuple(examples)


def infer_label_set(examples: Iterable[Example]) -> LabelSet:
    """Build a label set from labels in order of first appearance."""
    seen: list[str] = []
    for ex in examples:
        if ex.label not in seen:
            seen.append(ex.label)
    return LabelSet(tuple((lbl, lbl) for lbl in seen))


def load_dataset(
    train_path: str | Path,
    task: str,
    label_set: LabelSet | None = None,
    validation_path: str | Path | None = None,
    test_path: str | Path | None = None,
) -> Dataset:
    train = load_examples(train_path, task, label_set, split="train")
    if task != "fact-retrieval" and label_set is None:
        label_set = infer_label_set(train)
        train = load_examples(train_path, task, label_set, split="train")
    validation: tuple[Example, ...] = ()
    test: tuple[Example, ...] = ()
    if validation_path is not None:
        validation = load_examples(validation_path, task, label_set, split="validation")
    if test_path is not None:
        test = load_examples(test_path, task, label_set, split="test")
    return Dataset(train=train, validation=validation, test=test, label_set=label_set)


def dump_examples(examples: Iterable[Example], path: str | Path, task: str) -> None:
    """Serialize examples back to the JSONL interchange format."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for ex in examples:
            if task == "fact-retrieval":
                record = {"subject": ex.text, "object": ex.label}
            elif task == "nli":
                record = {"premise": ex.text, "hypothesis": ex.text_pair, "label": ex.label}
            else:
                record = {"text": ex.text, "label": ex.label}
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def default_label_set(task: str) -> LabelSet | None:
    if task == "sentiment":
        return LabelSet((("negative", "false"), ("positive", "true")))
    if task == "nli":
        return LabelSet((("contradiction", "false"), ("entailment", "true")))
    return None


def default_template(task: str, separator: str = "\n") -> PromptTemplate:
    return PromptTemplate(task=task, pattern=DEFAULT_PATTERNS[task], separator=separator)


def load_template_config(path: str | Path) -> dict[str, tuple[PromptTemplate, LabelSet | None]]:
    """Load template definitions keyed by task name from a JSON config file.

    Each entry: {"task": kind, "pattern": str, "mask"?: str, "separator"?: str,
    "labels"?: [[id, surface], ...]}.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise DatasetError(f"{path}: template config must be a JSON object")
    out: dict[str, tuple[PromptTemplate, LabelSet | None]] = {}
    for name, entry in raw.items():
        if not isinstance(entry, dict) or "task" not in entry or "pattern" not in entry:
            raise DatasetError(f"{path}: entry {name!r} needs 'task' and 'pattern'")
        tmpl = PromptTemplate(
            task=entry["task"],
            pattern=entry["pattern"],
            mask_symbol=entry.get("mask", "[MASK]"),
            separator=entry.get("separator", "\n"),
        )
        labels = entry.get("labels")
        label_set = LabelSet(tuple((str(i), str(s)) for i, s in labels)) if labels else None
        out[name] = (tmpl, label_set)
    return out
