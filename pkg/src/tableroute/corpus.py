"""Corpus data model and on-disk format.

A corpus directory holds:
    corpus.jsonl    one JSON record per example (no embeddings inline)
    embeddings.bin  little-endian float32, row-major, one flat array
    manifest.json   maps example id -> per-modality (element offset, dim)

Writing is serialized in example-id order, and embeddings are float32, so a
re-run with the same inputs reproduces the files bitwise.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import IngestError, InvalidArgumentError
from .experts import ExpertOutput
from .gate import GateInput
from .paths import EMBED_DIMS, KNOWN_DATASETS, MODALITIES

CORPUS_FILE = "corpus.jsonl"
SIDECAR_FILE = "embeddings.bin"
MANIFEST_FILE = "manifest.json"


@dataclass(frozen=True)
class Table:
    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        for row in self.rows:
            if len(row) != len(self.columns):
                raise InvalidArgumentError(
                    f"row width {len(row)} does not match {len(self.columns)} columns"
                )

    @staticmethod
    def _cell(value: str) -> str:
        return str(value).replace("\n", " ").replace("|", "\\|")

    def to_markdown(self) -> str:
        header = "| " + " | ".join(self._cell(c) for c in self.columns) + " |"
        sep = "| " + " | ".join("---" for _ in self.columns) + " |"
        body = [
            "| " + " | ".join(self._cell(c) for c in row) + " |" for row in self.rows
        ]
        return "\n".join([header, sep, *body])

    def serialize(self) -> str:
        """Canonical structural form; the hash key for simulated embeddings."""
        return json.dumps(
            {"columns": list(self.columns), "rows": [list(r) for r in self.rows]},
            separators=(",", ":"),
            ensure_ascii=False,
        )

    def to_json(self) -> dict:
        return {"columns": list(self.columns), "rows": [list(r) for r in self.rows]}

    @classmethod
    def from_json(cls, obj: dict) -> "Table":
        return cls(
            columns=tuple(str(c) for c in obj["columns"]),
            rows=tuple(tuple(str(c) for c in row) for row in obj["rows"]),
        )


@dataclass
class RoutingExample:
    """One table-query instance with per-path correctness scores."""

    id: str
    dataset: str
    question: str
    table: Table
    table_markdown: str
    path_scores: tuple[int, int, int]
    gold_answer: str
    embeddings: GateInput | None = None
    cached_expert_outputs: dict[str, ExpertOutput] = field(default_factory=dict)

    def __post_init__(self):
        if self.dataset not in KNOWN_DATASETS:
            raise InvalidArgumentError(
                f"example {self.id}: unknown dataset tag {self.dataset!r}"
            )
        if len(self.path_scores) != 3 or any(s not in (0, 1) for s in self.path_scores):
            raise InvalidArgumentError(
                f"example {self.id}: path_scores must be three 0/1 entries"
            )


def _example_to_json(ex: RoutingExample) -> dict:
    rec = {
        "id": ex.id,
        "dataset": ex.dataset,
        "question": ex.question,
        "table": ex.table.to_json(),
        "table_markdown": ex.table_markdown,
        "path_scores": list(ex.path_scores),
        "gold_answer": ex.gold_answer,
    }
    if ex.cached_expert_outputs:
        rec["expert_outputs"] = {
            path: {
                "answer": out.answer,
                "explanation": out.explanation,
                "latency_seconds": out.latency_seconds,
                "output_tokens": out.output_tokens,
            }
            for path, out in sorted(ex.cached_expert_outputs.items())
        }
    return rec


def _example_from_json(rec: dict) -> RoutingExample:
    outputs = {}
    for path, out in rec.get("expert_outputs", {}).items():
        outputs[path] = ExpertOutput(
            answer=out["answer"],
            explanation=out["explanation"],
            latency_seconds=out["latency_seconds"],
            output_tokens=out["output_tokens"],
        )
    return RoutingExample(
        id=rec["id"],
        dataset=rec["dataset"],
        question=rec["question"],
        table=Table.from_json(rec["table"]),
        table_markdown=rec["table_markdown"],
        path_scores=tuple(rec["path_scores"]),
        gold_answer=rec["gold_answer"],
        cached_expert_outputs=outputs,
    )


def write_corpus(directory: str | Path, examples: Sequence[RoutingExample]) -> None:
    """Write records, embedding sidecar, and manifest. Requires resolved embeddings."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ordered = sorted(examples, key=lambda e: e.id)
    ids = [e.id for e in ordered]
    if len(set(ids)) != len(ids):
        raise IngestError("duplicate example ids in corpus")

    chunks: list[np.ndarray] = []
    manifest_entries: dict[str, dict[str, list[int]]] = {}
    offset = 0
    with open(directory / CORPUS_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for ex in ordered:
            if ex.embeddings is None:
                raise IngestError(f"example {ex.id} has no embeddings to write")
            entry = {}
            for modality, vec in (
                ("question", ex.embeddings.question_embedding),
                ("text", ex.embeddings.text_embedding),
                ("vision", ex.embeddings.vision_embedding),
            ):
                arr = np.ascontiguousarray(vec, dtype="<f4").ravel()
                if arr.size != EMBED_DIMS[modality]:
                    raise IngestError(
                        f"example {ex.id}: {modality} embedding has {arr.size} dims, "
                        f"expected {EMBED_DIMS[modality]}"
                    )
                entry[modality] = [offset, arr.size]
                chunks.append(arr)
                offset += arr.size
            manifest_entries[ex.id] = entry
            fh.write(json.dumps(_example_to_json(ex), ensure_ascii=False, sort_keys=True))
            fh.write("\n")

    flat = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f4")
    flat.tofile(directory / SIDECAR_FILE)
    manifest = {
        "dtype": "<f4",
        "total_elements": int(flat.size),
        "entries": manifest_entries,
    }
    (directory / MANIFEST_FILE).write_text(
        json.dumps(manifest, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def load_corpus(directory: str | Path, resolve_embeddings: bool = True) -> list[RoutingExample]:
    """Load a corpus; every embedding ref must resolve or IngestError is raised."""
    directory = Path(directory)
    corpus_path = directory / CORPUS_FILE
    if not corpus_path.exists():
        raise IngestError(f"no corpus file at {corpus_path}")
    examples = []
    with open(corpus_path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                examples.append(_example_from_json(json.loads(line)))
            except (KeyError, ValueError) as e:
                raise IngestError(f"{corpus_path}:{line_no}: bad record ({e})") from e

    if resolve_embeddings:
        manifest_path = directory / MANIFEST_FILE
        sidecar_path = directory / SIDECAR_FILE
        if not manifest_path.exists() or not sidecar_path.exists():
            raise IngestError(f"missing embedding sidecar or manifest in {directory}")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        flat = np.fromfile(sidecar_path, dtype=manifest.get("dtype", "<f4"))
        entries = manifest["entries"]
        for ex in examples:
            entry = entries.get(ex.id)
            if entry is None:
                raise IngestError(f"example {ex.id}: no embedding manifest entry")
            vecs = {}
            for modality in MODALITIES:
                if modality not in entry:
                    raise IngestError(f"example {ex.id}: manifest missing {modality} ref")
                off, dim = entry[modality]
                if dim != EMBED_DIMS[modality]:
                    raise IngestError(
                        f"example {ex.id}: {modality} ref has dim {dim}, "
                        f"expected {EMBED_DIMS[modality]}"
                    )
                if off + dim > flat.size:
                    raise IngestError(f"example {ex.id}: {modality} ref beyond sidecar end")
                vecs[modality] = flat[off:off + dim].copy()
            ex.embeddings = GateInput(
                question_embedding=vecs["question"],
                text_embedding=vecs["text"],
                vision_embedding=vecs["vision"],
            )
    return examples


def split_by_dataset(examples: Iterable[RoutingExample]) -> dict[str, list[RoutingExample]]:
    groups: dict[str, list[RoutingExample]] = {}
    for ex in examples:
        groups.setdefault(ex.dataset, []).append(ex)
    return groups


def stratified_split(
    examples: Sequence[RoutingExample], val_fraction: float, seed: int
) -> tuple[list[RoutingExample], list[RoutingExample]]:
    """Deterministic train/val split, stratified per dataset tag."""
    if not 0.0 <= val_fraction < 1.0:
        raise InvalidArgumentError(f"val_fraction must be in [0, 1), got {val_fraction}")
    train: list[RoutingExample] = []
    val: list[RoutingExample] = []
    for dataset in sorted(split_by_dataset(examples)):
        group = sorted(
            (e for e in examples if e.dataset == dataset), key=lambda e: e.id
        )
        rng = np.random.Generator(np.random.PCG64(seed ^ hash_tag(dataset)))
        order = rng.permutation(len(group))
        n_val = int(round(val_fraction * len(group)))
        val_idx = set(order[:n_val].tolist())
        for i, ex in enumerate(group):
            (val if i in val_idx else train).append(ex)
    return train, val


def hash_tag(tag: str) -> int:
    """Small stable integer from a dataset tag, for seed mixing."""
    out = 0
    for ch in tag.encode("utf-8"):
        out = (out * 131 + ch) % (2**31)
    return out
