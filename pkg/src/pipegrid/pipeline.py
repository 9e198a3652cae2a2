"""Grid board, its compilation to a pipeline DAG, execution and k-fold scoring.

Cells are addressed by a 1-based linear index ``(row - 1) * 6 + col``; source
0 is the raw dataset. Population order equals linear order, so every edge runs
from a lower index to a higher one.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .primitives import (
    Family,
    InvalidPipeline,
    apply,
    can_accept,
    fit_apply,
    merge_inputs,
    primitive,
)
from .tabular import Table, kfold_split

N_COLS = 6
RAW = 0
BLANK = "blank"

PIPELINE_META_NAMES = (
    "n_vertices",
    "n_edges",
    "n_estimators",
    "n_blanks",
    "max_in_degree",
    "max_path_length",
    "mean_out_degree",
)


def cell_index(row: int, col: int) -> int:
    return (row - 1) * N_COLS + col


def cell_coords(index: int) -> tuple[int, int]:
    return (index - 1) // N_COLS + 1, (index - 1) % N_COLS + 1


@dataclass(frozen=True)
class PipelineStep:
    primitive_id: int
    inputs: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(int(i) for i in self.inputs))
        if not self.inputs:
            raise ValueError("a pipeline step needs at least one input")
        if len(set(self.inputs)) != len(self.inputs):
            raise ValueError("input refs must be distinct")


class Grid:
    """6 x N board. A cell is None (unvisited), BLANK, or a PipelineStep."""

    def __init__(self, rows: int):
        if rows < 1:
            raise ValueError("grid needs at least one row")
        self.rows = rows
        self.cells: list[PipelineStep | str | None] = [None] * (rows * N_COLS)
        self.cursor = 1

    @property
    def n_cells(self) -> int:
        return self.rows * N_COLS

    @property
    def done(self) -> bool:
        return self.cursor > self.n_cells

    @property
    def cursor_coords(self) -> tuple[int, int] | None:
        return None if self.done else cell_coords(self.cursor)

    def __getitem__(self, index: int):
        return self.cells[index - 1]

    def place(self, content: PipelineStep | str) -> int:
        if self.done:
            raise RuntimeError("grid cursor is off the grid")
        index = self.cursor
        if isinstance(content, PipelineStep):
            _, col = cell_coords(index)
            if primitive(content.primitive_id).family != col:
                raise ValueError(
                    f"primitive {content.primitive_id} does not belong to column {col}"
                )
            for ref in content.inputs:
                if ref != RAW:
                    if not 1 <= ref < index or not isinstance(self[ref], PipelineStep):
                        raise ValueError(f"input ref {ref} is not an earlier populated cell")
                    if cell_coords(ref)[1] > col:
                        raise ValueError(f"input ref {ref} lies in a later column")
        elif content != BLANK:
            raise ValueError(f"cannot place {content!r}")
        self.cells[index - 1] = content
        self.cursor += 1
        return index

    def populated(self) -> list[tuple[int, PipelineStep]]:
        return [(i, c) for i, c in enumerate(self.cells, start=1) if isinstance(c, PipelineStep)]

    def last_in_row(self, row: int, before_col: int) -> int:
        """Last populated cell in ``row`` left of ``before_col``; RAW if none."""
        for col in range(before_col - 1, 0, -1):
            idx = cell_index(row, col)
            if isinstance(self[idx], PipelineStep):
                return idx
        return RAW

    @classmethod
    def from_rows(cls, layout: list[list]) -> "Grid":
        """Build a completed grid from rows of ``None``/``(pid, inputs)`` entries."""
        g = cls(len(layout))
        for row in layout:
            if len(row) != N_COLS:
                raise ValueError("each row needs six entries")
            for entry in row:
                g.place(BLANK if entry is None else PipelineStep(entry[0], tuple(entry[1])))
        return g


@dataclass
class PipelineDag:
    rows: int
    steps: dict[int, PipelineStep] = field(default_factory=dict)

    @property
    def vertices(self) -> list[int]:
        return [RAW] + sorted(self.steps)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(ref, v) for v in sorted(self.steps) for ref in self.steps[v].inputs]

    def out_degree(self) -> dict[int, int]:
        deg = {v: 0 for v in self.vertices}
        for u, _ in self.edges:
            deg[u] += 1
        return deg

    @property
    def terminals(self) -> list[int]:
        return [v for v, d in self.out_degree().items() if d == 0]

    def is_predictor(self, v: int) -> bool:
        return v != RAW and primitive(self.steps[v].primitive_id).is_predictor

    def ancestors(self, targets: Iterable[int]) -> set[int]:
        seen, stack = set(), list(targets)
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            if v != RAW:
                stack.extend(self.steps[v].inputs)
        return seen

    def check(self) -> None:
        """Assert acyclicity (edges go forward) and reachability from RAW."""
        for u, v in self.edges:
            if not u < v:
                raise AssertionError(f"edge {u}->{v} runs backwards")
            if u != RAW and cell_coords(u)[1] > cell_coords(v)[1]:
                raise AssertionError(f"edge {u}->{v} runs to an earlier column")
        reach = {RAW}
        for v in sorted(self.steps):
            if any(ref in reach for ref in self.steps[v].inputs):
                reach.add(v)
        if reach != set(self.vertices):
            raise AssertionError("vertex unreachable from raw source")

    def structural_key(self) -> str:
        return json.dumps(
            [[v, s.primitive_id, list(s.inputs)] for v, s in sorted(self.steps.items())]
        )


def compile_grid(g: Grid) -> PipelineDag:
    """Blank cells drop out; each step's first input is already the previous
    populated cell of its row (or RAW), so data skips over blanks."""
    dag = PipelineDag(g.rows)
    for idx, step in g.populated():
        row, col = cell_coords(idx)
        expected = g.last_in_row(row, col)
        if step.inputs[0] != expected:
            raise ValueError(
                f"cell {idx}: first input {step.inputs[0]} is not the row's previous output {expected}"
            )
        dag.steps[idx] = step
    dag.check()
    return dag


@dataclass(frozen=True)
class Final:
    rule: str  # "single", "combiner", "vote" or "invalid"
    vertices: tuple[int, ...] = ()

    @property
    def valid(self) -> bool:
        return self.rule != "invalid"


def finalize(dag: PipelineDag) -> Final:
    """Pick the vertex (or vote) that produces the pipeline's prediction."""
    if not any(dag.is_predictor(v) for v in dag.steps):
        return Final("invalid")
    terminal = [v for v in dag.terminals if dag.is_predictor(v)]
    combiners = [v for v in terminal if primitive(dag.steps[v].primitive_id).family == Family.COMBINER]
    if len(terminal) == 1:
        return Final("single", (terminal[0],))
    if len(combiners) == 1:
        return Final("combiner", (combiners[0],))
    if combiners:
        return Final("vote", tuple(combiners))
    return Final("vote", tuple(terminal))


@dataclass
class Predictions:
    labels: np.ndarray  # class codes
    scores: np.ndarray  # (n, n_classes)


def _vertex_seed(seed: int, v: int) -> int:
    return int(np.random.SeedSequence([seed, v]).generate_state(1)[0])


def _predictions_of(t: Table, v: int, n_classes: int) -> Predictions:
    cols = {c.lineage: c for c in t.features}
    pred = cols[f"cellpredict/{v}"]
    lookup = {c: i for i, c in enumerate(t.classes)}
    labels = np.array([lookup[x] for x in pred.values], dtype=np.int64)
    scores = np.column_stack([cols[f"cellscore/{v}/{c}"].values for c in t.classes])
    return Predictions(labels, scores)


def majority_vote(preds: list[Predictions], n_classes: int) -> Predictions:
    votes = np.zeros((len(preds[0].labels), n_classes))
    for p in preds:
        votes[np.arange(len(p.labels)), p.labels] += 1.0
    # argmax returns the first maximum: lowest class index wins ties
    return Predictions(np.argmax(votes, axis=1), votes / len(preds))


def execute(dag: PipelineDag, train: Table, test: Table, seed: int, final: Final | None = None) -> Predictions:
    """Fit every vertex the final output depends on using train-side inputs and
    apply it to test-side inputs; return the final test predictions."""
    final = final or finalize(dag)
    if not final.valid:
        raise InvalidPipeline("pipeline has no estimator")
    if train.classes != test.classes:
        raise ValueError("train and test tables disagree on the class list")
    needed = dag.ancestors(final.vertices)
    train_out = {RAW: train}
    test_out = {RAW: test}
    for v in sorted(needed - {RAW}):
        step = dag.steps[v]
        spec = primitive(step.primitive_id)
        tr_in = merge_inputs([train_out[r] for r in step.inputs])
        te_in = merge_inputs([test_out[r] for r in step.inputs])
        if not can_accept(spec, tr_in):
            raise InvalidPipeline(f"cell {v}: {spec.name} rejects its input")
        fitted, train_out[v] = fit_apply(spec, tr_in, _vertex_seed(seed, v), tag=v)
        test_out[v] = apply(fitted, te_in)
    preds = [_predictions_of(test_out[v], v, test.n_classes) for v in final.vertices]
    if final.rule == "vote":
        return majority_vote(preds, test.n_classes)
    return preds[0]


def accuracy(labels: np.ndarray, truth: np.ndarray) -> float:
    return float(np.mean(np.asarray(labels) == np.asarray(truth)))


def evaluate_kfold(dag: PipelineDag, train: Table, k: int = 3, metric: str = "accuracy", seed: int = 0) -> float | None:
    """Mean validation metric over ``k`` stratified folds; None if invalid."""
    if metric != "accuracy":
        raise ValueError(f"unsupported metric {metric!r}")
    final = finalize(dag)
    if not final.valid:
        return None
    scores = []
    for fold, (tr, va) in enumerate(kfold_split(train, k, seed)):
        try:
            preds = execute(dag, tr, va, _vertex_seed(seed, 10_000 + fold), final)
        except InvalidPipeline:
            return None
        scores.append(accuracy(preds.labels, va.y))
    return float(np.mean(scores))


def pipeline_meta(dag: PipelineDag, g: Grid | None = None) -> np.ndarray:
    vertices = dag.vertices
    edges = dag.edges
    in_deg = {v: 0 for v in vertices}
    for _, v in edges:
        in_deg[v] += 1
    longest = {RAW: 0}
    for v in sorted(dag.steps):
        longest[v] = 1 + max(longest[r] for r in dag.steps[v].inputs)
    n_blanks = sum(1 for c in g.cells if c == BLANK) if g is not None else 0
    return np.array(
        [
            len(vertices),
            len(edges),
            sum(1 for v in dag.steps if dag.is_predictor(v)),
            n_blanks,
            max(in_deg.values()),
            max(longest.values()),
            len(edges) / len(vertices),
        ],
        dtype=np.float64,
    )


# -- serialization ------------------------------------------------------------


def to_json(dag: PipelineDag) -> dict:
    final = finalize(dag)
    vertices = []
    for v in sorted(dag.steps):
        step = dag.steps[v]
        spec = primitive(step.primitive_id)
        row, col = cell_coords(v)
        vertices.append(
            {
                "cell": v,
                "row": row,
                "col": col,
                "primitive": spec.id,
                "name": spec.name,
                "hyperparameters": dict(spec.hyperparameters),
                "inputs": list(step.inputs),
            }
        )
    return {
        "rows": dag.rows,
        "vertices": vertices,
        "edges": [list(e) for e in dag.edges],
        "final": {"rule": final.rule, "vertices": list(final.vertices)},
    }


def from_json(data: dict) -> PipelineDag:
    dag = PipelineDag(int(data["rows"]))
    for vert in data["vertices"]:
        dag.steps[int(vert["cell"])] = PipelineStep(int(vert["primitive"]), tuple(vert["inputs"]))
    dag.check()
    return dag


def save_pipeline(dag: PipelineDag, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_json(dag), fh, indent=2)


def load_pipeline(path) -> PipelineDag:
    with open(path) as fh:
        return from_json(json.load(fh))


def to_dot(dag: PipelineDag) -> str:
    final = set(finalize(dag).vertices)
    lines = ["digraph pipeline {", "  rankdir=LR;", '  v0 [label="raw data", shape=box];']
    for v in sorted(dag.steps):
        row, col = cell_coords(v)
        name = primitive(dag.steps[v].primitive_id).name
        shape = "doublecircle" if v in final else "ellipse"
        lines.append(f'  v{v} [label="{name}\\n({row},{col})", shape={shape}];')
    for u, v in dag.edges:
        lines.append(f"  v{u} -> v{v};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def summarize(dag: PipelineDag) -> str:
    final = finalize(dag)
    out = [f"pipeline: {len(dag.vertices)} vertices, {len(dag.edges)} edges, final rule {final.rule}"]
    for v in sorted(dag.steps):
        row, col = cell_coords(v)
        step = dag.steps[v]
        mark = " *" if v in final.vertices else ""
        out.append(
            f"  ({row},{col}) {primitive(step.primitive_id).name} <- {list(step.inputs)}{mark}"
        )
    return "\n".join(out)
