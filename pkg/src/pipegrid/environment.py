"""Grid-world MDP: open-list generation, state encoding, rewards, episodes.

The cursor walks the 6 x N board row-major once. At each cell the agent picks
an (primitive, input refs) candidate from the open list or leaves the cell
blank. When the cursor leaves the board the grid is compiled and the pipeline
is scored by k-fold accuracy on the episode's training table.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Callable

import numpy as np

from .pipeline import (
    BLANK,
    N_COLS,
    PIPELINE_META_NAMES,
    RAW,
    Grid,
    PipelineDag,
    PipelineStep,
    cell_coords,
    cell_index,
    compile_grid,
    evaluate_kfold,
    pipeline_meta,
)
from .primitives import (
    BLANK_ID,
    InvalidPipeline,
    accepts_flags,
    catalog,
    family_members,
    fit_apply,
    merge_inputs,
    primitive,
    table_flags,
)
from .tabular import JOB_VECTOR_LEN, N_METAFEATURES, DataError, LearningJob, Table, metafeatures

log = logging.getLogger(__name__)

SENTINEL = -1  # unvisited cell in G_p
PAD = -2  # padding candidate (zero embedding)
EMBED_DIM = 15
N_PM = len(PIPELINE_META_NAMES)


@dataclass
class EnvironmentConfig:
    rows: int = 3
    max_inputs: int = 3
    cluster_size: int = 6
    k_folds: int = 3
    penalty: float = -1.0
    gamma: float = 0.99
    candidate_cap: int = 3000
    eval_seed: int = 0

    def __post_init__(self):
        if self.rows < 1:
            raise ValueError("rows must be >= 1")
        if self.max_inputs < 1:
            raise ValueError("max_inputs must be >= 1")
        if self.cluster_size < 2:
            raise ValueError("cluster_size must be >= 2")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")

    @property
    def n_cells(self) -> int:
        return N_COLS * self.rows

    @property
    def candidate_width(self) -> int:
        """Dense candidate vector length (embedding excluded)."""
        return self.max_inputs + N_METAFEATURES

    def to_json(self) -> dict:
        return asdict(self)


def safe_metafeatures(t: Table) -> np.ndarray:
    if t.n_features == 0:
        return np.zeros(N_METAFEATURES)
    return metafeatures(t)


def normalize_refs(refs, n_in: int, n_cells: int) -> np.ndarray:
    """Refs scaled by the linear cell count, padded with -1 to ``n_in`` slots."""
    out = np.full(n_in, -1.0)
    for i, r in enumerate(refs):
        out[i] = r / n_cells
    return out


@dataclass(frozen=True, eq=False)
class ActionCandidate:
    primitive_id: int
    inputs: tuple[int, ...]
    valid: bool = True
    meta: np.ndarray = field(default_factory=lambda: np.zeros(N_METAFEATURES))

    @classmethod
    def padding(cls) -> "ActionCandidate":
        return cls(PAD, (), False, np.zeros(N_METAFEATURES))

    @property
    def is_blank(self) -> bool:
        return self.primitive_id == BLANK_ID

    @property
    def key(self) -> tuple:
        return (self.primitive_id, self.inputs)

    def rest(self, n_in: int, n_cells: int) -> np.ndarray:
        """Dense vector minus the embedding: ref slots then meta-features."""
        return np.concatenate([normalize_refs(self.inputs, n_in, n_cells), self.meta])

    def dense(self, embed: Callable[[int], np.ndarray], n_in: int, n_cells: int) -> np.ndarray:
        return np.concatenate([embed(self.primitive_id), self.rest(n_in, n_cells)])

    def __repr__(self):
        if not self.valid:
            return "ActionCandidate(padding)"
        return f"ActionCandidate({self.primitive_id}, {list(self.inputs)})"


@dataclass(eq=False)
class StateVector:
    """Fixed-size state. Primitive ids stay ids here; the network embeds them.

    gp:  (6N,) primitive id per cell (blank 0, unvisited -1)
    gin: (6N, N_in) input refs per cell, normalized, absent -1
    pm, om, lj: pipeline meta, mandatory-input meta, job vector
    ac_ids / ac_rest: candidate ids and the rest of their dense vectors
    """

    gp: np.ndarray
    gin: np.ndarray
    pm: np.ndarray
    om: np.ndarray
    lj: np.ndarray
    ac_ids: np.ndarray
    ac_rest: np.ndarray

    @property
    def ctx(self) -> np.ndarray:
        return np.concatenate([self.pm, self.om, self.lj])

    def with_cluster(self, cluster: list[ActionCandidate], n_in: int, n_cells: int) -> "StateVector":
        ids = np.array([c.primitive_id for c in cluster], dtype=np.int64)
        rest = np.stack([c.rest(n_in, n_cells) for c in cluster]) if cluster else np.zeros((0, n_in + N_METAFEATURES))
        return StateVector(self.gp, self.gin, self.pm, self.om, self.lj, ids, rest)

    def flat(self) -> np.ndarray:
        return np.concatenate(
            [self.gp.astype(np.float64), self.gin.ravel(), self.pm, self.om, self.lj,
             self.ac_ids.astype(np.float64), self.ac_rest.ravel()]
        )

    def zeros_like(self) -> "StateVector":
        return StateVector(*(np.zeros_like(a) for a in self.arrays()))

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.gp, self.gin, self.pm, self.om, self.lj, self.ac_ids, self.ac_rest)


def input_sets(mandatory: int, others: list[int], n_in: int) -> list[tuple[int, ...]]:
    """Every subset holding ``mandatory`` (listed first) of size <= n_in."""
    sets = []
    for size in range(0, n_in):
        for extra in combinations(sorted(others), size):
            sets.append((mandatory,) + extra)
    return sets


class GridEnv:
    """One grid episode at a time over a learning job's training table."""

    def __init__(self, config: EnvironmentConfig | None = None):
        self.config = config or EnvironmentConfig()
        self.grid: Grid | None = None
        self.job: LearningJob | None = None
        self.done = True
        self.trace: list[dict] = []
        self.last_dag: PipelineDag | None = None
        self.last_kscore: float | None = None
        self._open: list[ActionCandidate] | None = None

    # -- lifecycle ----------------------------------------------------------

    def check_job(self, job: LearningJob) -> None:
        t = job.dataset
        counts = np.bincount(t.y, minlength=t.n_classes)
        if np.count_nonzero(counts) < 2:
            raise DataError(f"job {job.name!r}: need at least 2 classes")
        if counts.min() < self.config.k_folds:
            raise DataError(
                f"job {job.name!r}: a class has {counts.min()} rows, fewer than k={self.config.k_folds}"
            )

    def reset(self, job: LearningJob, seed: int = 0) -> StateVector:
        self.check_job(job)
        self.job = job
        self.seed = seed
        self.grid = Grid(self.config.rows)
        self.outputs: dict[int, Table] = {RAW: job.dataset}
        self._meta_cache: dict[tuple[int, ...], tuple] = {}
        self.done = False
        self.trace = []
        self.last_dag = None
        self.last_kscore = None
        self._open = None
        self._job_vec = job.vector()
        return self.encode_state()

    @property
    def cursor(self) -> tuple[int, int] | None:
        return None if self.grid is None else self.grid.cursor_coords

    def mandatory_input(self) -> int:
        r, c = self.cursor
        return self.grid.last_in_row(r, c)

    def optional_inputs(self) -> list[int]:
        r, c = self.cursor
        return [
            idx for idx, _ in self.grid.populated()
            if cell_coords(idx)[0] < r and cell_coords(idx)[1] <= c
        ]

    def _merged(self, refs: tuple[int, ...]):
        hit = self._meta_cache.get(refs)
        if hit is None:
            merged = merge_inputs([self.outputs[r] for r in refs])
            hit = (merged, table_flags(merged))
            self._meta_cache[refs] = hit
        return hit

    def _meta_of(self, refs: tuple[int, ...]) -> np.ndarray:
        key = ("meta",) + refs
        hit = self._meta_cache.get(key)
        if hit is None:
            hit = safe_metafeatures(self._merged(refs)[0])
            self._meta_cache[key] = hit
        return hit

    def open_list(self) -> list[ActionCandidate]:
        """Legal candidates at the cursor: primitives of the cursor's family in
        catalog order, each with every accepted input set, then blank."""
        if self.done:
            raise RuntimeError("episode is over")
        if self._open is not None:
            return self._open
        _, c = self.cursor
        mand = self.mandatory_input()
        sets = input_sets(mand, self.optional_inputs(), self.config.max_inputs)
        members = family_members(c)
        capped = len(sets) * len(members) > self.config.candidate_cap
        mand_meta = self._meta_of((mand,))
        cands = []
        for p in members:
            for s in sets:
                _, flags = self._merged(s)
                if accepts_flags(p, flags):
                    meta = mand_meta if capped and len(s) > 1 else self._meta_of(s)
                    cands.append(ActionCandidate(p.id, s, True, meta))
        cands.append(ActionCandidate(BLANK_ID, (mand,), True, mand_meta))
        self._open = cands
        self._open_keys = {a.key: a for a in cands}
        return cands

    def lookup(self, primitive_id: int, inputs: tuple[int, ...]) -> ActionCandidate | None:
        self.open_list()
        if primitive_id == BLANK_ID:
            return self._open[-1]
        return self._open_keys.get((primitive_id, tuple(inputs)))

    def step(self, action: ActionCandidate) -> tuple[StateVector, float, bool]:
        if self.done:
            raise RuntimeError("step called after the episode finished")
        index = self.grid.cursor
        legal = action.valid and self.lookup(action.primitive_id, action.inputs) is not None
        reward = 0.0
        event = {"cell": index, "primitive": int(action.primitive_id), "inputs": list(action.inputs)}
        if not legal:
            self.grid.place(BLANK)
            reward = self.config.penalty
            event["outcome"] = "invalid"
        elif action.is_blank:
            self.grid.place(BLANK)
            event["outcome"] = "blank"
        else:
            merged, _ = self._merged(action.inputs)
            spec = primitive(action.primitive_id)
            try:
                _, out = fit_apply(spec, merged, self._cell_seed(index), tag=index)
            except InvalidPipeline as exc:
                log.debug("cell %d: %s failed at placement: %s", index, spec.name, exc)
                self.grid.place(BLANK)
                reward = self.config.penalty
                event["outcome"] = "fit_failed"
            else:
                self.grid.place(PipelineStep(action.primitive_id, action.inputs))
                self.outputs[index] = out
                event["outcome"] = "placed"
        self._open = None
        if self.grid.done:
            self.done = True
            self.last_dag = compile_grid(self.grid)
            kscore = evaluate_kfold(
                self.last_dag, self.job.dataset, self.config.k_folds, self.job.metric, self.config.eval_seed
            )
            self.last_kscore = kscore
            if reward == 0.0:
                reward = kscore if kscore is not None else self.config.penalty
            event["kscore"] = kscore
        event["reward"] = reward
        self.trace.append(event)
        return self.encode_state(), reward, self.done

    def _cell_seed(self, index: int) -> int:
        return int(np.random.SeedSequence([self.config.eval_seed, index]).generate_state(1)[0])

    # -- state --------------------------------------------------------------

    def encode_state(self, cluster: list[ActionCandidate] | None = None) -> StateVector:
        cfg = self.config
        g = self.grid
        n_cells = cfg.n_cells
        gp = np.full(n_cells, SENTINEL, dtype=np.int64)
        gin = np.full((n_cells, cfg.max_inputs), -1.0)
        for i, cell in enumerate(g.cells):
            if cell is None:
                continue
            if cell == BLANK:
                gp[i] = BLANK_ID
            else:
                gp[i] = cell.primitive_id
                gin[i] = normalize_refs(cell.inputs, cfg.max_inputs, n_cells)
        pm = pipeline_meta(compile_grid(g), g)
        if self.done:
            om = self._meta_of((g.last_in_row(cfg.rows, N_COLS + 1),))
        else:
            om = self._meta_of((self.mandatory_input(),))
        state = StateVector(
            gp, gin, pm, om, self._job_vec,
            np.zeros(0, dtype=np.int64), np.zeros((0, cfg.candidate_width)),
        )
        if cluster is not None:
            state = state.with_cluster(cluster, cfg.max_inputs, n_cells)
        elif self.done:
            pad = [ActionCandidate.padding()] * cfg.cluster_size
            state = state.with_cluster(pad, cfg.max_inputs, n_cells)
        return state

    def trace_json(self) -> str:
        return json.dumps({"job": self.job.name if self.job else None, "events": self.trace}, indent=2)


# -- flat action space ---------------------------------------------------------


def flat_action_table(config: EnvironmentConfig) -> list[tuple[int, tuple[int, ...]]]:
    """Every (primitive, refs) pattern that can be legal at some cell, in a
    fixed order; index 0 is the blank action."""
    table: list[tuple[int, tuple[int, ...]]] = [(BLANK_ID, ())]
    seen = set()
    for r in range(1, config.rows + 1):
        for c in range(1, N_COLS + 1):
            mands = [RAW] + [cell_index(r, cc) for cc in range(1, c)]
            earlier = [cell_index(rr, cc) for rr in range(1, r) for cc in range(1, c + 1)]
            members = family_members(c)
            for m in mands:
                for s in input_sets(m, earlier, config.max_inputs):
                    for p in members:
                        key = (p.id, s)
                        if key not in seen:
                            seen.add(key)
                            table.append(key)
    return table


class FlatActionSpace:
    """Fixed enumeration of actions used when the hierarchical plugin is off."""

    def __init__(self, config: EnvironmentConfig):
        self.config = config
        self.table = flat_action_table(config)
        self.index = {k: i for i, k in enumerate(self.table)}

    def __len__(self) -> int:
        return len(self.table)

    def resolve(self, env: GridEnv, i: int) -> ActionCandidate:
        """Map a flat index to the open-list candidate, or padding if illegal now."""
        pid, refs = self.table[i]
        found = env.lookup(pid, refs)
        return found if found is not None else ActionCandidate.padding()

    def legal_mask(self, env: GridEnv) -> np.ndarray:
        mask = np.zeros(len(self.table), dtype=bool)
        mask[0] = True
        for a in env.open_list():
            if not a.is_blank:
                mask[self.index[a.key]] = True
        return mask


def catalog_size() -> int:
    return len(catalog())


STATE_CTX_LEN = N_PM + N_METAFEATURES + JOB_VECTOR_LEN
