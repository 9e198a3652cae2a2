"""Independent brute-force references used by several test files."""
from itertools import combinations

import numpy as np

from pipegrid.environment import PAD, ActionCandidate
from pipegrid.pipeline import BLANK, RAW, cell_coords
from pipegrid.primitives import BLANK_ID, can_accept, catalog, merge_inputs


def open_list_oracle(env):
    """Enumerate every (primitive, input subset) pair and keep those passing
    the three legality conditions. Returns a set of (pid, refs) keys with the
    mandatory ref first and the rest ascending, plus the blank key."""
    grid = env.grid
    r, c = grid.cursor_coords
    populated = [i for i, cell in enumerate(grid.cells, start=1) if cell not in (None, BLANK)]

    # condition 1: the mandatory source is the row's latest populated cell, else raw
    row_cells = [i for i in populated if cell_coords(i)[0] == r and cell_coords(i)[1] < c]
    mandatory = max(row_cells) if row_cells else RAW

    # condition 2: extra sources come from earlier rows, at or left of column c
    def eligible(i):
        rr, cc = cell_coords(i)
        return rr < r and cc <= c

    universe = [RAW] + populated
    keys = {(BLANK_ID, (mandatory,))}
    for size in range(1, env.config.max_inputs + 1):
        for subset in combinations(universe, size):
            if mandatory not in subset:
                continue
            others = [i for i in subset if i != mandatory]
            if not all(i != RAW and eligible(i) for i in others):
                continue
            merged = merge_inputs([env.outputs[i] for i in subset])
            # condition 3: family bound to the column, and the primitive accepts the merge
            for p in catalog():
                if p.family == c and can_accept(p, merged):
                    keys.add((p.id, (mandatory,) + tuple(sorted(others))))
    return keys


def random_midgame(env, rng, steps):
    """Play ``steps`` uniformly random open-list actions (episode stays live)."""
    for _ in range(steps):
        A = env.open_list()
        env.step(A[int(rng.integers(len(A)))])
    return env


def synthetic_open_list(m, rng, n_in=3, n_cells=18, n_scores=5):
    """``m`` distinct candidates whose first meta slot carries a score in
    {1..n_scores}; equal scores are common so the tie rule matters."""
    seen, cands = set(), []
    while len(cands) < m:
        pid = int(rng.integers(1, 23))
        k = int(rng.integers(1, n_in + 1))
        refs = [int(x) for x in rng.choice(n_cells, size=k, replace=False)]
        refs = tuple([refs[0]] + sorted(refs[1:]))
        if (pid, refs) in seen:
            continue
        seen.add((pid, refs))
        meta = rng.random(12)
        meta[0] = 1 + int(rng.integers(n_scores))
        cands.append(ActionCandidate(pid, refs, True, meta))
    return cands


def oracle_key(cand, n_in=3):
    """Higher wins: score, then lowest primitive id, then lowest refs."""
    if not cand.valid:
        return (0.0,)
    refs = list(cand.inputs) + [-1] * (n_in - len(cand.inputs))
    return (float(cand.meta[0]), -cand.primitive_id, tuple(-r for r in refs))


def oracle_argmax(A, n_in=3):
    return max(A, key=lambda c: oracle_key(c, n_in))


def scoring_agent(n_in=3, n_cells=18):
    """agent_select that reads the score and tie fields back out of each state."""

    def key(state, i):
        pid = int(state.ac_ids[i])
        if pid == PAD:
            return (0.0,)
        rest = state.ac_rest[i]
        refs = [int(round(v * n_cells)) if v >= 0 else -1 for v in rest[:n_in]]
        return (float(rest[n_in]), -pid, tuple(-r for r in refs))

    def select(states):
        picks = []
        for s in states:
            slots = range(len(s.ac_ids))
            picks.append(max(slots, key=lambda i: (key(s, i), -i)))
        return picks

    return select


def random_vectors(A, seed=0):
    rng = np.random.default_rng(seed)
    table = rng.normal(size=(30, 8))
    ids = np.array([c.primitive_id for c in A]) % 30
    rest = np.stack([c.rest(3, 18) for c in A])
    return np.hstack([table[ids], rest])


def random_batch(cfg, rng, B=4):
    """Network inputs drawn to touch every id class: pad, sentinel, blank, primitives."""
    gp = rng.integers(-1, cfg.n_primitives + 1, size=(B, cfg.n_cells))
    ac_ids = rng.integers(-2, cfg.n_primitives + 1, size=(B, cfg.cand_slots))
    return {
        "gp": gp,
        "gin": rng.uniform(-1, 1, size=(B, cfg.n_cells, cfg.n_inputs)),
        "ctx": rng.normal(size=(B, cfg.ctx_len)),
        "ac_ids": ac_ids,
        "ac_rest": rng.normal(size=(B, cfg.cand_slots, cfg.cand_rest)),
    }


def finite_difference_errors(net, batch, dQ, h=1e-3):
    """Relative error per parameter tensor between backward and central
    differences of sum(dQ * Q). The advantage stream reads a frozen copy of the
    embedding, since that read carries no gradient by design."""
    frozen = net.params["E"].copy()
    _, _, _, cache = net.forward(batch, record=True, adv_table=frozen)
    grads = net.backward(cache, dQ)

    def f():
        return float(np.sum(dQ * net.forward(batch, adv_table=frozen)[2]))

    errors = {}
    for name, P in net.params.items():
        num = np.zeros_like(P)
        flat, nflat = P.reshape(-1), num.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + h
            up = f()
            flat[j] = keep - h
            down = f()
            flat[j] = keep
            nflat[j] = (up - down) / (2 * h)
        diff = np.linalg.norm(num - grads[name])
        scale = np.linalg.norm(num) + np.linalg.norm(grads[name])
        errors[name] = 0.0 if scale == 0 else diff / scale
    return errors
