"""Four Rooms illustration: where the optimal policy's occupancy sits relative to the data."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mdp import (
    TabularMdp,
    empirical_distribution,
    mle_mdp,
    sample_trajectories,
    solve_optimal,
    stationary_distribution,
)
from .solver import SolverConfig, SolveResult, solve_newton_chi2

__all__ = [
    "GridSpec",
    "Heatmap",
    "IllustrativeResult",
    "LAYOUT",
    "build_four_rooms",
    "shortest_path_cells",
    "greedy_rollout",
    "run_illustrative",
    "write_heatmaps",
]

# '#' wall, '.' free; the classic layout without its outer border
LAYOUT = (
    ".....#.....",
    ".....#.....",
    "...........",
    ".....#.....",
    ".....#.....",
    "#.####.....",
    ".....###.##",
    ".....#.....",
    ".....#.....",
    "...........",
    ".....#.....",
)

ACTION_NAMES = {0: "up", 1: "down", 2: "left", 3: "right"}
_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    walls: frozenset[tuple[int, int]]
    start: tuple[int, int]
    goal: tuple[int, int]
    cells: tuple[tuple[int, int], ...]

    @property
    def absorbing_state(self) -> int:
        return len(self.cells)

    def index(self, cell: tuple[int, int]) -> int:
        return self.cells.index(cell)

    def to_grid(self, values: np.ndarray, fill: float = np.nan) -> np.ndarray:
        grid = np.full((self.height, self.width), fill)
        for i, (r, c) in enumerate(self.cells):
            grid[r, c] = values[i]
        return grid


def build_four_rooms(start=(0, 0), goal=(10, 10), discount: float = 0.95,
                     layout=LAYOUT) -> tuple[TabularMdp, GridSpec]:
    """Deterministic 11x11 four-rooms MDP.

    Moves into walls or off the grid leave the agent in place. Acting in the
    goal cell pays 1 and moves to an absorbing zero-reward state appended
    after the grid cells.
    """
    height, width = len(layout), len(layout[0])
    walls = frozenset((r, c) for r in range(height) for c in range(width) if layout[r][c] == "#")
    cells = tuple((r, c) for r in range(height) for c in range(width) if (r, c) not in walls)
    if start in walls or goal in walls:
        raise ValueError("start and goal must be free cells")
    spec = GridSpec(width, height, walls, tuple(start), tuple(goal), cells)
    index = {cell: i for i, cell in enumerate(cells)}

    n = len(cells) + 1
    sink = n - 1
    T = np.zeros((n, 4, n))
    R = np.zeros((n, 4))
    for i, (r, c) in enumerate(cells):
        for a, (dr, dc) in enumerate(_MOVES):
            nxt = (r + dr, c + dc)
            T[i, a, index.get(nxt, i)] = 1.0
    g = index[spec.goal]
    T[g] = 0.0
    T[g, :, sink] = 1.0
    R[g] = 1.0
    T[sink, :, sink] = 1.0
    p0 = np.zeros(n)
    p0[index[spec.start]] = 1.0
    if shortest_path_cells(spec) is None:
        raise ValueError("goal is unreachable from start")
    return TabularMdp(T, R, p0, discount), spec


def _bfs(spec: GridSpec) -> dict:
    parent = {spec.start: None}
    queue = deque([spec.start])
    while queue:
        r, c = queue.popleft()
        for dr, dc in _MOVES:
            nxt = (r + dr, c + dc)
            if (0 <= nxt[0] < spec.height and 0 <= nxt[1] < spec.width
                    and nxt not in spec.walls and nxt not in parent):
                parent[nxt] = (r, c)
                queue.append(nxt)
    return parent


def shortest_path_cells(spec: GridSpec) -> list[tuple[int, int]] | None:
    """Cells of one BFS shortest path from start to goal, both included."""
    parent = _bfs(spec)
    if spec.goal not in parent:
        return None
    path = [spec.goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return path[::-1]


def greedy_rollout(mdp: TabularMdp, pi: np.ndarray, start: int, max_steps: int) -> list[int]:
    """States visited following argmax actions of ``pi`` under deterministic moves."""
    states = [start]
    s = start
    for _ in range(max_steps):
        s = int(np.argmax(mdp.transition[s, int(np.argmax(pi[s]))]))
        states.append(s)
        if mdp.transition[s, :, s].min() == 1.0 and mdp.reward[s].max() == 0.0:
            break
    return states


@dataclass
class Heatmap:
    """State-marginal grid (walls NaN) and per-cell argmax action (-1 on walls/empty cells)."""

    values: np.ndarray
    actions: np.ndarray


@dataclass
class IllustrativeResult:
    spec: GridSpec
    true_mdp: TabularMdp
    model: TabularMdp
    behavior: np.ndarray
    d_behavior: np.ndarray
    d_data: np.ndarray
    d_hat: np.ndarray
    solve: SolveResult
    heatmaps: dict[str, Heatmap]


def _heatmap(spec: GridSpec, d: np.ndarray) -> Heatmap:
    """Grid-cell state marginals renormalized without the absorbing state."""
    cells = d[: len(spec.cells)]
    marg = cells.sum(axis=1)
    total = marg.sum()
    marg = marg / total if total > 0 else marg
    act = np.where(marg > 0, np.argmax(cells, axis=1), -1)
    return Heatmap(spec.to_grid(marg), spec.to_grid(act, fill=-1).astype(int))


def run_illustrative(seed: int = 0, alpha: float = 1e-3, n_episodes: int = 50,
                     max_steps: int = 50) -> IllustrativeResult:
    """Collect data with a half-optimal, half-random policy and correct it toward the optimum.

    Heatmaps: ``a`` exact occupancy of the behavior policy, ``b`` empirical
    data distribution, ``c`` the corrections ``w``, ``d`` the corrected
    distribution ``d_data * w``.
    """
    mdp, spec = build_four_rooms()
    policy_seq, data_seq = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(policy_seq)

    _, pi_star = solve_optimal(mdp)
    pi_rand = rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states)
    pi_b = 0.5 * pi_star + 0.5 * pi_rand

    sink = spec.absorbing_state
    data = sample_trajectories(mdp, pi_b, n_episodes, max_steps, terminal_states=[sink],
                               seed=data_seq)
    model = mle_mdp(data, mdp)
    d_data = empirical_distribution(data, absorbing=[sink])
    result = solve_newton_chi2(model, d_data, SolverConfig(alpha=alpha))
    d_hat = d_data * result.w

    d_behavior = stationary_distribution(mdp, pi_b)
    w_cells = result.w[: len(spec.cells)]
    w_map = Heatmap(spec.to_grid(w_cells.max(axis=1)),
                    spec.to_grid(np.argmax(w_cells, axis=1), fill=-1).astype(int))
    heatmaps = {
        "a": _heatmap(spec, d_behavior),
        "b": _heatmap(spec, d_data),
        "c": w_map,
        "d": _heatmap(spec, d_hat),
    }
    return IllustrativeResult(spec, mdp, model, pi_b, d_behavior, d_data, d_hat,
                              result, heatmaps)


def write_heatmaps(result: IllustrativeResult, out_dir) -> list[Path]:
    """``fig1_{a..d}.csv`` (row-major, walls NaN) plus ``fig1_{a..d}.json`` action codes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for key, hm in result.heatmaps.items():
        csv_path = out / f"fig1_{key}.csv"
        np.savetxt(csv_path, hm.values, delimiter=",", fmt="%.17g")
        json_path = out / f"fig1_{key}.json"
        json_path.write_text(json.dumps({
            "action_codes": {str(k): v for k, v in ACTION_NAMES.items()},
            "argmax_action": hm.actions.tolist(),
            "start": list(result.spec.start),
            "goal": list(result.spec.goal),
        }, indent=1))
        written += [csv_path, json_path]
    return written
