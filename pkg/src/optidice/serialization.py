"""File formats: MDP JSON, dataset CSV, TOML/JSON config blocks."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .mdp import Dataset, TabularMdp

__all__ = [
    "DATASET_HEADER",
    "load_mdp",
    "save_mdp",
    "read_dataset_csv",
    "write_dataset_csv",
    "load_config",
]

DATASET_HEADER = ("traj_id", "step", "s", "a", "r", "s_next", "terminal")


def load_mdp(path) -> TabularMdp:
    with open(path) as fh:
        return TabularMdp.from_dict(json.load(fh))


def save_mdp(mdp: TabularMdp, path) -> None:
    Path(path).write_text(json.dumps(mdp.to_dict()))


def write_dataset_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DATASET_HEADER)
        for row in zip(dataset.traj_id, dataset.step, dataset.s, dataset.a, dataset.r,
                       dataset.s_next, dataset.terminal):
            i, t, s, a, r, s2, done = row
            writer.writerow([int(i), int(t), int(s), int(a), repr(float(r)), int(s2), int(done)])


def _parse_flag(text: str) -> bool:
    text = text.strip().lower()
    if text in ("1", "true"):
        return True
    if text in ("0", "false"):
        return False
    raise ValueError(f"bad terminal flag {text!r}")


def read_dataset_csv(path, n_states: int, n_actions: int) -> Dataset:
    """Read ``traj_id,step,s,a,r,s_next,terminal`` rows; a header line is optional."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or (lineno == 1 and rec[0].strip() == "traj_id"):
                continue
            if len(rec) != 7:
                raise ValueError(f"{path}:{lineno}: expected 7 fields, got {len(rec)}")
            i, t, s, a, r, s2, done = rec
            rows.append((int(i), int(t), int(s), int(a), float(r), int(s2), _parse_flag(done)))
    if not rows:
        return Dataset.empty(n_states, n_actions)
    cols = [np.array(c) for c in zip(*rows)]
    return Dataset(n_states, n_actions, *cols)


def load_config(path) -> dict:
    """Parse a TOML or JSON document into a dict (JSON if the suffix says so)."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return json.loads(text)
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError:
        return json.loads(text)
