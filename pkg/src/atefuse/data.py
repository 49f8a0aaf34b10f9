"""Dataset containers, delimited-file ingestion, and deterministic splitting.

Two data shapes are supported: static (context-action-reward triplets next
to context-reward pairs) and sequential (day-long trajectories with a
terminal state).  All containers are immutable after construction; the
backing arrays are marked read-only so they can be shared across threads.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np


class DataFormatError(ValueError):
    """Raised when an input file or dataset violates the expected format."""


def _frozen(values, dtype=float) -> np.ndarray:
    out = np.array(values, dtype=dtype)
    out.flags.writeable = False
    return out


def _require_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise DataFormatError(f"non-finite value in {what}")


def _as_context_matrix(contexts) -> np.ndarray:
    # A 1-d input is read as n records of a single context coordinate.
    arr = np.asarray(contexts, dtype=float)
    return arr.reshape(-1, 1) if arr.ndim == 1 else arr


@dataclass(frozen=True)
class ExperimentalRecord:
    """One context-action-reward triplet from the experiment."""

    context: np.ndarray
    action: int
    reward: float


@dataclass(frozen=True)
class HistoricalRecord:
    """One context-reward pair collected under the control policy."""

    context: np.ndarray
    reward: float


@dataclass(frozen=True)
class Episode:
    """A trajectory of ``T`` steps plus the terminal context.

    ``contexts`` has shape ``(T + 1, d)``: row ``t`` is the state observed
    before step ``t + 1`` and the last row is the terminal state.
    """

    contexts: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "contexts", _frozen(self.contexts))
        object.__setattr__(self, "actions", _frozen(self.actions, dtype=int))
        object.__setattr__(self, "rewards", _frozen(self.rewards))
        if self.contexts.ndim != 2:
            raise DataFormatError("episode contexts must be 2-d")
        horizon = self.actions.shape[0]
        if horizon < 1:
            raise DataFormatError("episode horizon must be at least 1")
        if self.rewards.shape != (horizon,) or self.contexts.shape[0] != horizon + 1:
            raise DataFormatError("episode arrays have inconsistent lengths")
        if not np.isin(self.actions, (0, 1)).all():
            raise DataFormatError("non-binary action in episode")
        _require_finite(self.contexts, "episode contexts")
        _require_finite(self.rewards, "episode rewards")

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]


class StaticDataset:
    """Validated experimental triplets plus historical pairs.

    Both sub-datasets must be non-empty, share the context dimension, and
    the experimental arm must contain both actions.
    """

    def __init__(self, exp_contexts, exp_actions, exp_rewards,
                 hist_contexts, hist_rewards):
        self.exp_contexts = _frozen(_as_context_matrix(exp_contexts))
        self.exp_actions = _frozen(exp_actions, dtype=int)
        self.exp_rewards = _frozen(exp_rewards)
        self.hist_contexts = _frozen(_as_context_matrix(hist_contexts))
        self.hist_rewards = _frozen(hist_rewards)
        self._validate()

    def _validate(self) -> None:
        if self.exp_contexts.shape[0] == 0 or self.exp_actions.shape[0] == 0:
            raise DataFormatError("empty dataset: no experimental records")
        if self.hist_contexts.shape[0] == 0:
            raise DataFormatError("empty dataset: no historical records")
        n_e, d = self.exp_contexts.shape
        if self.exp_actions.shape != (n_e,) or self.exp_rewards.shape != (n_e,):
            raise DataFormatError("experimental arrays have inconsistent lengths")
        if self.hist_contexts.shape[1] != d:
            raise DataFormatError(
                "inconsistent dimension between experimental and historical contexts")
        if self.hist_rewards.shape != (self.hist_contexts.shape[0],):
            raise DataFormatError("historical arrays have inconsistent lengths")
        if not np.isin(self.exp_actions, (0, 1)).all():
            raise DataFormatError("non-binary action in experimental data")
        if not (self.exp_actions == 1).any() or not (self.exp_actions == 0).any():
            raise DataFormatError("both arms must be present in experimental data")
        for arr, what in ((self.exp_contexts, "experimental contexts"),
                          (self.exp_rewards, "experimental rewards"),
                          (self.hist_contexts, "historical contexts"),
                          (self.hist_rewards, "historical rewards")):
            _require_finite(arr, what)

    @classmethod
    def from_records(cls, experimental: Sequence[ExperimentalRecord],
                     historical: Sequence[HistoricalRecord]) -> "StaticDataset":
        return cls(
            [r.context for r in experimental],
            [r.action for r in experimental],
            [r.reward for r in experimental],
            [r.context for r in historical],
            [r.reward for r in historical],
        )

    @property
    def n_e(self) -> int:
        return self.exp_contexts.shape[0]

    @property
    def n_h(self) -> int:
        return self.hist_contexts.shape[0]

    @property
    def dim(self) -> int:
        return self.exp_contexts.shape[1]

    def experimental_records(self) -> Iterator[ExperimentalRecord]:
        for i in range(self.n_e):
            yield ExperimentalRecord(self.exp_contexts[i],
                                     int(self.exp_actions[i]),
                                     float(self.exp_rewards[i]))

    def historical_records(self) -> Iterator[HistoricalRecord]:
        for i in range(self.n_h):
            yield HistoricalRecord(self.hist_contexts[i], float(self.hist_rewards[i]))

    def _take(self, exp_idx: np.ndarray, hist_idx: np.ndarray) -> "StaticDataset":
        # Split halves skip re-validation: a random half may hold one arm only,
        # which downstream fitting reports with its own diagnostic.
        out = StaticDataset.__new__(StaticDataset)
        out.exp_contexts = _frozen(self.exp_contexts[exp_idx])
        out.exp_actions = _frozen(self.exp_actions[exp_idx], dtype=int)
        out.exp_rewards = _frozen(self.exp_rewards[exp_idx])
        out.hist_contexts = _frozen(self.hist_contexts[hist_idx])
        out.hist_rewards = _frozen(self.hist_rewards[hist_idx])
        return out


class SequentialDataset:
    """Experimental and historical episode banks with a common horizon.

    Episode ``i`` occupies row ``i`` of the stacked arrays; historical
    episodes must be generated entirely under the control arm.
    """

    def __init__(self, exp_contexts, exp_actions, exp_rewards,
                 hist_contexts, hist_actions, hist_rewards):
        self.exp_contexts = _frozen(exp_contexts)
        self.exp_actions = _frozen(exp_actions, dtype=int)
        self.exp_rewards = _frozen(exp_rewards)
        self.hist_contexts = _frozen(hist_contexts)
        self.hist_actions = _frozen(hist_actions, dtype=int)
        self.hist_rewards = _frozen(hist_rewards)
        self._validate()

    def _validate(self) -> None:
        if self.exp_contexts.ndim != 3 or self.hist_contexts.ndim != 3:
            raise DataFormatError("sequential context arrays must be 3-d")
        if self.exp_contexts.shape[0] == 0:
            raise DataFormatError("empty dataset: no experimental episodes")
        if self.hist_contexts.shape[0] == 0:
            raise DataFormatError("empty dataset: no historical episodes")
        horizon = self.exp_actions.shape[1]
        if horizon < 1:
            raise DataFormatError("horizon must be at least 1")
        if self.hist_actions.shape[1] != horizon:
            raise DataFormatError("inconsistent horizon between datasets")
        for ctx, act, rew, name in (
                (self.exp_contexts, self.exp_actions, self.exp_rewards, "experimental"),
                (self.hist_contexts, self.hist_actions, self.hist_rewards, "historical")):
            n = ctx.shape[0]
            if ctx.shape[1] != horizon + 1:
                raise DataFormatError(f"{name} contexts must cover T+1 steps")
            if act.shape != (n, horizon) or rew.shape != (n, horizon):
                raise DataFormatError(f"{name} arrays have inconsistent lengths")
            if not np.isin(act, (0, 1)).all():
                raise DataFormatError(f"non-binary action in {name} data")
            _require_finite(ctx, f"{name} contexts")
            _require_finite(rew, f"{name} rewards")
        if self.exp_contexts.shape[2] != self.hist_contexts.shape[2]:
            raise DataFormatError(
                "inconsistent dimension between experimental and historical contexts")
        if (self.hist_actions != 0).any():
            raise DataFormatError("historical action must be 0")

    @classmethod
    def from_episodes(cls, experimental: Sequence[Episode],
                      historical: Sequence[Episode]) -> "SequentialDataset":
        if not experimental:
            raise DataFormatError("empty dataset: no experimental episodes")
        if not historical:
            raise DataFormatError("empty dataset: no historical episodes")
        horizon = experimental[0].horizon
        for ep in list(experimental) + list(historical):
            if ep.horizon != horizon:
                raise DataFormatError("inconsistent horizon across episodes")
        return cls(
            np.stack([e.contexts for e in experimental]),
            np.stack([e.actions for e in experimental]),
            np.stack([e.rewards for e in experimental]),
            np.stack([e.contexts for e in historical]),
            np.stack([e.actions for e in historical]),
            np.stack([e.rewards for e in historical]),
        )

    @property
    def n_e(self) -> int:
        return self.exp_contexts.shape[0]

    @property
    def n_h(self) -> int:
        return self.hist_contexts.shape[0]

    @property
    def horizon(self) -> int:
        return self.exp_actions.shape[1]

    @property
    def dim(self) -> int:
        return self.exp_contexts.shape[2]

    def experimental_episodes(self) -> Iterator[Episode]:
        for i in range(self.n_e):
            yield Episode(self.exp_contexts[i], self.exp_actions[i], self.exp_rewards[i])

    def historical_episodes(self) -> Iterator[Episode]:
        for i in range(self.n_h):
            yield Episode(self.hist_contexts[i], self.hist_actions[i],
                          self.hist_rewards[i])

    def _take(self, exp_idx: np.ndarray, hist_idx: np.ndarray) -> "SequentialDataset":
        return SequentialDataset(
            self.exp_contexts[exp_idx], self.exp_actions[exp_idx],
            self.exp_rewards[exp_idx], self.hist_contexts[hist_idx],
            self.hist_actions[hist_idx], self.hist_rewards[hist_idx])


@dataclass(frozen=True)
class SplitPair:
    """Two disjoint halves of a dataset; the first half gets the extra unit."""

    first_half: object
    second_half: object


def sample_split(dataset, seed: int) -> SplitPair:
    """Permute each sub-dataset with ``seed`` and cut it in half.

    Odd sizes put the extra unit in the first half, which is the half used
    for weight learning.  The same seed always yields the same split.
    """
    rng = np.random.default_rng(seed)
    exp_first, exp_second = _split_indices(dataset.n_e, rng)
    hist_first, hist_second = _split_indices(dataset.n_h, rng)
    return SplitPair(dataset._take(exp_first, hist_first),
                     dataset._take(exp_second, hist_second))


def _split_indices(n: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    cut = (n + 1) // 2
    return np.sort(perm[:cut]), np.sort(perm[cut:])


# ---------------------------------------------------------------------------
# Delimited-file ingestion.  Static experimental: header ``s1,...,sd,a,r``;
# static historical: ``s1,...,sd,r``; sequential: ``episode,t,s1,...,sd,a,r``
# with one trailing row per episode (``t = T+1``, empty action/reward fields)
# carrying the terminal state.
# ---------------------------------------------------------------------------

def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"missing file: {path}")
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and any(f.strip() for f in row)]
    if not rows:
        raise DataFormatError(f"empty dataset: {path}")
    return rows[0], rows[1:]


def _context_width(header: list[str], path, trailing: int) -> int:
    d = len(header) - trailing
    if d < 1:
        raise DataFormatError(f"header of {path} has no context columns")
    return d


def _parse_float(field: str, row_no: int, path) -> float:
    try:
        return float(field)
    except ValueError:
        raise DataFormatError(
            f"non-numeric field {field!r} at row {row_no} of {path}") from None


def _parse_action(field: str, row_no: int, path) -> int:
    if field.strip() not in ("0", "1"):
        raise DataFormatError(f"non-binary action at row {row_no} of {path}")
    return int(field)


def load_static(exp_path, hist_path) -> StaticDataset:
    """Load a static dataset from two delimited files."""
    header, body = _read_rows(exp_path)
    d = _context_width(header, exp_path, trailing=2)
    if not body:
        raise DataFormatError(f"empty dataset: {exp_path}")
    contexts, actions, rewards = [], [], []
    for row_no, row in enumerate(body, start=1):
        if len(row) != d + 2:
            raise DataFormatError(f"inconsistent dimension at row {row_no} of {exp_path}")
        contexts.append([_parse_float(f, row_no, exp_path) for f in row[:d]])
        actions.append(_parse_action(row[d], row_no, exp_path))
        rewards.append(_parse_float(row[d + 1], row_no, exp_path))

    h_header, h_body = _read_rows(hist_path)
    h_d = _context_width(h_header, hist_path, trailing=1)
    if h_d != d:
        raise DataFormatError(
            "inconsistent dimension between experimental and historical files")
    if not h_body:
        raise DataFormatError(f"empty dataset: {hist_path}")
    h_contexts, h_rewards = [], []
    for row_no, row in enumerate(h_body, start=1):
        if len(row) != d + 1:
            raise DataFormatError(f"inconsistent dimension at row {row_no} of {hist_path}")
        h_contexts.append([_parse_float(f, row_no, hist_path) for f in row[:d]])
        h_rewards.append(_parse_float(row[d], row_no, hist_path))
    return StaticDataset(contexts, actions, rewards, h_contexts, h_rewards)


def save_static(dataset: StaticDataset, exp_path, hist_path) -> None:
    """Write a static dataset with full-precision decimal serialization."""
    d = dataset.dim
    with open(exp_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"s{j + 1}" for j in range(d)] + ["a", "r"])
        for i in range(dataset.n_e):
            writer.writerow([repr(float(v)) for v in dataset.exp_contexts[i]]
                            + [str(int(dataset.exp_actions[i])),
                               repr(float(dataset.exp_rewards[i]))])
    with open(hist_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"s{j + 1}" for j in range(d)] + ["r"])
        for i in range(dataset.n_h):
            writer.writerow([repr(float(v)) for v in dataset.hist_contexts[i]]
                            + [repr(float(dataset.hist_rewards[i]))])


def _load_episode_file(path, require_control: bool) -> list[Episode]:
    header, body = _read_rows(path)
    d = _context_width(header, path, trailing=4)
    if not body:
        raise DataFormatError(f"empty dataset: {path}")
    by_episode: dict[str, list] = {}
    order: list[str] = []
    for row_no, row in enumerate(body, start=1):
        if len(row) != d + 4:
            raise DataFormatError(f"inconsistent dimension at row {row_no} of {path}")
        key = row[0].strip()
        t = int(_parse_float(row[1], row_no, path))
        context = [_parse_float(f, row_no, path) for f in row[2:2 + d]]
        action_field, reward_field = row[2 + d].strip(), row[3 + d].strip()
        terminal = action_field == "" and reward_field == ""
        if not terminal:
            action = _parse_action(action_field, row_no, path)
            if require_control and action != 0:
                raise DataFormatError(
                    f"historical action must be 0 (row {row_no} of {path})")
            reward = _parse_float(reward_field, row_no, path)
        else:
            action, reward = None, None
        if key not in by_episode:
            order.append(key)
            by_episode[key] = []
        by_episode[key].append((t, context, action, reward))

    episodes = []
    horizon = None
    for key in order:
        steps = sorted(by_episode[key], key=lambda item: item[0])
        times = [s[0] for s in steps]
        if times != list(range(1, len(steps) + 1)):
            raise DataFormatError(f"episode {key} of {path} has non-contiguous steps")
        if steps[-1][2] is not None:
            raise DataFormatError(
                f"episode {key} of {path} is missing its terminal row")
        if any(s[2] is None for s in steps[:-1]):
            raise DataFormatError(
                f"episode {key} of {path} has a terminal row before its last step")
        t_len = len(steps) - 1
        if t_len < 1:
            raise DataFormatError(f"episode {key} of {path} has no steps")
        if horizon is None:
            horizon = t_len
        elif t_len != horizon:
            raise DataFormatError(f"inconsistent horizon at episode {key} of {path}")
        episodes.append(Episode(
            contexts=[s[1] for s in steps],
            actions=[s[2] for s in steps[:-1]],
            rewards=[s[3] for s in steps[:-1]],
        ))
    return episodes


def load_sequential(exp_path, hist_path) -> SequentialDataset:
    """Load a sequential dataset; historical episodes must be all-control."""
    experimental = _load_episode_file(exp_path, require_control=False)
    historical = _load_episode_file(hist_path, require_control=True)
    try:
        return SequentialDataset.from_episodes(experimental, historical)
    except DataFormatError as err:
        raise DataFormatError(f"{err} ({exp_path} vs {hist_path})") from None


def save_sequential(dataset: SequentialDataset, exp_path, hist_path) -> None:
    """Write a sequential dataset with full-precision decimal serialization."""
    d = dataset.dim

    def _write(path, contexts, actions, rewards):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", "t"] + [f"s{j + 1}" for j in range(d)]
                            + ["a", "r"])
            for i in range(contexts.shape[0]):
                for t in range(actions.shape[1]):
                    writer.writerow([str(i + 1), str(t + 1)]
                                    + [repr(float(v)) for v in contexts[i, t]]
                                    + [str(int(actions[i, t])),
                                       repr(float(rewards[i, t]))])
                writer.writerow([str(i + 1), str(actions.shape[1] + 1)]
                                + [repr(float(v)) for v in contexts[i, -1]] + ["", ""])

    _write(exp_path, dataset.exp_contexts, dataset.exp_actions, dataset.exp_rewards)
    _write(hist_path, dataset.hist_contexts, dataset.hist_actions, dataset.hist_rewards)
