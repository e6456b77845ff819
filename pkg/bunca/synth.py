"""Planted-structure synthetic datasets

Users, bundles and items are split into ``groups`` blocks. Users interact with
bundles of their own group only, bundles hold items of their own group only,
and user-item interactions come from the items of a user's training bundles,
each swapped for a random item of another group with probability ``noise``.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from bunca.dataset import Dataset, DatasetError, save_dataset
from bunca.graph import SparseBinaryMatrix
from bunca.log import DebugMixin

PathLike = Union[str, Path]

INTERACTION_SHARE = 0.6
SPLIT_SHARES = (0.7, 0.1, 0.2)
ITEMS_PER_BUNDLE = (2, 4)


def _round(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class SynthSpec:
    groups: int = 4
    users_per_group: int = 12
    bundles_per_group: int = 8
    items_per_group: int = 10
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("groups", "users_per_group", "bundles_per_group", "items_per_group"):
            if getattr(self, name) < 1:
                raise DatasetError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.noise < 1.0:
            raise DatasetError(f"noise must lie in [0, 1), got {self.noise}")
        if self.items_per_group < ITEMS_PER_BUNDLE[0]:
            raise DatasetError(
                f"items_per_group must be >= {ITEMS_PER_BUNDLE[0]} to fill a bundle"
            )
        n = self.interactions_per_user
        test, tune = self.split_sizes(n)
        if n - test - tune < 1:
            raise DatasetError(
                f"{self.bundles_per_group} bundles per group leave no training interaction "
                "after the tune and test shares"
            )

    @property
    def interactions_per_user(self) -> int:
        share = _round(INTERACTION_SHARE * self.bundles_per_group)
        return min(self.bundles_per_group, max(2, share))

    @staticmethod
    def split_sizes(n: int) -> Tuple[int, int]:
        """(test, tune) counts of a user with ``n`` interactions."""
        test = max(1, _round(SPLIT_SHARES[2] * n))
        tune = _round(SPLIT_SHARES[1] * n)
        return test, tune

    @property
    def n_users(self) -> int:
        return self.groups * self.users_per_group

    @property
    def n_bundles(self) -> int:
        return self.groups * self.bundles_per_group

    @property
    def n_items(self) -> int:
        return self.groups * self.items_per_group

    def group_of(self, kind: str, ids) -> np.ndarray:
        per = {
            "user": self.users_per_group,
            "bundle": self.bundles_per_group,
            "item": self.items_per_group,
        }[kind]
        return np.asarray(ids) // per


@dataclass(frozen=True, eq=False)
class SynthPlan:
    """Everything the generator drew, before it is written out."""

    spec: SynthSpec
    splits: Dict[str, SparseBinaryMatrix]
    user_item: SparseBinaryMatrix
    bundle_item: SparseBinaryMatrix
    interactions: SparseBinaryMatrix

    def dataset(self, name: str = "synthetic") -> Dataset:
        s = self.spec
        return Dataset(
            name=name,
            n_users=s.n_users,
            n_bundles=s.n_bundles,
            n_items=s.n_items,
            user_item=self.user_item,
            bundle_item=self.bundle_item,
            **self.splits,
        )


class _Generator(DebugMixin):
    name = "synth"

    def __init__(self, spec: SynthSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)

    def bundles(self) -> SparseBinaryMatrix:
        s, rows, cols = self.spec, [], []
        low, high = ITEMS_PER_BUNDLE[0], min(ITEMS_PER_BUNDLE[1], s.items_per_group)
        for b in range(s.n_bundles):
            g = b // s.bundles_per_group
            size = self.rng.integers(low, high + 1)
            items = self.rng.choice(s.items_per_group, size=size, replace=False)
            rows.extend([b] * size)
            cols.extend(g * s.items_per_group + items)
        return SparseBinaryMatrix.from_pairs(rows, cols, s.n_bundles, s.n_items)

    def interactions(self) -> Tuple[Dict[str, list], list]:
        s = self.spec
        n = s.interactions_per_user
        test, tune = s.split_sizes(n)
        pairs = {"train": [], "tune": [], "test": []}
        full = []
        for u in range(s.n_users):
            g = u // s.users_per_group
            own = self.rng.choice(s.bundles_per_group, size=n, replace=False)
            picked = g * s.bundles_per_group + own
            full.extend((u, b) for b in picked)
            pairs["test"].extend((u, b) for b in picked[:test])
            pairs["tune"].extend((u, b) for b in picked[test : test + tune])
            pairs["train"].extend((u, b) for b in picked[test + tune :])
        return pairs, full

    def user_items(
        self, train: SparseBinaryMatrix, bundle_item: SparseBinaryMatrix
    ) -> SparseBinaryMatrix:
        s, rows, cols = self.spec, [], []
        for u in range(s.n_users):
            g = u // s.users_per_group
            items = np.unique(np.concatenate([bundle_item.row(b) for b in train.row(u)]))
            for i in items:
                if s.groups > 1 and self.rng.random() < s.noise:
                    other = (g + self.rng.integers(1, s.groups)) % s.groups
                    i = other * s.items_per_group + self.rng.integers(s.items_per_group)
                rows.append(u)
                cols.append(i)
        return SparseBinaryMatrix.from_pairs(rows, cols, s.n_users, s.n_items)

    def plan(self) -> SynthPlan:
        s = self.spec
        bundle_item = self.bundles()
        pairs, full = self.interactions()

        def matrix(p):
            rows, cols = zip(*p) if p else ((), ())
            return SparseBinaryMatrix.from_pairs(rows, cols, s.n_users, s.n_bundles)

        splits = {name: matrix(p) for name, p in pairs.items()}
        user_item = self.user_items(splits["train"], bundle_item)
        self.debug(
            f"{s.n_users} users, {s.n_bundles} bundles, {s.n_items} items, "
            f"{len(full)} interactions"
        )
        return SynthPlan(s, splits, user_item, bundle_item, matrix(full))


def synth_plan(spec: SynthSpec) -> SynthPlan:
    return _Generator(spec).plan()


def synth_generate(spec: SynthSpec, out_dir: Optional[PathLike] = None) -> Dataset:
    """Generate a dataset; when ``out_dir`` is given it is also written there."""
    name = Path(out_dir).name if out_dir else "synthetic"
    ds = synth_plan(spec).dataset(name)
    if out_dir:
        save_dataset(ds, out_dir)
    return ds


# Small hand-made instance (6 users, 5 bundles, 8 items) used for gradient checks
TOY_TRAIN = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 0), (2, 3), (3, 2), (3, 4), (4, 3), (5, 4), (5, 0)]
TOY_TUNE = [(0, 2), (4, 4)]
TOY_TEST = [(0, 3), (1, 4), (2, 1), (3, 0), (4, 0), (5, 1)]
TOY_BUNDLE_ITEMS = {0: (0, 1, 2), 1: (2, 3), 2: (3, 4, 5), 3: (5, 6), 4: (6, 7, 0)}
TOY_USER_ITEMS = {
    0: (0, 1, 2, 3),
    1: (2, 3, 4),
    2: (0, 5, 6),
    3: (3, 4, 7),
    4: (5, 6),
    5: (6, 7, 0, 2),
}


def toy_dataset() -> Dataset:
    def pairs(relation):
        if isinstance(relation, dict):
            relation = [(k, v) for k, values in relation.items() for v in values]
        return [r for r, _ in relation], [c for _, c in relation]

    def matrix(relation, n_rows, n_cols):
        return SparseBinaryMatrix.from_pairs(*pairs(relation), n_rows, n_cols)

    return Dataset(
        name="toy",
        n_users=6,
        n_bundles=5,
        n_items=8,
        train=matrix(TOY_TRAIN, 6, 5),
        tune=matrix(TOY_TUNE, 6, 5),
        test=matrix(TOY_TEST, 6, 5),
        user_item=matrix(TOY_USER_ITEMS, 6, 8),
        bundle_item=matrix(TOY_BUNDLE_ITEMS, 5, 8),
    )
