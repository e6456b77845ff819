"""The full two-view bundle recommender."""

from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from bunca import autograd as ag
from bunca.autograd import ParameterSet, ShapeError, Tensor
from bunca.config import TrainConfig
from bunca.enums import Causation, Side, SubView
from bunca.graph import (
    NormalizedAdjacency,
    SparseBinaryMatrix,
    UnifiedGraph,
    binarize,
    build_bipartite_adjacency,
    build_unified_graph,
    cooccurrence,
)
from bunca.log import DebugMixin
from bunca.models.cohesive import cohesive_view
from bunca.models.coherent import (
    CausationMatrices,
    MPCNetParams,
    SubViewOutput,
    causation_matrices,
    enhance_items,
    enhance_items_fixed,
    fixed_causation,
    fuse_coherent,
    mpcnet_for,
    run_subview_BC,
    run_subview_UP,
    zero_subview,
)
from bunca.objectives import final_repr
from bunca.optim import xavier_init


@dataclass(frozen=True, eq=False)
class Graphs:
    """Every structure the forward pass reads; built once per dataset."""

    unified: UnifiedGraph
    ui_adjacency: NormalizedAdjacency
    bi_adjacency: NormalizedAdjacency
    user_item: SparseBinaryMatrix
    bundle_item: SparseBinaryMatrix
    up_mask: SparseBinaryMatrix
    bc_mask: SparseBinaryMatrix

    @property
    def n_users(self) -> int:
        return self.unified.n_users

    @property
    def n_bundles(self) -> int:
        return self.unified.n_bundles

    @property
    def n_items(self) -> int:
        return self.user_item.n_cols

    def item_mask(self, view: SubView) -> SparseBinaryMatrix:
        return self.up_mask if SubView(view) is SubView.UP else self.bc_mask


def build_graphs(
    train: SparseBinaryMatrix,
    user_item: SparseBinaryMatrix,
    bundle_item: SparseBinaryMatrix,
    config: TrainConfig,
) -> Graphs:
    """Unified graph from training interactions, bipartite item graphs and item masks."""
    n_users, n_bundles = train.shape
    if user_item.n_rows != n_users:
        raise ShapeError(f"user-item has {user_item.n_rows} users, expected {n_users}")
    if bundle_item.n_rows != n_bundles:
        raise ShapeError(f"bundle-item has {bundle_item.n_rows} bundles, expected {n_bundles}")
    if user_item.n_cols != bundle_item.n_cols:
        raise ShapeError(
            f"user-item has {user_item.n_cols} items, bundle-item {bundle_item.n_cols}"
        )
    user_mask = binarize(cooccurrence(train, Side.ROWS), config.theta_u)
    bundle_mask = binarize(cooccurrence(train, Side.COLS), config.theta_b)
    return Graphs(
        unified=build_unified_graph(train, user_mask, bundle_mask),
        ui_adjacency=build_bipartite_adjacency(user_item),
        bi_adjacency=build_bipartite_adjacency(bundle_item),
        user_item=user_item,
        bundle_item=bundle_item,
        up_mask=binarize(cooccurrence(user_item, Side.COLS), config.theta_up),
        bc_mask=binarize(cooccurrence(bundle_item, Side.COLS), config.theta_bc),
    )


@dataclass(frozen=True, eq=False)
class ForwardState:
    """Per-view representations of every user and bundle after one forward pass."""

    sv_users: Tensor
    sv_bundles: Tensor
    rv_users: Tensor
    rv_bundles: Tensor
    subviews: Dict[SubView, SubViewOutput]
    causation: Dict[SubView, CausationMatrices]

    def users(self, mu: float) -> Tensor:
        return final_repr(self.sv_users, self.rv_users, mu)

    def bundles(self, mu: float) -> Tensor:
        return final_repr(self.sv_bundles, self.rv_bundles, mu)

    def score_matrix(self, mu: float) -> np.ndarray:
        """Scores of every (user, bundle) pair, without tracking."""
        return self.users(mu).values @ self.bundles(mu).values.T


def parameter_shapes(
    config: TrainConfig, n_users: int, n_bundles: int, n_items: int
) -> "OrderedDict[str, Tuple[int, int]]":
    d = config.d
    shapes = OrderedDict(T_U=(n_users, d), T_B=(n_bundles, d), T_I=(n_items, d))
    for view in learned_views(config):
        prefix = view.value
        for l in range(config.L):
            shapes[f"{prefix}.p.{l}"] = (d, 1)
            shapes[f"{prefix}.psi_src.{l}"] = (d, d)
            shapes[f"{prefix}.psi_dst.{l}"] = (d, d)
        shapes[f"{prefix}.phi"] = (1, d)
    return shapes


def enabled_views(config: TrainConfig):
    if not config.rv_enabled:
        return []
    views = []
    if config.use_up:
        views.append(SubView.UP)
    if config.use_bc:
        views.append(SubView.BC)
    return views


def causation_kind(config: TrainConfig, view: SubView) -> Causation:
    value = config.causation_up if SubView(view) is SubView.UP else config.causation_bc
    return Causation(value)


def learned_views(config: TrainConfig):
    return [v for v in enabled_views(config) if causation_kind(config, v) is Causation.LEARNED]


class BundleRecommender(DebugMixin):
    """Cohesive and coherent views over fixed graphs and a trainable ParameterSet."""

    name = "model"

    def __init__(self, config: TrainConfig, graphs: Graphs, params: Optional[ParameterSet] = None):
        self.config = config
        self.graphs = graphs
        self.params = params if params is not None else self.init_params(config, graphs)
        self._zero_cache = {}

    @staticmethod
    def init_params(config: TrainConfig, graphs: Graphs) -> ParameterSet:
        """Xavier-initialise every tensor, in a fixed order, from ``config.seed``."""
        rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
        dtype = np.dtype(config.dtype)
        params = ParameterSet()
        for name, count in (
            ("T_U", graphs.n_users),
            ("T_B", graphs.n_bundles),
            ("T_I", graphs.n_items),
        ):
            params.register(name, xavier_init(count, config.d, rng, dtype))
        for view in learned_views(config):
            MPCNetParams.create(
                params, view.value, config.d, config.L, rng, config.alpha, config.eps, config.slope
            )
        if dtype != np.float64:
            for t in params:
                t.values = t.values.astype(dtype)
        return params

    def mpcnet(self, view: SubView) -> Optional[MPCNetParams]:
        c = self.config
        return mpcnet_for(self.params, view, c.alpha, c.eps, c.slope)

    def _zeros(self, n: int) -> Tensor:
        if n not in self._zero_cache:
            self._zero_cache[n] = Tensor(np.zeros((n, self.config.d), dtype=self.config.dtype))
        return self._zero_cache[n]

    def enhanced_items(self, view: SubView) -> Tuple[Tensor, CausationMatrices]:
        T_I = self.params["T_I"]
        mask = self.graphs.item_mask(view)
        kind = causation_kind(self.config, view)
        if kind is Causation.LEARNED:
            net = self.mpcnet(view)
            if net is None:
                raise ShapeError(f"no causation parameters registered for {view.value}")
            causation = causation_matrices(T_I, net, mask)
            return enhance_items(T_I, causation, net), causation
        causation = fixed_causation(mask, kind)
        return enhance_items_fixed(T_I, causation, self.config.alpha), causation

    def subview(self, view: SubView) -> Tuple[SubViewOutput, CausationMatrices]:
        g, H_sub = self.graphs, self.config.H_sub
        T_hat_I, causation = self.enhanced_items(view)
        if view is SubView.UP:
            out = run_subview_UP(self.params["T_U"], T_hat_I, g.ui_adjacency, g.bundle_item, H_sub)
        else:
            out = run_subview_BC(self.params["T_B"], T_hat_I, g.bi_adjacency, g.user_item, H_sub)
        return out, causation

    def forward(self) -> ForwardState:
        c, g = self.config, self.graphs
        if c.use_sv:
            sv_users, sv_bundles = cohesive_view(
                self.params["T_U"], self.params["T_B"], g.unified, c.H
            )
        else:
            sv_users, sv_bundles = self._zeros(g.n_users), self._zeros(g.n_bundles)

        subviews, causation = {}, {}
        for view in enabled_views(c):
            subviews[view], causation[view] = self.subview(view)
        if subviews:
            blank = {
                view: zero_subview(view, g.n_users, g.n_bundles, g.n_items, c.d, c.dtype)
                for view in SubView
            }
            rv_users, rv_bundles = fuse_coherent(
                subviews.get(SubView.UP, blank[SubView.UP]),
                subviews.get(SubView.BC, blank[SubView.BC]),
                c.effective_beta,
            )
        else:
            rv_users, rv_bundles = self._zeros(g.n_users), self._zeros(g.n_bundles)
        return ForwardState(sv_users, sv_bundles, rv_users, rv_bundles, subviews, causation)

    def score_matrix(self) -> np.ndarray:
        return self.forward().score_matrix(self.config.mu)

    def embedding_tensors(self):
        return [self.params[name] for name in ("T_U", "T_B", "T_I")]

    def causation_tensors(self):
        return [t for name, t in self.params.items() if name not in ("T_U", "T_B", "T_I")]


def regularised(model: BundleRecommender, users: np.ndarray, bundles: np.ndarray):
    """Tensors covered by the L2 term when it is restricted to the batch."""
    params = model.params
    return [
        ag.gather_rows(params["T_U"], users),
        ag.gather_rows(params["T_B"], bundles),
        params["T_I"],
        *model.causation_tensors(),
    ]
