"""Export of item-item causation weights as tab-separated edge lists.

Each sub-view starts with a ``# view up`` (or ``bc``) header line, followed by
lines ``prospect<TAB>src_item<TAB>dst_item<TAB>weight<TAB>flag`` where ``flag``
is ``high`` when the weight reaches :data:`bunca.enums.HIGH_CAUSATION_WEIGHT`
and ``-`` otherwise. Per destination item and prospect only the ``top_n``
heaviest incoming edges are kept, heaviest first, ties by ascending source id.
The laplacian variant weighs edges by ``1/sqrt(deg(i) deg(j))``, which does not
sum to one per destination; its export divides each destination's incoming
weights by their sum, so every exported row is a share of influence like the
other variants.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Union

import numpy as np

from bunca.config import ConfigError
from bunca.dataset import DatasetError, is_decimal, text_lines
from bunca.enums import HIGH_CAUSATION_WEIGHT, Causation, SubView
from bunca.log import DebugMixin
from bunca.models.recommender import BundleRecommender, causation_kind, enabled_views

PathLike = Union[str, Path]

VIEW_HEADER = "# view "


@dataclass(frozen=True)
class CausationEdge:
    view: SubView
    prospect: int
    src: int
    dst: int
    weight: float

    @property
    def high(self) -> bool:
        return self.weight >= HIGH_CAUSATION_WEIGHT

    def to_line(self) -> str:
        flag = "high" if self.high else "-"
        return f"{self.prospect}\t{self.src}\t{self.dst}\t{self.weight!r}\t{flag}"


class CausationExporter(DebugMixin):
    name = "causation"

    def __init__(self, model: BundleRecommender, top_n: int = 5):
        if top_n < 1:
            raise ConfigError(f"top_n must be >= 1, got {top_n}")
        self.model = model
        self.top_n = top_n

    def edges(self, views: Optional[Iterable[SubView]] = None) -> List[CausationEdge]:
        views = list(views) if views is not None else enabled_views(self.model.config)
        out = []
        for view in map(SubView, views):
            _, causation = self.model.enhanced_items(view)
            mask = causation.mask
            shares = causation_kind(self.model.config, view) is Causation.LAPLACIAN
            for l in range(causation.L):
                weights = causation.weights[l].values[:, 0]
                if shares:
                    weights = _row_shares(weights, mask)
                for dst in range(mask.n_rows):
                    lo, hi = mask.row_offsets[dst], mask.row_offsets[dst + 1]
                    srcs, w = mask.col_indices[lo:hi], weights[lo:hi]
                    for k in np.lexsort((srcs, -w))[: self.top_n]:
                        out.append(CausationEdge(view, l, int(srcs[k]), dst, float(w[k])))
            self.debug(f"{view.value}: {causation.L} prospects over {mask.nnz} item pairs")
        return out


def _row_shares(weights: np.ndarray, mask) -> np.ndarray:
    rows = mask.row_ids()
    sums = np.bincount(rows, weights=weights, minlength=mask.n_rows)
    return weights / sums[rows]


def format_edges(edges: Iterable[CausationEdge]) -> str:
    lines, current = [], None
    for edge in edges:
        if edge.view is not current:
            current = edge.view
            lines.append(VIEW_HEADER + current.value)
        lines.append(edge.to_line())
    return "".join(line + "\n" for line in lines)


def export_causation(model: BundleRecommender, path: PathLike, top_n: int = 5) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_edges(CausationExporter(model, top_n).edges()), encoding="utf8")
    return path


def read_causation(path: PathLike) -> List[CausationEdge]:
    path = Path(path)
    edges, view = [], None
    for lineno, line in text_lines(path):
        if line.startswith(VIEW_HEADER):
            name = line[len(VIEW_HEADER) :].strip()
            if name not in {v.value for v in SubView}:
                raise DatasetError(f"{path.name}:{lineno}: unknown view {name!r}")
            view = SubView(name)
            continue
        if not line.strip():
            continue
        fields = line.split("\t")
        if view is None or len(fields) != 5:
            raise DatasetError(f"{path.name}:{lineno}: malformed causation line {line!r}")
        prospect, src, dst, weight, _ = fields
        try:
            if not all(is_decimal(f) for f in (prospect, src, dst)):
                raise ValueError("ids must be decimal")
            value = float(weight)
        except ValueError as ex:
            raise DatasetError(f"{path.name}:{lineno}: {ex} in {line!r}") from ex
        edges.append(CausationEdge(view, int(prospect), int(src), int(dst), value))
    return edges
