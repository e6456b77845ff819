from bunca.models.recommender import (  # noqa: F401
    BundleRecommender,
    ForwardState,
    Graphs,
    build_graphs,
)
