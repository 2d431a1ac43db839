"""Shared builders for randomized and hand-crafted test inputs."""

from __future__ import annotations

import numpy as np

from drekge.data import KnowledgeGraph, build_graph
from drekge.domains import DomainModel
from drekge.ellipsoid import Ellipsoid
from drekge.models import EmbeddingModel


def random_graph(rng: np.random.Generator, n_entities: int = 30,
                 n_relations: int = 4, n_train: int = 60, n_valid: int = 8,
                 n_test: int = 12) -> KnowledgeGraph:
    """Random triples with every relation and entity seeded in training
    so held-out relations always have training statistics."""
    def triple(r=None):
        h, t = rng.integers(0, n_entities, size=2)
        r = rng.integers(0, n_relations) if r is None else r
        return (f"e{h:03d}", f"r{r}", f"e{t:03d}")

    train = [triple(r) for r in range(n_relations)]
    train += [triple() for _ in range(max(0, n_train - n_relations))]
    valid = [triple() for _ in range(n_valid)]
    test = [triple() for _ in range(n_test)]
    return build_graph(train, valid, test)


def random_model(rng: np.random.Generator, graph: KnowledgeGraph,
                 variant: str = "transe", dim: int = 6,
                 dissimilarity: str = "l1") -> EmbeddingModel:
    """Unstructured random parameters; projections are random too so the
    projected code paths differ from identity."""
    n_e, n_r = graph.n_entities, graph.n_relations
    ent = rng.normal(size=(n_e, dim))
    rel = rng.normal(size=(n_r, dim))
    head_proj = tail_proj = None
    if variant in ("transr", "stranse"):
        head_proj = rng.normal(scale=0.6, size=(n_r, dim, dim))
    if variant == "stranse":
        tail_proj = rng.normal(scale=0.6, size=(n_r, dim, dim))
    return EmbeddingModel(variant, dissimilarity, ent, rel, head_proj,
                          tail_proj)


def random_ellipsoid(rng: np.random.Generator, k: int,
                     center_scale: float = 1.0) -> Ellipsoid:
    factor = np.tril(rng.normal(scale=0.4, size=(k, k)))
    np.fill_diagonal(factor, np.abs(rng.normal(scale=0.5, size=k)) + 0.3)
    return Ellipsoid(rng.normal(scale=center_scale, size=k), factor)


def random_domain_model(rng: np.random.Generator, graph: KnowledgeGraph,
                        model: EmbeddingModel,
                        coverage: float = 0.7) -> DomainModel:
    """Random ellipsoids over a random subset of (relation, side) pairs."""
    ellipsoids = {}
    skipped = []
    for r in range(graph.n_relations):
        for side in ("head", "tail"):
            if rng.random() < coverage:
                ellipsoids[(r, side)] = random_ellipsoid(rng, model.rel_dim)
            else:
                skipped.append((r, side))
    return DomainModel(model.rel_dim, model.fingerprint(), ellipsoids,
                       tuple(skipped))


def surface_points(rng: np.random.Generator, n: int, center: np.ndarray,
                   semi_axes: np.ndarray) -> np.ndarray:
    """Points exactly on an axis-aligned ellipsoid surface: unit
    directions scaled per axis."""
    dirs = rng.normal(size=(n, len(center)))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return center + dirs * semi_axes


def country_capital_kg() -> KnowledgeGraph:
    """20 entities, 2 relations. Nine countries all border each other,
    and so do their nine capitals, which pulls each group into its own
    compact cluster; ``has_capital`` links the two clusters. Two drifter
    entities appear only in the validation split, so training never
    pulls them toward either cluster and they stay far from both
    domains."""
    countries = [f"country_{i}" for i in range(9)]
    capitals = [f"capital_{i}" for i in range(9)]
    train = [(countries[i], "has_capital", capitals[i]) for i in range(9)]
    train += [(countries[i], "borders", countries[j])
              for i in range(9) for j in range(9) if i != j]
    train += [(capitals[i], "borders", capitals[j])
              for i in range(9) for j in range(9) if i != j]
    valid = [("drifter_0", "borders", "drifter_1")]
    test = [(countries[i], "has_capital", capitals[i]) for i in (1, 4, 7)]
    test += [(countries[2], "borders", countries[3])]
    return build_graph(train, valid, test)
