"""Shared tree builders and fixtures."""

import numpy as np
import pytest

from treepack.trees import Tree


def spider(centers, leaves_each):
    """Path of `centers` internal vertices, each with pendant leaves."""
    edges = [(i, i + 1) for i in range(centers - 1)]
    nxt = centers
    for c in range(centers):
        for _ in range(leaves_each):
            edges.append((c, nxt))
            nxt += 1
    return Tree(nxt, edges)


def caterpillar(spine, twig_at=()):
    """Path of `spine` vertices with one pendant twig at each given spot."""
    edges = [(i, i + 1) for i in range(spine - 1)]
    nxt = spine
    for s in twig_at:
        edges.append((s, nxt))
        nxt += 1
    return Tree(nxt, edges)


def broom(handle, bristles):
    """Path of `handle` edges ending in a star of `bristles` leaves."""
    edges = [(i, i + 1) for i in range(handle)]
    nxt = handle + 1
    for _ in range(bristles):
        edges.append((handle, nxt))
        nxt += 1
    return Tree(nxt, edges)


def double_star(k):
    """Two adjacent centers with k leaves each."""
    edges = [(0, 1)]
    nxt = 2
    for c in (0, 1):
        for _ in range(k):
            edges.append((c, nxt))
            nxt += 1
    return Tree(nxt, edges)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
