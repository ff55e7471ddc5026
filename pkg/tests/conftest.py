"""Shared fixtures: handcrafted synthetic spaces and backend/proposer pairs."""

from __future__ import annotations

from collections import deque

import pytest

from proofsearch.verifier import MockBackend, SpaceNode, SyntheticSpace


def bfs_solvable(space: SyntheticSpace, max_depth: int) -> bool:
    """Independent reachability oracle: any terminal within max_depth edges."""
    queue = deque([(space.root, 0)])
    dist = {space.root: 0}
    while queue:
        nid, d = queue.popleft()
        if space.nodes[nid].subgoals == 0:
            return True
        if d >= max_depth:
            continue
        for (src, _cmd), dst in space.edges.items():
            if src == nid and (dst not in dist or dist[dst] > d + 1):
                dist[dst] = d + 1
                queue.append((dst, d + 1))
    return False


def count_solution_paths(space: SyntheticSpace, max_depth: int) -> int:
    """Exhaustive count of distinct root-to-terminal command paths <= max_depth."""

    def walk(nid: str, depth: int) -> int:
        total = 1 if space.nodes[nid].subgoals == 0 else 0
        if depth >= max_depth:
            return total
        for (src, _cmd), dst in sorted(space.edges.items()):
            if src == nid:
                total += walk(dst, depth + 1)
        return total

    return walk(space.root, 0)


@pytest.fixture
def linear_space() -> SyntheticSpace:
    """root --apply step_one--> n1 --by finish--> t0."""
    return SyntheticSpace(
        root="n0",
        nodes={
            "n0": SpaceNode(1, goal="G"),
            "n1": SpaceNode(1, goal="a1"),
            "t0": SpaceNode(0),
        },
        edges={("n0", "apply step_one"): "n1", ("n1", "by finish"): "t0"},
    )


@pytest.fixture
def linear_backend(linear_space) -> MockBackend:
    return MockBackend(linear_space)


@pytest.fixture
def branchy_space() -> SyntheticSpace:
    """Two-step solution among dead ends; root has two subgoals."""
    return SyntheticSpace(
        root="n0",
        nodes={
            "n0": SpaceNode(2, goal="G"),
            "n1": SpaceNode(1, goal="g1"),
            "n2": SpaceNode(3, goal="g2"),
            "n3": SpaceNode(2, goal="g3"),
            "t0": SpaceNode(0),
        },
        edges={
            ("n0", "apply s0"): "n1",
            ("n0", "apply s1"): "n2",
            ("n1", "apply s0"): "n3",
            ("n1", "by w0"): "t0",
        },
    )


@pytest.fixture
def isar_space() -> SyntheticSpace:
    """Structured walk for Isar-shaped scripts, gapped and closed variants."""
    return SyntheticSpace(
        root="n0",
        nodes={
            "n0": SpaceNode(1, goal="G"),
            "p0": SpaceNode(1, goal="G"),
            "q0": SpaceNode(1, goal="G", facts=("A.foo", "foo", "bar")),
            "t0": SpaceNode(0),
            "z0": SpaceNode(0),
        },
        edges={
            ("n0", "proof -"): "p0",
            ("p0", 'show "G"'): "q0",
            ("q0", "by easy"): "t0",
            ("q0", "qed"): "z0",
            ("t0", "qed"): "z0",
        },
    )
