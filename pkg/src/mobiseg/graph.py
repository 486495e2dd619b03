"""Home-work tower networks, modularity maximization, community retention.

Self-loop convention throughout: a loop of weight w contributes A_ii = 2w and
counts twice in the node strength, so that 2m = sum of strengths holds with m
the plain sum of edge weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import UserAnchor


def _norm_pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class HWNetwork:
    """Weighted undirected tower network; edge weight = shared H-W trajectories."""

    nodes: tuple[str, ...]
    edges: dict[tuple[str, str], int]

    def __post_init__(self):
        for (a, b), w in self.edges.items():
            if (a, b) != _norm_pair(a, b):
                raise ValueError(f"edge key {(a, b)} not normalised")
            if not (isinstance(w, (int, np.integer)) and w > 0):
                raise ValueError(f"edge weight for {(a, b)} must be a positive integer, got {w!r}")

    @classmethod
    def from_edges(cls, edges: dict[tuple[str, str], int]) -> "HWNetwork":
        norm: dict[tuple[str, str], int] = {}
        for (a, b), w in edges.items():
            key = _norm_pair(a, b)
            norm[key] = norm.get(key, 0) + w
        nodes = sorted({n for key in norm for n in key})
        return cls(nodes=tuple(nodes), edges=norm)

    @property
    def m(self) -> int:
        """Total edge weight (self-loops counted once)."""
        return sum(self.edges.values())

    def strength(self) -> dict[str, int]:
        """k_i = sum of incident weights, self-loops twice."""
        k = dict.fromkeys(self.nodes, 0)
        for (a, b), w in self.edges.items():
            k[a] += w
            k[b] += w  # a == b adds 2w in total
        return k

    def adjacency(self) -> dict[str, dict[str, int]]:
        """Neighbour map a -> {b: w}; loops appear as A_ii = 2w."""
        adj: dict[str, dict[str, int]] = {n: {} for n in self.nodes}
        for (a, b), w in self.edges.items():
            if a == b:
                adj[a][a] = adj[a].get(a, 0) + 2 * w
            else:
                adj[a][b] = adj[a].get(b, 0) + w
                adj[b][a] = adj[b].get(a, 0) + w
        return adj


@dataclass(frozen=True)
class Partition:
    """Node -> community labels, canonically renumbered.

    Label order: descending community size, ties by lowest contained node id;
    labels are contiguous from 0.  Equal groupings therefore compare (and
    serialize) identically.
    """

    assignment: dict[str, int]

    @classmethod
    def from_assignment(cls, raw: dict[str, int]) -> "Partition":
        groups: dict[int, list[str]] = {}
        for node, label in raw.items():
            groups.setdefault(label, []).append(node)
        order = sorted(groups.values(), key=lambda ns: (-len(ns), min(ns)))
        assignment = {node: i for i, members in enumerate(order) for node in members}
        return cls(assignment=assignment)

    @property
    def n_communities(self) -> int:
        return len(set(self.assignment.values()))

    @property
    def labels(self) -> tuple[int, ...]:
        return tuple(range(self.n_communities))

    @property
    def sizes(self) -> tuple[int, ...]:
        out = [0] * self.n_communities
        for label in self.assignment.values():
            out[label] += 1
        return tuple(out)

    def members(self, label: int) -> tuple[str, ...]:
        return tuple(sorted(n for n, c in self.assignment.items() if c == label))


def build_hw_network(anchors: list[UserAnchor], day_filter: int | None = None) -> HWNetwork:
    """Aggregate anchors into the weighted H-W network.

    With ``day_filter`` (0=Monday), only users observed pinging on that
    weekday contribute, giving the per-working-day networks.
    """
    counts: dict[tuple[str, str], int] = {}
    for a in anchors:
        if day_filter is not None and day_filter not in a.weekdays_observed:
            continue
        key = _norm_pair(a.home_tower, a.work_tower)
        counts[key] = counts.get(key, 0) + 1
    return HWNetwork.from_edges(counts)


def modularity(net: HWNetwork, p: Partition, resolution: float = 1.0) -> float:
    """Newman modularity Q = (1/2m) sum_ij [A_ij - r k_i k_j / 2m] d(c_i, c_j).

    Evaluated community-wise as sum_c [Sin_c/2m - r (Stot_c/2m)^2] with
    Sin_c = sum of A_ij over ordered intra-community pairs.
    """
    m = net.m
    if m == 0:
        raise ValueError("modularity is undefined on an empty network (m = 0)")
    missing = set(net.nodes) - set(p.assignment)
    extra = set(p.assignment) - set(net.nodes)
    if missing or extra:
        raise ValueError(f"partition must cover exactly the network nodes "
                         f"(missing {sorted(missing)}, extra {sorted(extra)})")
    two_m = 2.0 * m
    sigma_in: dict[int, float] = {}
    sigma_tot: dict[int, float] = {}
    for node, k in net.strength().items():
        c = p.assignment[node]
        sigma_tot[c] = sigma_tot.get(c, 0.0) + k
    for (a, b), w in net.edges.items():
        if p.assignment[a] == p.assignment[b]:
            c = p.assignment[a]
            sigma_in[c] = sigma_in.get(c, 0.0) + 2.0 * w  # ordered pairs / loop A_ii
    q = 0.0
    for c, tot in sigma_tot.items():
        q += sigma_in.get(c, 0.0) / two_m - resolution * (tot / two_m) ** 2
    return q


def _local_moves(
    adj: list[dict[int, float]],
    k: np.ndarray,
    comm: np.ndarray,
    sigma_tot: np.ndarray,
    m: float,
    resolution: float,
    rng: np.random.Generator,
) -> bool:
    """One Louvain phase: greedy node moves until no move improves Q.

    Returns True if at least one node changed community.
    """
    n = len(adj)
    counts = np.bincount(comm, minlength=n)
    improved = False
    moved = True
    while moved:
        moved = False
        for i in rng.permutation(n):
            c0 = comm[i]
            # weights to neighbouring communities (loop excluded: it moves
            # with the node and cancels in the gain comparison)
            w_to: dict[int, float] = {}
            for j, w in adj[i].items():
                if j != i:
                    w_to[comm[j]] = w_to.get(comm[j], 0.0) + w
            sigma_tot[c0] -= k[i]
            counts[c0] -= 1
            w_to.setdefault(c0, 0.0)
            best_c, best_gain = c0, w_to[c0] - resolution * sigma_tot[c0] * k[i] / (2.0 * m)
            for c in sorted(w_to):
                if c == c0:
                    continue
                gain = w_to[c] - resolution * sigma_tot[c] * k[i] / (2.0 * m)
                if gain > best_gain + 1e-12:
                    best_c, best_gain = c, gain
            if best_gain < -1e-12 and counts[c0] > 0:
                # isolating the node beats every occupied target; use the
                # lowest currently empty label (one exists: c0 kept its own
                # label only while the node sat in it)
                empty = int(np.flatnonzero(counts == 0)[0])
                best_c, best_gain = empty, 0.0
            sigma_tot[best_c] += k[i]
            counts[best_c] += 1
            if best_c != c0:
                comm[i] = best_c
                moved = True
                improved = True
    return improved


def louvain(
    net: HWNetwork, seed: int = 42, resolution: float = 1.0
) -> tuple[Partition, float]:
    """Multi-level greedy modularity maximization (Blondel et al. scheme).

    Starts from singletons, locally moves nodes to the neighbouring community
    with the largest positive gain (sweep order shuffled by ``seed``), then
    aggregates communities into super-nodes and repeats until Q stabilizes.
    Q is asserted non-decreasing across levels.  Returns the canonically
    renumbered partition and its modularity.
    """
    if net.m == 0:
        raise ValueError("louvain requires a nonempty network (m > 0)")
    rng = np.random.default_rng(seed)
    nodes = list(net.nodes)
    index = {n: i for i, n in enumerate(nodes)}
    m = float(net.m)

    # level-local structures, integer-indexed
    adj: list[dict[int, float]] = [{} for _ in nodes]
    loops = [0.0] * len(nodes)
    for (a, b), w in net.edges.items():
        ia, ib = index[a], index[b]
        if ia == ib:
            adj[ia][ia] = adj[ia].get(ia, 0.0) + 2.0 * w
            loops[ia] += 2.0 * w
        else:
            adj[ia][ib] = adj[ia].get(ib, 0.0) + float(w)
            adj[ib][ia] = adj[ib].get(ia, 0.0) + float(w)

    node_to_comm = {n: index[n] for n in nodes}  # original node -> current label
    prev_q = modularity(net, Partition.from_assignment(node_to_comm), resolution)

    while True:
        n = len(adj)
        k = np.array([sum(neigh.values()) for neigh in adj], dtype=float)
        comm = np.arange(n)
        sigma_tot = k.copy()
        improved = _local_moves(adj, k, comm, sigma_tot, m, resolution, rng)
        if not improved:
            break

        # compress labels in first-seen sorted order
        relabel: dict[int, int] = {}
        for c in sorted(set(comm.tolist())):
            relabel[c] = len(relabel)
        comm = np.array([relabel[c] for c in comm])
        node_to_comm = {node: int(comm[cur]) for node, cur in node_to_comm.items()}

        q = modularity(net, Partition.from_assignment(node_to_comm), resolution)
        assert q >= prev_q - 1e-9, "modularity must not decrease across levels"
        prev_q = q

        # aggregate: communities become super-nodes
        n_new = len(relabel)
        if n_new == n:
            break
        new_adj: list[dict[int, float]] = [{} for _ in range(n_new)]
        new_loops = [0.0] * n_new
        for i in range(n):
            ci = comm[i]
            for j, w in adj[i].items():
                cj = comm[j]
                if i == j or ci == cj:
                    continue
                new_adj[ci][cj] = new_adj[ci].get(cj, 0.0) + w
        for i in range(n):
            ci = comm[i]
            new_loops[ci] += loops[i]
            for j, w in adj[i].items():
                if j != i and comm[j] == ci:
                    new_loops[ci] += w  # each intra pair seen from both ends
        for c in range(n_new):
            if new_loops[c]:
                new_adj[c][c] = new_loops[c]
        adj, loops = new_adj, new_loops

        # map original nodes through the aggregation
        # (node_to_comm already points at the new super-node labels)

    partition = Partition.from_assignment(node_to_comm)
    q = modularity(net, partition, resolution)
    assert q >= prev_q - 1e-9
    return partition, q


def prune_small(p: Partition, min_size: int = 2) -> tuple[Partition, list[str]]:
    """Drop communities smaller than ``min_size``; returns (partition, discarded nodes)."""
    sizes = p.sizes
    keep = {n: c for n, c in p.assignment.items() if sizes[c] >= min_size}
    discarded = sorted(n for n in p.assignment if n not in keep)
    return Partition.from_assignment(keep), discarded


def _overlap_counts(
    daily: Partition, aggregate: Partition
) -> tuple[dict[tuple[int, int], int], int]:
    shared = set(daily.assignment) & set(aggregate.assignment)
    if not shared:
        raise ValueError("partitions share no nodes")
    counts: dict[tuple[int, int], int] = {}
    for node in shared:
        key = (daily.assignment[node], aggregate.assignment[node])
        counts[key] = counts.get(key, 0) + 1
    return counts, len(shared)


def retention(daily: Partition, aggregate: Partition, method: str = "greedy") -> float:
    """Fraction of shared nodes keeping their community under label matching.

    Daily communities are matched to aggregate communities one-to-one; a node
    is retained when its daily community's match equals its aggregate
    community.  ``method`` "greedy" pairs largest overlaps first; "optimal"
    maximizes total overlap by linear assignment.
    """
    counts, n_shared = _overlap_counts(daily, aggregate)
    if method == "greedy":
        used_d: set[int] = set()
        used_a: set[int] = set()
        retained = 0
        for (d, a), c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
            if d in used_d or a in used_a:
                continue
            used_d.add(d)
            used_a.add(a)
            retained += c
    elif method == "optimal":
        from scipy.optimize import linear_sum_assignment

        d_labels = sorted({d for d, _ in counts})
        a_labels = sorted({a for _, a in counts})
        mat = np.zeros((len(d_labels), len(a_labels)))
        for (d, a), c in counts.items():
            mat[d_labels.index(d), a_labels.index(a)] = c
        rows, cols = linear_sum_assignment(mat, maximize=True)
        retained = int(mat[rows, cols].sum())
    else:
        raise ValueError(f"unknown matching method {method!r}")
    return retained / n_shared
