"""Cascade corpora: parsing, graph construction, synthesis, splits.

File format (one cascade per line, CasFlow/DeepHawkes-compatible):

    id<TAB>root<TAB>pub_time<TAB>final_count<TAB>path[,path...]

where each path is ``u0/u1/.../uk:t``: user uk adopted at offset t via
parent u(k-1). A single-node path ``root:0`` declares the root itself.

The synthetic generator draws a preferential-attachment global graph and
runs Galton-Watson cascades over its neighborhoods: every adopter draws
Poisson(R) offspring among its not-yet-infected neighbors, each delivery
delayed by an exponential waiting time whose mean depends on the
transmitting node's speed class (hub-adjacent nodes transmit fast, the
periphery slowly). Popularity is the number of adopters at the horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph_core import SparseMatrix, adjacency_from_edges


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class CascadeEdge:
    parent: int
    child: int
    time: float

    def __post_init__(self):
        if self.time < 0:
            raise ValidationError(f"edge time {self.time} < 0")
        if self.parent == self.child:
            raise ValidationError(f"self-adoption by user {self.parent}")


@dataclass
class CascadeRecord:
    cascade_id: str
    root_user: int
    publish_time: float
    edges: list
    final_popularity: int

    def __post_init__(self):
        times = [e.time for e in self.edges]
        if any(t2 < t1 for t1, t2 in zip(times, times[1:])):
            self.edges = sorted(self.edges, key=lambda e: e.time)
        seen = {self.root_user}
        for e in self.edges:
            if e.child in seen:
                raise ValidationError(
                    f"cascade {self.cascade_id}: duplicate child {e.child}"
                )
            seen.add(e.child)
        if self.final_popularity < 1:
            raise ValidationError(
                f"cascade {self.cascade_id}: final popularity must count the root"
            )


@dataclass
class CascadeGraph:
    users: list  # (user-id, adoption-time), sorted by (time, id); root at 0.0
    edges: list
    observation_time: float

    @property
    def n(self):
        return len(self.users)

    def adjacency(self) -> SparseMatrix:
        """Undirected adjacency over per-cascade dense indices."""
        index = {u: i for i, (u, _) in enumerate(self.users)}
        pairs = [(index[e.parent], index[e.child]) for e in self.edges]
        return adjacency_from_edges(len(self.users), pairs)


@dataclass
class GlobalGraph:
    node_count: int
    edges: list  # deduped (u, v) with u < v, dense ids
    id_map: dict  # original id -> dense id
    _adj: SparseMatrix = field(default=None, repr=False, compare=False)
    _nbrs: list = field(default=None, repr=False, compare=False)

    def adjacency(self) -> SparseMatrix:
        if self._adj is None:
            self._adj = adjacency_from_edges(self.node_count, self.edges)
        return self._adj

    def neighbors(self) -> list:
        if self._nbrs is None:
            nbrs = [[] for _ in range(self.node_count)]
            for u, v in self.edges:
                nbrs[u].append(v)
                nbrs[v].append(u)
            self._nbrs = nbrs
        return self._nbrs

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.node_count, dtype=np.int64)
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg


@dataclass
class Corpus:
    records: list
    global_graph: GlobalGraph
    metadata: dict

    @property
    def size(self):
        return len(self.records)


# -- parsing ---------------------------------------------------------------


def _parse_path(token, line_no):
    body, sep, t_str = token.rpartition(":")
    if not sep or not body:
        raise ParseError(f"line {line_no}: malformed path {token!r}")
    try:
        t = float(t_str)
        chain = [int(u) for u in body.split("/")]
    except ValueError as exc:
        raise ParseError(f"line {line_no}: malformed path {token!r}") from exc
    return chain, t


def parse_cascade_file(stream) -> list:
    """Parse a line-oriented cascade stream into records."""
    records = []
    for line_no, raw in enumerate(stream, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ParseError(
                f"line {line_no}: expected 5 tab-separated fields, got {len(parts)}"
            )
        cid, root_s, pub_s, count_s, paths_s = parts
        try:
            root = int(root_s)
            pub = float(pub_s)
            final = int(count_s)
        except ValueError as exc:
            raise ParseError(f"line {line_no}: malformed header fields") from exc
        edges = []
        for token in paths_s.split(","):
            token = token.strip()
            if not token:
                raise ParseError(f"line {line_no}: empty path")
            chain, t = _parse_path(token, line_no)
            if len(chain) == 1:
                if chain[0] != root:
                    raise ParseError(
                        f"line {line_no}: single-node path {chain[0]} is not the root {root}"
                    )
                continue
            edges.append(CascadeEdge(chain[-2], chain[-1], t))
        edges.sort(key=lambda e: e.time)
        try:
            records.append(CascadeRecord(cid, root, pub, edges, final))
        except ValidationError as exc:
            raise ValidationError(f"line {line_no}: {exc}") from exc
    return records


def serialize_records(records) -> str:
    """Canonical text form: full root-to-child path per edge, time order."""
    lines = []
    for r in records:
        parent_of = {e.child: e.parent for e in r.edges}
        paths = [f"{r.root_user}:0"]
        for e in r.edges:
            chain = [e.child]
            while chain[-1] in parent_of:
                chain.append(parent_of[chain[-1]])
            chain.reverse()
            paths.append("/".join(str(u) for u in chain) + f":{e.time:.6f}")
        lines.append(
            f"{r.cascade_id}\t{r.root_user}\t{r.publish_time:.6f}"
            f"\t{r.final_popularity}\t{','.join(paths)}"
        )
    return "\n".join(lines) + ("\n" if lines else "")


def build_cascade_graph(record: CascadeRecord, t_obs: float) -> CascadeGraph:
    if t_obs <= 0:
        raise ValueError("observation time must be positive")
    users = [(record.root_user, 0.0)]
    edges = []
    for e in record.edges:
        if e.time <= t_obs:
            users.append((e.child, e.time))
            edges.append(e)
    users.sort(key=lambda ut: (ut[1], ut[0]))
    return CascadeGraph(users, edges, t_obs)


def build_global_graph(stream) -> GlobalGraph:
    """Read ``u<TAB>v`` pairs; dedupe, drop self-loops, compact ids."""
    raw_edges = []
    ids = set()
    for line_no, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"line {line_no}: expected `u<TAB>v`")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise ParseError(f"line {line_no}: non-integer node id") from exc
        ids.add(u)
        ids.add(v)
        if u != v:
            raw_edges.append((u, v))
    id_map = {orig: dense for dense, orig in enumerate(sorted(ids))}
    dedup = sorted(
        {(min(id_map[u], id_map[v]), max(id_map[u], id_map[v])) for u, v in raw_edges}
    )
    return GlobalGraph(len(ids), dedup, id_map)


# -- synthesis ---------------------------------------------------------------


@dataclass
class CorpusConfig:
    num_cascades: int
    graph_size: int
    branching_mean: float
    time_horizon: float
    seed: int
    attach_m: int = 3
    fast_communities: int = 5
    bridge_rate: float = 0.08
    bridge_ramp: float = 2.2
    wait_fast: float = 2.0
    wait_slow: float = 200.0
    min_obs_count: int = 0
    min_obs_time: float = 0.0
    dataset_name: str = "synthetic"

    def __post_init__(self):
        if not 0 <= self.branching_mean < 1:
            raise ValueError(
                f"branching mean {self.branching_mean} outside [0, 1): "
                "supercritical cascades explode"
            )
        if self.num_cascades < 0 or self.graph_size < 2:
            raise ValueError("need a non-negative cascade count and >= 2 nodes")
        if self.time_horizon <= 0:
            raise ValueError("time horizon must be positive")
        if self.fast_communities < 1:
            raise ValueError("need at least one fast community")
        if self.bridge_rate < 0 or self.bridge_ramp <= 0:
            raise ValueError("bridge rate must be >= 0 and ramp positive")


def _preferential_attachment_edges(n, m, rng):
    """Repeated-nodes preferential attachment; returns dense (u, v) pairs."""
    edges = []
    repeated = []
    # seed clique on the first m+1 nodes
    m0 = min(m + 1, n)
    for i in range(m0):
        for j in range(i + 1, m0):
            edges.append((i, j))
            repeated.extend((i, j))
    for node in range(m0, n):
        targets = set()
        while len(targets) < m:
            pick = repeated[int(rng.integers(len(repeated)))]
            targets.add(pick)
        for t in sorted(targets):
            edges.append((t, node))
            repeated.extend((t, node))
    return sorted((min(u, v), max(u, v)) for u, v in edges)


def _community_graph(n, m, fast_communities, bridge_rate, bridge_ramp, rng):
    """Scale-free graph built from preferential-attachment communities.

    Half the nodes form one large slow block; the rest split evenly into
    fast communities, each grown by preferential attachment on its own.
    The fast communities are chained (adjacent communities share sparse
    links), and community c sends roughly bridge_rate * bridge_ramp**c
    cross links per node into the slow block. Cascades rooted in different
    communities therefore expose very different numbers of slow neighbors,
    and the chain gives the community ladder a smooth spectral coordinate.

    Returns (sorted edge list, fast mask). The community count is clamped
    so every community keeps at least one node on tiny graphs.
    """
    slow_size = n // 2
    fast_total = n - slow_size
    k = max(1, min(fast_communities, fast_total))
    sizes = [fast_total // k + (1 if i < fast_total % k else 0) for i in range(k)]
    sizes.append(slow_size)

    edges = []
    starts = []
    offset = 0
    for size in sizes:
        starts.append(offset)
        for u, v in _preferential_attachment_edges(size, m, rng):
            edges.append((u + offset, v + offset))
        offset += size

    fast = np.zeros(n, dtype=bool)
    fast[:fast_total] = True

    seen = set(edges)

    def cross(src, src_size, dst, dst_size, want):
        for _ in range(want):
            u = src + int(rng.integers(src_size))
            v = dst + int(rng.integers(dst_size))
            pair = (min(u, v), max(u, v))
            if pair in seen:
                continue
            seen.add(pair)
            edges.append(pair)

    for c in range(k - 1):
        want = int(round(0.5 * min(sizes[c], sizes[c + 1])))
        cross(starts[c], sizes[c], starts[c + 1], sizes[c + 1], want)
    if slow_size > 0:
        for c in range(k):
            want = int(round(bridge_rate * (bridge_ramp**c) * sizes[c]))
            cross(starts[c], sizes[c], starts[-1], slow_size, want)
    return sorted(edges), fast


def _simulate_cascade(nbrs, wait_mean, r_mean, horizon, root, rng):
    """One Galton-Watson run over graph neighborhoods. Returns {user: time}."""
    from collections import deque

    infected = {root: 0.0}
    frontier = deque([(root, 0.0)])
    edges = []
    while frontier:
        node, t = frontier.popleft()
        k = rng.poisson(r_mean)
        if k == 0:
            continue
        candidates = [v for v in nbrs[node] if v not in infected]
        if not candidates:
            continue
        if k < len(candidates):
            picks = rng.permutation(len(candidates))[:k]
            chosen = [candidates[i] for i in picks]
        else:
            chosen = candidates
        for child in chosen:
            tc = t + rng.exponential(wait_mean[child])
            if tc > horizon:
                continue
            infected[child] = tc
            edges.append(CascadeEdge(node, child, tc))
            frontier.append((child, tc))
    return infected, edges


def generate_synthetic_corpus(cfg: CorpusConfig) -> Corpus:
    rng = np.random.default_rng(cfg.seed)
    pa_edges, fast = _community_graph(
        cfg.graph_size,
        cfg.attach_m,
        cfg.fast_communities,
        cfg.bridge_rate,
        cfg.bridge_ramp,
        rng,
    )
    graph = GlobalGraph(
        cfg.graph_size, pa_edges, {i: i for i in range(cfg.graph_size)}
    )
    wait_mean = np.where(fast, cfg.wait_fast, cfg.wait_slow)
    nbrs = graph.neighbors()

    records = []
    attempts = 0
    max_attempts = max(1000, 500 * cfg.num_cascades)
    while len(records) < cfg.num_cascades:
        attempts += 1
        if attempts > max_attempts:
            raise RuntimeError(
                f"observation filter rejected too many cascades "
                f"({len(records)}/{cfg.num_cascades} kept after {attempts} draws)"
            )
        root = int(rng.integers(cfg.graph_size))
        infected, edges = _simulate_cascade(
            nbrs, wait_mean, cfg.branching_mean, cfg.time_horizon, root, rng
        )
        if cfg.min_obs_count > 0:
            observed = sum(1 for t in infected.values() if t <= cfg.min_obs_time)
            if observed < cfg.min_obs_count:
                continue
        edges.sort(key=lambda e: e.time)
        idx = len(records)
        records.append(
            CascadeRecord(f"syn{idx:05d}", root, float(idx), edges, len(infected))
        )
    meta = {
        "name": cfg.dataset_name,
        "horizon": cfg.time_horizon,
        "branching_mean": cfg.branching_mean,
        "seed": cfg.seed,
    }
    return Corpus(records, graph, meta)


# -- splits ------------------------------------------------------------------


def split_corpus(corpus: Corpus, ratios=(0.7, 0.15, 0.15), seed=0):
    """Seeded shuffle, floor-rounded val/test, remainder to train."""
    if any(r < 0 or r > 1 for r in ratios):
        raise ValueError(f"ratios {ratios} outside [0, 1]")
    if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError(f"ratios {ratios} do not sum to 1")
    m = len(corpus.records)
    n_val = int(math.floor(ratios[1] * m))
    n_test = int(math.floor(ratios[2] * m))
    order = np.random.default_rng(seed).permutation(m)
    val_idx = set(order[:n_val].tolist())
    test_idx = set(order[n_val : n_val + n_test].tolist())
    train, val, test = [], [], []
    for i, rec in enumerate(corpus.records):
        if i in val_idx:
            val.append(rec)
        elif i in test_idx:
            test.append(rec)
        else:
            train.append(rec)
    return train, val, test


# -- corpus files ------------------------------------------------------------


def write_corpus(corpus: Corpus, directory):
    """Write cascades.tsv, global_graph.tsv, and id_map.csv under a dir."""
    import pathlib

    d = pathlib.Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "cascades.tsv").write_text(serialize_records(corpus.records))
    lines = [f"{u}\t{v}" for u, v in corpus.global_graph.edges]
    (d / "global_graph.tsv").write_text("\n".join(lines) + ("\n" if lines else ""))
    id_lines = ["original_id,dense_id"]
    id_lines += [
        f"{orig},{dense}" for orig, dense in sorted(corpus.global_graph.id_map.items())
    ]
    (d / "id_map.csv").write_text("\n".join(id_lines) + "\n")
    meta = corpus.metadata
    meta_lines = ["[dataset]"] + [f"{k} = {v}" for k, v in sorted(meta.items())]
    (d / "meta.ini").write_text("\n".join(meta_lines) + "\n")


def load_corpus(directory) -> Corpus:
    import configparser
    import pathlib

    d = pathlib.Path(directory)
    with open(d / "cascades.tsv") as fh:
        records = parse_cascade_file(fh)
    id_map_path = d / "id_map.csv"
    if id_map_path.exists():
        # edges in global_graph.tsv are already dense; take them verbatim
        # so isolated nodes don't shift the numbering on reload
        id_map = {}
        for line in id_map_path.read_text().splitlines()[1:]:
            orig, dense = line.split(",")
            id_map[int(orig)] = int(dense)
        edges = []
        for line in (d / "global_graph.tsv").read_text().splitlines():
            if line.strip():
                u, v = (int(x) for x in line.split("\t"))
                edges.append((min(u, v), max(u, v)))
        count = max(id_map.values()) + 1 if id_map else 0
        graph = GlobalGraph(count, sorted(set(edges)), id_map)
    else:
        with open(d / "global_graph.tsv") as fh:
            graph = build_global_graph(fh)
    cp = configparser.ConfigParser()
    cp.read(d / "meta.ini")
    meta = dict(cp["dataset"]) if cp.has_section("dataset") else {}
    return Corpus(records, graph, meta)
