"""Centralized tracker: bipartite request/holder network, max-flow scheduling
and the exhaustive expander (Hall condition) verifier for desk-scale nets."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

from .allocation import AllocationMap
from .model import SimState, StripeId, ConnectionAssignment


class Unschedulable(Exception):
    """A requested stripe has no holder at all."""

    def __init__(self, stripe: StripeId):
        super().__init__(f"stripe {stripe} has no holder")
        self.stripe = stripe


@dataclass
class FlowNetwork:
    """Source -> requests (cap 1) -> holder boxes (cap 1 arcs) -> sink
    (cap u_i*s). holder_arcs[r] lists indices into box_ids."""

    requests: list[Optional[StripeId]]
    requesters: list[int]  # box issuing each request, -1 for synthetic nets
    box_ids: list[int]
    box_caps: list[int]
    holder_arcs: list[list[int]]

    @property
    def num_requests(self) -> int:
        return len(self.requests)

    @property
    def num_arcs(self) -> int:
        return self.num_requests + sum(len(a) for a in self.holder_arcs) + len(self.box_ids)


@dataclass
class MaxFlowResult:
    value: int
    request_to_box: list[int]  # index into box_ids, -1 when unserved
    source_side: set[int]  # request indices on the source side of the min cut


@dataclass
class Infeasible:
    """Scheduling obstruction: a request multiset whose holders cannot cover
    it (when extractable from the min cut)."""

    total_requests: int
    flow_value: int
    witness_requests: Optional[list[int]] = None
    witness_stripes: Optional[list[StripeId]] = None
    witness_boxes: Optional[list[int]] = None
    witness_capacity: Optional[int] = None


def max_flow(net: FlowNetwork) -> MaxFlowResult:
    """Exact integral max flow via Dinic's algorithm."""
    R, B = net.num_requests, len(net.box_ids)
    nn = R + B + 2
    src, snk = 0, nn - 1

    # edge lists: to[], cap[], paired reverse edges at i^1
    to: list[int] = []
    cap: list[int] = []
    head: list[list[int]] = [[] for _ in range(nn)]

    def add_edge(u, v, c):
        head[u].append(len(to))
        to.append(v)
        cap.append(c)
        head[v].append(len(to))
        to.append(u)
        cap.append(0)

    req_edge = []
    for r in range(R):
        req_edge.append(len(to))
        add_edge(src, 1 + r, 1)
    holder_edge: list[list[int]] = []
    for r in range(R):
        ids = []
        for bi in net.holder_arcs[r]:
            ids.append(len(to))
            add_edge(1 + r, 1 + R + bi, 1)
        holder_edge.append(ids)
    for bi in range(B):
        add_edge(1 + R + bi, snk, net.box_caps[bi])

    level = [0] * nn
    it = [0] * nn

    def bfs() -> bool:
        for i in range(nn):
            level[i] = -1
        dq = deque([src])
        level[src] = 0
        while dq:
            u = dq.popleft()
            for eid in head[u]:
                if cap[eid] > 0 and level[to[eid]] < 0:
                    level[to[eid]] = level[u] + 1
                    dq.append(to[eid])
        return level[snk] >= 0

    def dfs(u: int, f: int) -> int:
        if u == snk:
            return f
        while it[u] < len(head[u]):
            eid = head[u][it[u]]
            v = to[eid]
            if cap[eid] > 0 and level[v] == level[u] + 1:
                got = dfs(v, min(f, cap[eid]))
                if got > 0:
                    cap[eid] -= got
                    cap[eid ^ 1] += got
                    return got
            it[u] += 1
        return 0

    value = 0
    while bfs():
        it = [0] * nn
        while True:
            f = dfs(src, 1 << 60)
            if f == 0:
                break
            value += f

    request_to_box = [-1] * R
    for r in range(R):
        for j, bi in enumerate(net.holder_arcs[r]):
            if cap[holder_edge[r][j]] == 0:  # unit arc saturated
                request_to_box[r] = bi
                break

    # Residual reachability from the source marks the min-cut source side.
    seen = [False] * nn
    seen[src] = True
    dq = deque([src])
    while dq:
        u = dq.popleft()
        for eid in head[u]:
            if cap[eid] > 0 and not seen[to[eid]]:
                seen[to[eid]] = True
                dq.append(to[eid])
    source_side = {r for r in range(R) if seen[1 + r]}
    return MaxFlowResult(value=value, request_to_box=request_to_box,
                         source_side=source_side)


def build_request_graph(state: SimState, alloc: AllocationMap) -> FlowNetwork:
    """One request node per stripe of every playing session; holders are the
    active allocation replicas plus playback caches sufficiently ahead of the
    requester. A box never holds for itself."""
    t_s = state.cfg.t_s
    requests: list[StripeId] = []
    requesters: list[int] = []
    positions: list[int] = []
    for box in range(state.cfg.n):
        for sess in state.sessions[box]:
            for j in range(state.cfg.s):
                requests.append(StripeId(sess.video, j))
                requesters.append(box)
                positions.append(sess.position)

    box_index: dict[int, int] = {}
    box_ids: list[int] = []

    def bi_of(b: int) -> int:
        if b not in box_index:
            box_index[b] = len(box_ids)
            box_ids.append(b)
        return box_index[b]

    holder_arcs: list[list[int]] = []
    for (stripe, requester, pos) in zip(requests, requesters, positions):
        holders: set[int] = set()
        for b in alloc.holders(stripe.video, stripe.stripe):
            b = int(b)
            if b != requester and state.active[b]:
                holders.add(b)
        for b in range(state.cfg.n):
            if b == requester or not state.active[b]:
                continue
            cp = state.cache_position(b, stripe.video)
            if cp is not None and cp >= pos + t_s:
                holders.add(b)
        if not holders:
            raise Unschedulable(stripe)
        holder_arcs.append(sorted(bi_of(b) for b in holders))

    box_caps = [int(state.slots[b]) for b in box_ids]
    return FlowNetwork(requests=list(requests), requesters=requesters,
                       box_ids=box_ids, box_caps=box_caps,
                       holder_arcs=holder_arcs)


def schedule_maxflow(state: SimState, alloc: AllocationMap):
    """Run the tracker over the current request multiset. Returns a
    ConnectionAssignment when every request is served, else an Infeasible
    carrying the min-cut obstruction when one decodes cleanly."""
    try:
        net = build_request_graph(state, alloc)
    except Unschedulable as exc:
        return Infeasible(total_requests=-1, flow_value=0,
                          witness_stripes=[exc.stripe], witness_requests=None,
                          witness_boxes=[], witness_capacity=0)
    res = max_flow(net)
    if res.value == net.num_requests:
        entries = []
        for r in range(net.num_requests):
            bi = res.request_to_box[r]
            entries.append((net.requesters[r], net.box_ids[bi], net.requests[r]))
        return ConnectionAssignment(s=state.cfg.s, entries=entries)
    return _extract_obstruction(net, res)


def _extract_obstruction(net: FlowNetwork, res: MaxFlowResult) -> Infeasible:
    u_side = sorted(res.source_side)
    if not u_side:
        return Infeasible(total_requests=net.num_requests, flow_value=res.value)
    nb: set[int] = set()
    for r in u_side:
        nb.update(net.holder_arcs[r])
    capacity = sum(net.box_caps[bi] for bi in nb)
    if capacity >= len(u_side):  # decoding ambiguous; report without witness
        return Infeasible(total_requests=net.num_requests, flow_value=res.value)
    return Infeasible(
        total_requests=net.num_requests, flow_value=res.value,
        witness_requests=u_side,
        witness_stripes=[net.requests[r] for r in u_side],
        witness_boxes=sorted(net.box_ids[bi] for bi in nb),
        witness_capacity=capacity)


def check_expander(net: FlowNetwork, b_per_box: Optional[list[int]] = None,
                   max_requests: int = 20):
    """Exhaustively verify that every request subset U' satisfies
    sum of holder capacities over N(U') >= |U'|. Returns (True, None) or
    (False, minimal violating subset as request indices)."""
    R = net.num_requests
    if R > max_requests:
        raise ValueError(f"request side {R} exceeds enumeration guard {max_requests}")
    caps = net.box_caps if b_per_box is None else list(b_per_box)
    masks = []
    for arcs in net.holder_arcs:
        m = 0
        for bi in arcs:
            m |= 1 << bi
        masks.append(m)

    capsum_cache: dict[int, int] = {0: 0}

    def capsum(mask: int) -> int:
        got = capsum_cache.get(mask)
        if got is None:
            low = mask & -mask
            got = capsum(mask ^ low) + caps[low.bit_length() - 1]
            capsum_cache[mask] = got
        return got

    best: Optional[int] = None
    best_size = R + 1
    for sub in range(1, 1 << R):
        size = sub.bit_count()
        if size >= best_size:
            continue
        nb = 0
        x = sub
        while x:
            low = x & -x
            nb |= masks[low.bit_length() - 1]
            x ^= low
        if capsum(nb) < size:
            best, best_size = sub, size
    if best is None:
        return True, None
    return False, [r for r in range(R) if best >> r & 1]


def dump_network(net: FlowNetwork, res: Optional[MaxFlowResult] = None) -> str:
    """Debug text dump, one arc per line: 'from to capacity flow'."""
    lines = []
    for r in range(net.num_requests):
        served = res is not None and res.request_to_box[r] >= 0
        lines.append(f"source req{r} 1 {int(served) if res else 0}")
    for r, arcs in enumerate(net.holder_arcs):
        for bi in arcs:
            flow = int(res is not None and res.request_to_box[r] == bi)
            lines.append(f"req{r} box{net.box_ids[bi]} 1 {flow}")
    used: dict[int, int] = {}
    if res is not None:
        for r in range(net.num_requests):
            bi = res.request_to_box[r]
            if bi >= 0:
                used[bi] = used.get(bi, 0) + 1
    for bi, b in enumerate(net.box_ids):
        lines.append(f"box{b} sink {net.box_caps[bi]} {used.get(bi, 0)}")
    return "\n".join(lines) + "\n"
