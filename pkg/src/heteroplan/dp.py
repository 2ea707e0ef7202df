"""Optimal stage layout for one pipeline group via dynamic programming.

Given a multiset of devices (a count per (machine, type) bucket) and a fixed
layer partition l_1..l_S, the DP assigns each stage a (bucket, size) pair
with size drawn from ``tp_candidates``, minimizing total per-request cost
(stage compute + stage TP comm + the PP edge from the previous stage), with
+inf for any stage whose per-device memory footprint exceeds the device
limit.  Stages may draw from buckets in any order, consecutive stages may
reuse a bucket, and devices may be left over.

States are keyed on (stage index j, assigned-so-far counts tau, the
(bucket, size) move that formed stage j).  Keying on (j, tau) alone -- which
suffices when stage costs depend on tau only -- is not exact once PP edge
costs depend on the previous stage's bucket: two equal-cost prefixes can
reach the same tau ending in different buckets, and the cheaper continuation
depends on which.  The extra key component restores exactness at a small
constant factor; complexity bounds are still reported over distinct (j, tau)
states (see ``visited_state_count``).

Concrete devices are drawn deterministically: a stage taking n devices from
bucket k receives that bucket's next n unassigned ids in id order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .cluster import ClusterSpec, ModelSpec, TaskSpec, TypeVector, check_type_vector
from .costs import (StageAssignment, comp_cost, mem_footprint, pp_comm_cost,
                    tp_comm_cost)

DEFAULT_TP_CANDIDATES = (1, 2, 4, 8)

Move = tuple[int, int]   # (bucket index, stage size)


class DpKey(NamedTuple):
    stage_index: int
    assigned: TypeVector
    entered_by: Move | None   # move that formed stage `stage_index`; None at j=0


class DpTable:
    """Memo of best costs per DpKey, with parent links for backtracking.

    DP[0; zero tau] = 0 by construction; every other key starts at +inf and
    only ever decreases.
    """

    def __init__(self, n_buckets: int):
        self.n_buckets = n_buckets
        root = DpKey(0, (0,) * n_buckets, None)
        self.entries: dict[DpKey, tuple[float, DpKey | None, tuple[int, ...]]] = {
            root: (0.0, None, ()),
        }

    def cost(self, key: DpKey) -> float:
        entry = self.entries.get(key)
        return entry[0] if entry else math.inf

    def best_cost(self, stage_index: int, assigned: TypeVector) -> float:
        """Minimum stored cost over all moves entering (j, tau)."""
        best = math.inf
        for key, (cost, _, _) in self.entries.items():
            if key.stage_index == stage_index and key.assigned == assigned:
                best = min(best, cost)
        return best

    def update(self, key: DpKey, cost: float, parent: DpKey | None,
               stage_devices: tuple[int, ...]) -> bool:
        if cost < self.cost(key):
            self.entries[key] = (cost, parent, stage_devices)
            return True
        return False


def dp_transition(table: DpTable, stage_index: int, assigned: TypeVector,
                  move: Move, stage_cost: float) -> DpTable:
    """One relaxation: DP[j; tau] <- min(old, DP[j-1; tau - move] + stage_cost).

    ``stage_cost`` must already be +inf when the stage violates its device
    memory limit; such candidates leave the table unchanged.
    """

    k, n = move
    if n < 1 or k < 0 or k >= len(assigned) or assigned[k] - n < 0:
        raise ValueError(f"move {move} exceeds assigned counts {assigned}")
    prev = tuple(c - n if i == k else c for i, c in enumerate(assigned))
    base = table.best_cost(stage_index - 1, prev)
    candidate = base + stage_cost if math.isfinite(base) and math.isfinite(stage_cost) else math.inf
    if math.isfinite(candidate):
        parent = None
        best_parent_cost = math.inf
        for key, (cost, _, _) in table.entries.items():
            if key.stage_index == stage_index - 1 and key.assigned == prev and cost < best_parent_cost:
                best_parent_cost = cost
                parent = key
        table.update(DpKey(stage_index, assigned, move), candidate, parent, ())
    return table


@dataclass
class DpResult:
    cost: float                               # math.inf when infeasible
    stages: list[StageAssignment] | None      # None when infeasible
    visited_states: int                       # distinct (j, tau) expanded

    @property
    def feasible(self) -> bool:
        return self.stages is not None and math.isfinite(self.cost)


def _validate_partition(partition: Sequence[int], model: ModelSpec) -> tuple[int, ...]:
    part = tuple(int(l) for l in partition)
    if not part or any(l < 1 for l in part):
        raise ValueError(f"every stage needs >= 1 layer, got {part}")
    if sum(part) != model.num_layers:
        raise ValueError(f"partition sums to {sum(part)}, model has {model.num_layers} layers")
    return part


def solve_pipeline(group: TypeVector, partition: Sequence[int], model: ModelSpec,
                   task: TaskSpec, cluster: ClusterSpec,
                   tp_candidates: Sequence[int] = DEFAULT_TP_CANDIDATES,
                   device_pools: Sequence[Sequence[int]] | None = None) -> DpResult:
    """Minimize pipeline cost over bucket-homogeneous stage layouts.

    ``device_pools`` optionally names the concrete device ids backing each
    bucket count (the search passes each group's allocation); by default the
    first ``group[k]`` ids of cluster bucket k are used.
    """

    check_type_vector(cluster, group)
    part = _validate_partition(partition, model)
    cands = sorted(set(int(c) for c in tp_candidates))
    if not cands or cands[0] < 1:
        raise ValueError(f"tp_candidates must be positive, got {tp_candidates}")

    if device_pools is None:
        pools = [bucket.device_ids[:count] for bucket, count in zip(cluster.buckets, group)]
    else:
        pools = [tuple(p) for p in device_pools]
        for k, (pool, count) in enumerate(zip(pools, group)):
            if len(pool) != count:
                raise ValueError(f"bucket {k}: pool of {len(pool)} ids for count {count}")

    n_buckets = len(group)
    zero = (0,) * n_buckets
    stages_total = len(part)

    stage_memo: dict[tuple[int, int, int, int], float] = {}
    edge_memo: dict[tuple[tuple[int, ...], tuple[int, ...]], float] = {}

    def stage_cost(k: int, n: int, offset: int, layers: int) -> float:
        key = (k, n, offset, layers)
        got = stage_memo.get(key)
        if got is None:
            stage = StageAssignment(pools[k][offset:offset + n], layers)
            limit = cluster.device(stage.devices[0]).gpu_type.mem_limit
            if mem_footprint(stage, model, task) > limit:
                got = math.inf
            else:
                got = comp_cost(stage, model, task, cluster) + \
                    tp_comm_cost(stage, model, task, cluster)
            stage_memo[key] = got
        return got

    def edge_cost(prev_devs: tuple[int, ...], cur_devs: tuple[int, ...],
                  prev_layers: int) -> float:
        key = (prev_devs, cur_devs)
        got = edge_memo.get(key)
        if got is None:
            got = pp_comm_cost(StageAssignment(prev_devs, prev_layers),
                               StageAssignment(cur_devs, 0), model, task, cluster)
            edge_memo[key] = got
        return got

    # level: state (tau, last move) -> (cost, parent state, devices of last stage)
    State = tuple[TypeVector, Move | None]
    level: dict[State, tuple[float, State | None, tuple[int, ...]]] = {
        (zero, None): (0.0, None, ()),
    }
    trail: list[dict[State, tuple[float, State | None, tuple[int, ...]]]] = [level]
    visited: set[tuple[int, TypeVector]] = set()

    for j in range(1, stages_total + 1):
        layers = part[j - 1]
        nxt: dict[State, tuple[float, State | None, tuple[int, ...]]] = {}
        for state in sorted(level, key=lambda s: (s[0], s[1] or (-1, -1))):
            cost, _, prev_devs = level[state]
            tau, _last = state
            for n in cands:
                for k in range(n_buckets):
                    if tau[k] + n > group[k]:
                        continue
                    sc = stage_cost(k, n, tau[k], layers)
                    if not math.isfinite(sc):
                        continue
                    cur_devs = pools[k][tau[k]:tau[k] + n]
                    total = cost + sc
                    if j > 1:
                        total += edge_cost(prev_devs, cur_devs, part[j - 2])
                    ntau = tuple(c + n if i == k else c for i, c in enumerate(tau))
                    nstate = (ntau, (k, n))
                    if total < nxt.get(nstate, (math.inf,))[0]:
                        nxt[nstate] = (total, state, cur_devs)
        visited.update((j, tau) for tau, _ in nxt)
        trail.append(nxt)
        level = nxt
        if not level:
            break

    final = trail[stages_total] if len(trail) > stages_total else {}
    if not final:
        return DpResult(math.inf, None, len(visited))

    # Deterministic winner: cost, then smaller stage size, lower bucket, tau.
    def final_key(state: State):
        tau, move = state
        cost = final[state][0]
        return (cost, move[1], move[0], tau)

    best_state = min(final, key=final_key)
    best_cost = final[best_state][0]

    devices_rev: list[tuple[int, ...]] = []
    state: State | None = best_state
    for j in range(stages_total, 0, -1):
        cost, parent, devs = trail[j][state]
        devices_rev.append(devs)
        state = parent
    stages = [StageAssignment(devs, part[j]) for j, devs in enumerate(reversed(devices_rev))]
    return DpResult(best_cost, stages, len(visited))


def visited_state_count(group: TypeVector, partition: Sequence[int], model: ModelSpec,
                        task: TaskSpec, cluster: ClusterSpec,
                        tp_candidates: Sequence[int] = DEFAULT_TP_CANDIDATES) -> int:
    """Number of distinct (j, tau) states the solver expanded."""
    return solve_pipeline(group, partition, model, task, cluster, tp_candidates).visited_states
