"""Genetic search over partitions of the GPU pool into serving pipelines.

A genome is a list of disjoint pipeline groups (bucket-count vectors over
the cluster's (machine, GPU-type) buckets) with one layer partition per
group.  Each generation applies tournament selection and one structured
mutation per offspring — merge two groups, split a group evenly, or move a
single GPU between groups — then discards offspring whose groups cannot even
hold one replica's parameters before running any expensive evaluation.
Surviving genomes are evaluated by solving the per-group stage-layout DP,
refining each group's layer partition proportional to per-stage memory, and
simulating SLO attainment of the resulting deployment on one fixed request
trace.  Fitness comparisons are therefore paired across genomes.

Randomness discipline: every offspring draws from its own
``default_rng([seed, generation, slot])`` stream and evaluation is pure, so
results are bit-identical for any worker-thread count.
"""

from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .cluster import ClusterSpec, ModelSpec, TaskSpec, TypeVector, check_type_vector
from .costs import GlobalAssignment, assert_valid_assignment
from .dp import DEFAULT_TP_CANDIDATES, DpResult, solve_pipeline
from .kmeans import cluster_groups
from .simulate import Request, SloConfig, WorkloadSpec, generate_workload, simulate

log = logging.getLogger(__name__)


class InfeasiblePoolError(RuntimeError):
    """The device pool cannot host a single model replica; CLI exit 3."""


@dataclass(frozen=True)
class SearchConfig:
    population_size: int = 32
    generations: int = 100
    mutation_rates: tuple[float, float, float] = (0.2, 0.2, 0.5)  # merge, split, swap
    elitism: int = 2
    tournament_size: int = 3
    plateau_patience: int = 15
    seed: int = 0
    tp_candidates: tuple[int, ...] = DEFAULT_TP_CANDIDATES

    def __post_init__(self):
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if not 0 <= self.elitism <= self.population_size:
            raise ValueError("elitism must be between 0 and population_size")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be >= 1")
        rates = self.mutation_rates
        if len(rates) != 3 or any(not 0.0 <= r <= 1.0 for r in rates) \
                or sum(rates) > 1.0 + 1e-12:
            raise ValueError("mutation_rates must be three probabilities summing to <= 1")


@dataclass(frozen=True)
class Genome:
    """Disjoint pipeline groups plus a layer partition per group.

    Stored canonical (groups sorted with their partitions) so structurally
    equal genomes compare and hash equal — the fitness-cache key.
    """

    groups: tuple[TypeVector, ...]
    partitions: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.groups) != len(self.partitions):
            raise ValueError("need exactly one layer partition per group")


def make_genome(groups, partitions) -> Genome:
    paired = sorted(zip((tuple(g) for g in groups), (tuple(p) for p in partitions)))
    return Genome(tuple(g for g, _ in paired), tuple(p for _, p in paired))


def even_partition(num_layers: int, num_stages: int) -> tuple[int, ...]:
    """Near-even split of the layers; clamps the stage count so no stage is
    ever empty (a group spanning more buckets than the model has layers gets
    fewer stages)."""

    if num_stages <= 0 or num_layers <= 0:
        return ()
    s = min(num_stages, num_layers)
    base, extra = divmod(num_layers, s)
    return tuple(base + 1 if j < extra else base for j in range(s))


def proportional_partition(num_layers: int, weights: Sequence[float]) -> tuple[int, ...]:
    """Largest-remainder apportionment of layers to stages, floor of one layer
    per stage; ties go to the earlier stage."""

    s = len(weights)
    if s == 0:
        return ()
    if num_layers < s:
        raise ValueError(f"{num_layers} layers cannot cover {s} stages")
    total = float(sum(weights))
    if total <= 0:
        return even_partition(num_layers, s)
    quotas = [num_layers * float(w) / total for w in weights]
    out = [math.floor(q) for q in quotas]
    remainders = [q - f for q, f in zip(quotas, out)]
    deficit = num_layers - sum(out)
    for j in sorted(range(s), key=lambda j: (-remainders[j], j))[:deficit]:
        out[j] += 1
    for j in range(s):
        while out[j] < 1:
            donor = max(range(s), key=lambda i: (out[i], -i))
            out[donor] -= 1
            out[j] += 1
    return tuple(out)


def stage_count(group: TypeVector) -> int:
    """Fresh groups start with one stage per nonzero bucket."""
    return sum(1 for c in group if c > 0)


def group_memory(group: TypeVector, cluster: ClusterSpec) -> float:
    """Total device memory of a group (devices within a bucket share a type)."""
    total = 0.0
    for bucket, count in zip(cluster.buckets, group):
        if count:
            total += count * cluster.device(bucket.device_ids[0]).gpu_type.mem_limit
    return total


def passes_memory_prune(genome: Genome, model: ModelSpec, cluster: ClusterSpec) -> bool:
    """Early reject: every group must hold at least the model parameters
    (12*H^2*B*L bytes in aggregate) or it cannot serve a replica at all."""

    need = model.param_bytes()
    return all(group_memory(g, cluster) >= need for g in genome.groups)


def _fresh_partitions(groups: Sequence[TypeVector], num_layers: int) -> list[tuple[int, ...]]:
    return [even_partition(num_layers, stage_count(g)) for g in groups]


# ---------------------------------------------------------------------------
# mutations


def mutate_merge(g: Genome, i1: int, i2: int) -> Genome:
    """Combine groups i1 and i2 componentwise; the merged group restarts from
    an even layer split over its nonzero buckets."""

    if len(g.groups) < 2:
        raise ValueError("merge needs at least two groups")
    if i1 == i2 or not (0 <= i1 < len(g.groups)) or not (0 <= i2 < len(g.groups)):
        raise ValueError(f"bad merge indices ({i1}, {i2})")
    merged = tuple(a + b for a, b in zip(g.groups[i1], g.groups[i2]))
    keep = [j for j in range(len(g.groups)) if j not in (i1, i2)]
    groups = [g.groups[j] for j in keep] + [merged]
    parts = [g.partitions[j] for j in keep] + [None]
    num_layers = sum(g.partitions[i1]) if g.partitions[i1] else sum(g.partitions[i2])
    parts[-1] = even_partition(num_layers, stage_count(merged))
    return make_genome(groups, parts)


def mutate_split(g: Genome, i: int) -> Genome:
    """Halve group i per bucket (floor/ceil).  The caller prunes offspring
    whose halves cannot hold the model parameters."""

    if not 0 <= i < len(g.groups):
        raise ValueError(f"bad split index {i}")
    tau = g.groups[i]
    if sum(tau) < 2:
        raise ValueError("cannot split a singleton group")
    half1 = tuple(c // 2 for c in tau)
    half2 = tuple(c - c // 2 for c in tau)
    num_layers = sum(g.partitions[i])
    keep = [j for j in range(len(g.groups)) if j != i]
    groups = [g.groups[j] for j in keep] + [half1, half2]
    parts = [g.partitions[j] for j in keep] + [
        even_partition(num_layers, stage_count(half1)),
        even_partition(num_layers, stage_count(half2)),
    ]
    return make_genome(groups, parts)


def mutate_swap(g: Genome, i1: int, i2: int, k_hat: int) -> Genome:
    """Move one bucket-k_hat device from group i2 to group i1.  A group whose
    nonzero-bucket count changes restarts from an even layer split; otherwise
    its partition is kept."""

    if i1 == i2 or not (0 <= i1 < len(g.groups)) or not (0 <= i2 < len(g.groups)):
        raise ValueError(f"bad swap indices ({i1}, {i2})")
    if not 0 <= k_hat < len(g.groups[i2]):
        raise ValueError(f"bad bucket index {k_hat}")
    if g.groups[i2][k_hat] < 1:
        raise ValueError(f"group {i2} has no bucket-{k_hat} device to give")
    new1 = tuple(c + (k == k_hat) for k, c in enumerate(g.groups[i1]))
    new2 = tuple(c - (k == k_hat) for k, c in enumerate(g.groups[i2]))
    groups = list(g.groups)
    parts = list(g.partitions)
    num_layers = sum(g.partitions[i1])
    groups[i1], groups[i2] = new1, new2
    if stage_count(new1) != stage_count(g.groups[i1]):
        parts[i1] = even_partition(num_layers, stage_count(new1))
    if stage_count(new2) != stage_count(g.groups[i2]):
        parts[i2] = even_partition(num_layers, stage_count(new2))
    return make_genome(groups, parts)


# ---------------------------------------------------------------------------
# evaluation


def allocate_devices(genome: Genome, cluster: ClusterSpec) -> list[list[tuple[int, ...]]]:
    """Concrete per-bucket device ids for each group, carved in genome order
    from each bucket's id list.  Groups are disjoint by construction."""

    cursors = [0] * len(cluster.buckets)
    pools_per_group = []
    for group in genome.groups:
        check_type_vector(cluster, group)
        pools = []
        for k, count in enumerate(group):
            ids = cluster.buckets[k].device_ids[cursors[k]:cursors[k] + count]
            if len(ids) != count:
                raise ValueError(f"genome overcommits bucket {k}")
            cursors[k] += count
            pools.append(tuple(ids))
        pools_per_group.append(pools)
    return pools_per_group


def refine_partition(group: TypeVector, current: Sequence[int], dp_solution: DpResult,
                     model: ModelSpec, task: TaskSpec, cluster: ClusterSpec,
                     tp_candidates: Sequence[int] = DEFAULT_TP_CANDIDATES,
                     device_pools=None, max_rounds: int = 5,
                     ) -> tuple[tuple[int, ...], DpResult]:
    """Alternate {layers proportional to per-stage memory} with DP re-solves
    until a fixed point or the round cap; returns the best-cost pair seen."""

    current = tuple(int(l) for l in current)
    best = (current, dp_solution)
    if not dp_solution.feasible:
        return best
    cur, res = current, dp_solution
    for _ in range(max_rounds):
        weights = [
            sum(cluster.device(d).gpu_type.mem_limit for d in stage.devices)
            for stage in res.stages
        ]
        new_part = proportional_partition(model.num_layers, weights)
        if new_part == cur:
            break
        new_res = solve_pipeline(group, new_part, model, task, cluster,
                                 tp_candidates, device_pools)
        if not new_res.feasible:
            break
        if new_res.cost < best[1].cost:
            best = (new_part, new_res)
        cur, res = new_part, new_res
    return best


@dataclass(frozen=True)
class EvalOutcome:
    fitness: float              # SLO attainment; -1.0 marks an infeasible genome
    mean_latency: float
    genome: Genome              # with refined layer partitions
    assignment: GlobalAssignment | None

    def key(self) -> tuple[float, float]:
        return (self.fitness, -self.mean_latency)


class _EvalContext:
    """Everything an offspring evaluation needs, all of it read-only."""

    def __init__(self, cluster, model, task, requests, slo, tp_candidates):
        self.cluster = cluster
        self.model = model
        self.task = task
        self.requests: list[Request] = requests
        self.slo = slo
        self.tp_candidates = tuple(tp_candidates)
        self._solve_cache: dict = {}
        self._lock = threading.Lock()

    def solve(self, group, partition, pools) -> DpResult:
        key = (group, tuple(partition), tuple(pools))
        hit = self._solve_cache.get(key)
        if hit is not None:
            return hit
        res = solve_pipeline(group, partition, self.model, self.task, self.cluster,
                             self.tp_candidates, pools)
        with self._lock:
            self._solve_cache[key] = res
        return res


def _memory_weighted_partition(group: TypeVector, partition: tuple[int, ...],
                               ctx: _EvalContext) -> tuple[int, ...] | None:
    """Layer split proportional to per-bucket total memory, or None.

    An even split after a merge can overload the small-memory stages (the
    activation term scales with the layer count).  Before declaring the group
    infeasible, retry with layers allotted by how much memory each bucket
    brings; the DP is free to permute buckets across stages either way.
    """

    weights = []
    for bucket, count in zip(ctx.cluster.buckets, group):
        if count:
            weights.append(count * ctx.cluster.device(bucket.device_ids[0]).gpu_type.mem_limit)
    total_layers = sum(partition)
    if len(weights) != len(partition) or total_layers < len(weights):
        return None
    candidate = proportional_partition(total_layers, weights)
    return candidate if candidate != partition else None


def evaluate_genome(genome: Genome, ctx: _EvalContext) -> EvalOutcome:
    """DP + partition refinement per group, then one simulation pass."""

    pools_per_group = allocate_devices(genome, ctx.cluster)
    pipelines = []
    refined_parts = []
    for group, partition, pools in zip(genome.groups, genome.partitions, pools_per_group):
        res = ctx.solve(group, partition, pools)
        if not res.feasible:
            fallback = _memory_weighted_partition(group, partition, ctx)
            if fallback is not None:
                retry = ctx.solve(group, fallback, pools)
                if retry.feasible:
                    partition, res = fallback, retry
        if res.feasible:
            partition, res = refine_partition(
                group, partition, res, ctx.model, ctx.task, ctx.cluster,
                ctx.tp_candidates, pools)
        refined_parts.append(partition)
        if not res.feasible:
            return EvalOutcome(-1.0, math.inf, genome, None)
        pipelines.append(tuple(res.stages))
    refined = make_genome(genome.groups, refined_parts)
    assignment = GlobalAssignment(tuple(pipelines), provenance=refined)
    report = simulate(assignment, ctx.requests, ctx.slo, ctx.model, ctx.cluster)
    return EvalOutcome(report.attainment, report.mean_latency, refined, assignment)


# ---------------------------------------------------------------------------
# population management


def _kmeans_genome(cluster: ClusterSpec, model: ModelSpec, seed: int) -> Genome:
    """K-means/elbow groups, merged (smallest two first) until every group can
    hold the parameters."""

    groups = cluster_groups(cluster, seed)
    need = model.param_bytes()
    groups.sort()
    while len(groups) > 1 and any(group_memory(g, cluster) < need for g in groups):
        groups.sort(key=lambda g: (group_memory(g, cluster), g))
        merged = tuple(a + b for a, b in zip(groups[0], groups[1]))
        groups = sorted(groups[2:] + [merged])
    if groups and group_memory(groups[0], cluster) < need:
        raise InfeasiblePoolError(
            f"pool holds {cluster.total_memory():.3e} B total but one replica "
            f"needs {need:.3e} B of parameters")
    return make_genome(groups, _fresh_partitions(groups, model.num_layers))


def init_population(cluster: ClusterSpec, model: ModelSpec,
                    config: SearchConfig) -> list[Genome]:
    """K-means/elbow seed genome plus mutation-jittered variants."""

    if cluster.total_memory() < model.param_bytes():
        raise InfeasiblePoolError(
            f"pool memory {cluster.total_memory():.3e} B < parameter bytes "
            f"{model.param_bytes():.3e} B; no replica fits")
    base = _kmeans_genome(cluster, model, config.seed)
    population = [base]
    for slot in range(1, config.population_size):
        rng = np.random.default_rng([config.seed, 0, slot])
        population.append(_structured_offspring(base, rng, config, model, cluster))
    return population


def _structured_offspring(parent: Genome, rng: np.random.Generator,
                          config: SearchConfig, model: ModelSpec,
                          cluster: ClusterSpec) -> Genome:
    """One merge/split/swap draw; anything invalid or prune-failing falls back
    to a copy of the parent."""

    r_merge, r_split, r_swap = config.mutation_rates
    u = rng.random()
    child = parent
    m = len(parent.groups)
    if u < r_merge:
        if m >= 2:
            i1 = int(rng.integers(m))
            i2 = int(rng.integers(m - 1))
            i2 += i2 >= i1
            child = mutate_merge(parent, i1, i2)
    elif u < r_merge + r_split:
        splittable = [i for i, g in enumerate(parent.groups) if sum(g) >= 2]
        if splittable:
            child = mutate_split(parent, splittable[int(rng.integers(len(splittable)))])
    elif u < r_merge + r_split + r_swap:
        if m >= 2:
            i1 = int(rng.integers(m))
            i2 = int(rng.integers(m - 1))
            i2 += i2 >= i1
            donors = [k for k, c in enumerate(parent.groups[i2]) if c >= 1]
            if donors:
                child = mutate_swap(parent, i1, i2,
                                    donors[int(rng.integers(len(donors)))])
    if child is not parent and not passes_memory_prune(child, model, cluster):
        child = parent
    return child


def _random_offspring(parent: Genome, rng: np.random.Generator,
                      config: SearchConfig, model: ModelSpec,
                      cluster: ClusterSpec) -> Genome:
    """Ablation baseline: with the same total mutation probability, reassign
    the whole pool uniformly to a uniform number of groups."""

    rates = config.mutation_rates
    u = rng.random()
    if u >= sum(rates):
        return parent
    n = cluster.n_devices
    m_new = int(rng.integers(1, n + 1))
    counts = [[0] * len(cluster.buckets) for _ in range(m_new)]
    for k, cap in enumerate(cluster.capacities):
        for _ in range(cap):
            counts[int(rng.integers(m_new))][k] += 1
    groups = [tuple(c) for c in counts if sum(c) > 0]
    child = make_genome(groups, _fresh_partitions(groups, model.num_layers))
    if not passes_memory_prune(child, model, cluster):
        return parent
    return child


@dataclass(frozen=True)
class HistoryRow:
    generation: int
    best_fitness: float
    mean_fitness: float


@dataclass
class SearchResult:
    best: GlobalAssignment
    best_genome: Genome
    best_fitness: float
    best_mean_latency: float
    history: tuple[HistoryRow, ...]
    generations_run: int
    evaluations: int


def _run_search(cluster: ClusterSpec, model: ModelSpec, workload: WorkloadSpec,
                slo: SloConfig, config: SearchConfig,
                offspring_fn: Callable[..., Genome],
                seed_genomes: Sequence[Genome] | None = None,
                generations: int | None = None,
                threads: int = 1) -> SearchResult:
    requests = generate_workload(workload)
    ctx = _EvalContext(cluster, model, workload.dominant_task(), requests, slo,
                       config.tp_candidates)
    cache: dict[Genome, EvalOutcome] = {}
    eval_count = 0

    def evaluate_all(genomes: Sequence[Genome]) -> list[EvalOutcome]:
        nonlocal eval_count
        missing = sorted({g for g in genomes if g not in cache},
                         key=lambda g: genomes.index(g))
        if missing:
            eval_count += len(missing)
            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    outcomes = list(pool.map(lambda g: evaluate_genome(g, ctx), missing))
            else:
                outcomes = [evaluate_genome(g, ctx) for g in missing]
            for g, out in zip(missing, outcomes):
                cache[g] = out
        return [cache[g] for g in genomes]

    if seed_genomes is None:
        population = init_population(cluster, model, config)
    else:
        population = list(seed_genomes)
    outcomes = evaluate_all(population)
    # refined layer partitions are written back so offspring inherit them
    population = [out.genome for out in outcomes]

    def better(a: EvalOutcome, b: EvalOutcome | None) -> bool:
        return b is None or a.key() > b.key()

    best_out: EvalOutcome | None = None
    for out in outcomes:
        if better(out, best_out):
            best_out = out
    history = [HistoryRow(0, best_out.fitness,
                          float(np.mean([o.fitness for o in outcomes])))]

    budget = config.generations if generations is None else generations
    stale = 0
    gens_run = 0
    for gen in range(1, budget + 1):
        order = sorted(range(len(population)),
                       key=lambda i: outcomes[i].key(), reverse=True)
        elites = [population[i] for i in order[:config.elitism]]
        children = list(elites)
        for slot in range(config.population_size - len(elites)):
            rng = np.random.default_rng([config.seed, gen, slot])
            draw = rng.integers(len(population), size=config.tournament_size)
            winner = min(draw.tolist(), key=lambda i: order.index(i))
            children.append(offspring_fn(population[winner], rng, config, model, cluster))
        population = children
        outcomes = evaluate_all(population)
        population = [out.genome for out in outcomes]
        improved = False
        for out in outcomes:
            if better(out, best_out):
                best_out = out
                improved = True
        history.append(HistoryRow(gen, best_out.fitness,
                                  float(np.mean([o.fitness for o in outcomes]))))
        gens_run = gen
        stale = 0 if improved else stale + 1
        if stale >= config.plateau_patience:
            log.info("plateau after %d generations without improvement", stale)
            break

    if best_out.assignment is None:
        raise InfeasiblePoolError(
            "no memory-feasible stage layout exists for any genome searched")
    assert_valid_assignment(best_out.assignment, model, ctx.task, cluster)
    return SearchResult(best_out.assignment, best_out.genome, best_out.fitness,
                        best_out.mean_latency, tuple(history), gens_run, eval_count)


def evolve(cluster: ClusterSpec, model: ModelSpec, workload: WorkloadSpec,
           slo: SloConfig, config: SearchConfig, threads: int = 1) -> SearchResult:
    """Structured-mutation search; returns the best assignment found and the
    per-generation fitness history (monotone best-so-far under elitism)."""

    return _run_search(cluster, model, workload, slo, config,
                       _structured_offspring, threads=threads)


def random_mutation_baseline(cluster: ClusterSpec, model: ModelSpec,
                             workload: WorkloadSpec, slo: SloConfig,
                             config: SearchConfig, threads: int = 1) -> SearchResult:
    """Identical loop with unstructured mutations, for convergence ablations."""

    return _run_search(cluster, model, workload, slo, config,
                       _random_offspring, threads=threads)


def project_assignment(previous: GlobalAssignment, departed: set[int],
                       old_n_devices: int, new_cluster: ClusterSpec,
                       model: ModelSpec) -> Genome | None:
    """Map a previous plan onto the surviving devices: departed counts drop
    out, untouched pipelines keep their layer partitions, emptied or
    under-memory groups are removed.  None when nothing survives."""

    survivors = [d for d in range(old_n_devices) if d not in departed]
    id_map = {old: new for new, old in enumerate(survivors)}
    groups, parts = [], []
    for pipe in previous.pipelines:
        counts = [0] * len(new_cluster.buckets)
        touched = False
        layer_part = []
        for stage in pipe:
            kept = [id_map[d] for d in stage.devices if d not in departed]
            touched = touched or len(kept) != len(stage.devices)
            for d in kept:
                counts[new_cluster.bucket_of(d)] += 1
            layer_part.append(stage.num_layers)
        group = tuple(counts)
        if sum(group) == 0 or group_memory(group, new_cluster) < model.param_bytes():
            continue
        groups.append(group)
        parts.append(tuple(layer_part) if not touched
                     else even_partition(model.num_layers, stage_count(group)))
    if not groups:
        return None
    return make_genome(groups, parts)


def replan(previous: GlobalAssignment, departed: set[int], cluster: ClusterSpec,
           model: ModelSpec, workload: WorkloadSpec, slo: SloConfig,
           config: SearchConfig, generations: int | None = None,
           threads: int = 1) -> SearchResult:
    """Warm-started search on the reduced cluster (= original minus departed,
    ids reindexed).  The previous plan's projection seeds the population next
    to fresh K-means genomes; the default budget is half of a cold start."""

    if cluster.total_memory() < model.param_bytes():
        raise InfeasiblePoolError(
            "surviving pool cannot hold one replica's parameters")
    old_n = cluster.n_devices + len(departed)
    warm = project_assignment(previous, set(departed), old_n, cluster, model)
    seeds = [warm] if warm is not None else []
    seeds.append(_kmeans_genome(cluster, model, config.seed))
    population = list(dict.fromkeys(seeds))
    base = population[0]
    for slot in range(len(population), config.population_size):
        rng = np.random.default_rng([config.seed, 0, slot])
        population.append(_structured_offspring(base, rng, config, model, cluster))
    budget = generations if generations is not None else max(1, config.generations // 2)
    return _run_search(cluster, model, workload, slo, config, _structured_offspring,
                       seed_genomes=population[:config.population_size],
                       generations=budget, threads=threads)
