"""Placement planning and SLO simulation for LLM generative inference on
heterogeneous GPU pools.

The pieces compose bottom-up: :mod:`~heteroplan.cluster` models devices,
interconnects, and (machine, GPU-type) buckets; :mod:`~heteroplan.costs`
provides the closed-form stage/pipeline latency and memory formulas;
:mod:`~heteroplan.dp` finds the optimal stage layout for one pipeline group;
:mod:`~heteroplan.kmeans` seeds group structure from the link matrices;
:mod:`~heteroplan.genetic` searches global assignments; and
:mod:`~heteroplan.simulate` scores assignments by simulated SLO attainment.
"""

__version__ = "0.1.0"

from .cluster import (
    Bucket,
    ClusterSpec,
    Device,
    GpuType,
    InputError,
    ModelSpec,
    TaskSpec,
    TypeVector,
    build_cluster,
    load_cluster,
    load_model,
    load_task,
    remove_devices,
)
from .costs import (
    GlobalAssignment,
    InfeasibleError,
    InternalError,
    MemoryVerdict,
    StageAssignment,
    StageCostBreakdown,
    check_memory,
    comp_cost,
    mem_footprint,
    pipeline_cost,
    plan_notation,
    pp_comm_cost,
    prefill_decode_estimate,
    tp_comm_cost,
)
from .dp import DEFAULT_TP_CANDIDATES, DpResult, solve_pipeline, visited_state_count
from .genetic import (
    Genome,
    InfeasiblePoolError,
    SearchConfig,
    SearchResult,
    evolve,
    init_population,
    mutate_merge,
    mutate_split,
    mutate_swap,
    random_mutation_baseline,
    refine_partition,
    replan,
)
from .simulate import (
    Request,
    SloConfig,
    SloReport,
    WorkloadSpec,
    generate_workload,
    load_slo,
    load_workload,
    simulate,
    sweep_rate,
    sweep_slo_scale,
)

__all__ = [name for name in dir() if not name.startswith("_")]
