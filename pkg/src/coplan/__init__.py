"""Distribution-network / renewable-charging-station co-planning toolkit.

Library layout mirrors the planning stack: ``mathprog`` (gap-controlled
mathematical programs), ``instance_io`` (files and validation),
``network`` (siting/expansion master), ``transport`` (stochastic EV
layer), ``dispatch`` (robust minimum-loss operation), ``decomposition``
(the C&CG family), ``report``/``cli`` (tables, figures, command line).
"""

from .decomposition import RunResult, gap_bound, run_aiccg, run_ccg, run_iccg
from .instance_io import AlgoParams, InstanceSpec, capital_recovery_factor, load_instance
from .network import PlanDecision, investment_cost, validate_radial

__version__ = "0.1.0"

__all__ = [
    "AlgoParams", "InstanceSpec", "PlanDecision", "RunResult",
    "capital_recovery_factor", "gap_bound", "investment_cost", "load_instance",
    "run_aiccg", "run_ccg", "run_iccg", "validate_radial", "__version__",
]
