"""Randomized consistency testing: workloads, histories and a linearizability checker."""

from .elections import ElectionRun, election_stress
from .history import Event, History, HistoryError, Operation, describe, outcome
from .linearizability import (
    DEFAULT_BUDGET, Linearizable, SearchBudgetExceeded, Violation, brute_force,
    check, check_key,
)
from .model import INVALID, step
from .runner import (
    CHAOS_POINTS, CheckerParams, CheckResult, ClosedLoopClient, acknowledged,
    run_check, run_many,
)
from .workload import WorkloadParams, generate_workload, stream
