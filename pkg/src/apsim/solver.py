"""Exact solver for the one-AP-per-STA benefit-maximization problem.

The objective is separable across STAs (no constraint couples two STAs), so
the global optimum is the per-row argmax over feasible cells. A brute-force
enumerator over all (M+1)^N assignments is kept as an independent oracle for
small instances.

Ties on benefit break toward higher tie-break preference (when provided),
then toward the lowest AP index, so runs are reproducible.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "UNASSOCIATED",
    "AssignmentInstance",
    "AssignmentSolution",
    "solve_exact",
    "solve_bruteforce",
]

# Row value for a STA left without an AP (no feasible cell).
UNASSOCIATED: int = -1

# Enumeration guard for the oracle: (M+1)^N must stay below this.
_BRUTEFORCE_LIMIT = 10_000_000


@dataclass(frozen=True)
class AssignmentInstance:
    """Benefit and feasibility matrices for N STAs by M APs.

    ``tie_break`` is an optional per-cell preference used only to order
    equal-benefit cells (higher wins); it never changes the objective.
    """

    benefit: np.ndarray  # (N, M) floats
    feasible: np.ndarray  # (N, M) bools
    tie_break: Optional[np.ndarray] = None  # (N, M) floats or None

    def validate(self) -> None:
        if self.benefit.ndim != 2:
            raise ValueError("benefit matrix must be two-dimensional")
        if self.feasible.shape != self.benefit.shape:
            raise ValueError("feasible mask shape must match benefit matrix")
        if self.tie_break is not None and self.tie_break.shape != self.benefit.shape:
            raise ValueError("tie_break shape must match benefit matrix")
        if np.any(np.isnan(self.benefit[self.feasible])):
            raise ValueError("feasible cells must have finite benefits")


@dataclass
class AssignmentSolution:
    """Chosen AP per STA (UNASSOCIATED allowed) and the objective value."""

    assignment: np.ndarray  # (N,) ints
    objective: float
    feasible_rows: int = 0
    unassociated_rows: int = 0

    def links(self) -> list[tuple[int, int]]:
        return [
            (i, int(j)) for i, j in enumerate(self.assignment) if j != UNASSOCIATED
        ]


def _row_pick(
    benefit_row: np.ndarray,
    feasible_row: np.ndarray,
    tie_row: Optional[np.ndarray],
) -> int:
    """Argmax over feasible cells with (benefit, tie_break, -index) order."""
    best = UNASSOCIATED
    best_benefit = -np.inf
    best_tie = -np.inf
    for j in range(benefit_row.shape[0]):
        if not feasible_row[j]:
            continue
        b = float(benefit_row[j])
        t = float(tie_row[j]) if tie_row is not None else 0.0
        if b > best_benefit or (b == best_benefit and t > best_tie):
            best = j
            best_benefit = b
            best_tie = t
    return best


def solve_exact(instance: AssignmentInstance) -> AssignmentSolution:
    """Per-row argmax; exact because the objective decomposes by STA."""
    instance.validate()
    n, _ = instance.benefit.shape
    assignment = np.full(n, UNASSOCIATED, dtype=np.int64)
    objective = 0.0
    unassociated = 0
    for i in range(n):
        tie_row = None if instance.tie_break is None else instance.tie_break[i]
        j = _row_pick(instance.benefit[i], instance.feasible[i], tie_row)
        assignment[i] = j
        if j == UNASSOCIATED:
            unassociated += 1
        else:
            objective += float(instance.benefit[i, j])
    return AssignmentSolution(
        assignment=assignment,
        objective=objective,
        feasible_rows=n - unassociated,
        unassociated_rows=unassociated,
    )


def solve_bruteforce(instance: AssignmentInstance) -> AssignmentSolution:
    """Enumerate every valid assignment and keep the best.

    A STA with at least one feasible AP must take one (the one-AP constraint
    is an equality); only a STA with an empty feasible row stays out. The
    guard refuses instances whose full enumeration space (M+1)^N exceeds the
    limit. Ties use the same deterministic ordering as solve_exact so the
    two can be compared assignment-for-assignment, not just on objective.
    """
    instance.validate()
    n, m = instance.benefit.shape
    if (m + 1) ** n > _BRUTEFORCE_LIMIT:
        raise ValueError(
            f"brute force would enumerate {(m + 1) ** n} assignments; limit is "
            f"{_BRUTEFORCE_LIMIT}"
        )
    row_choices: list[list[int]] = []
    for i in range(n):
        feas = [j for j in range(m) if instance.feasible[i, j]]
        row_choices.append(feas if feas else [UNASSOCIATED])
    best_assignment: Optional[tuple[int, ...]] = None
    best_key: Optional[tuple] = None
    for combo in itertools.product(*row_choices):
        objective = 0.0
        ties = 0.0
        index_pref = 0
        for i, j in enumerate(combo):
            if j == UNASSOCIATED:
                continue
            objective += float(instance.benefit[i, j])
            if instance.tie_break is not None:
                ties += float(instance.tie_break[i, j])
            index_pref -= j
        key = (objective, ties, index_pref)
        if best_key is None or key > best_key:
            best_key = key
            best_assignment = combo
    assert best_assignment is not None and best_key is not None
    assignment = np.array(best_assignment, dtype=np.int64)
    unassociated = int(np.sum(assignment == UNASSOCIATED))
    return AssignmentSolution(
        assignment=assignment,
        objective=float(best_key[0]),
        feasible_rows=n - unassociated,
        unassociated_rows=unassociated,
    )
