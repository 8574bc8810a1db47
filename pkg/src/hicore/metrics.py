"""Continual-learning evaluation: the performance matrix and the final-average,
forward-transfer and forgetting metrics over normalized returns.

Conventions (frozen here as the contract):
- average_performance A_N: mean over tasks of the final-checkpoint return.
- forward_transfer FW: per task, normalized AUC gain over the from-scratch
  reference during that task's own training phase,
  FW_i = (AUC_i - AUC_i_ref) / (1 - AUC_i_ref), averaged over tasks; a run
  scored against its own curves therefore gets FW = 0 exactly.
- forgetting FG: per task, end-of-own-phase return minus final return,
  averaged over tasks; negative values indicate backward transfer.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyMatrix,
    InsufficientPoints,
    MisalignedCurves,
    NonMonotonicStep,
)


@dataclass
class PerformanceMatrix:
    """Checkpointed per-task normalized returns over one run."""

    task_ids: list[str]
    budget: int
    steps: list[int] = field(default_factory=list)
    rows: list[np.ndarray] = field(default_factory=list)
    # (task_id, start_step, end_step), in training order.
    boundaries: list[tuple[str, int, int]] = field(default_factory=list)

    @property
    def n_tasks(self) -> int:
        return len(self.task_ids)

    def final_row(self) -> np.ndarray:
        if not self.rows:
            raise EmptyMatrix("no checkpoints recorded")
        return self.rows[-1]

    def phase_curve(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Checkpoints (steps, p_i) falling inside task i's training phase."""
        _, start, end = self.boundaries[i]
        pts = [(s, row[i]) for s, row in zip(self.steps, self.rows)
               if start < s <= end]
        if len(pts) < 2:
            raise InsufficientPoints(
                f"task {i} phase holds {len(pts)} checkpoints; need >= 2")
        xs = np.array([p[0] for p in pts], dtype=np.float64)
        ys = np.array([p[1] for p in pts], dtype=np.float64)
        return xs, ys

    def to_csv(self) -> str:
        header = "step," + ",".join(
            f"task_{i + 1}" for i in range(self.n_tasks))
        lines = [header]
        for s, row in zip(self.steps, self.rows):
            lines.append(f"{s}," + ",".join(f"{v:.6f}" for v in row))
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_csv(text: str, task_ids: list[str], budget: int,
                 boundaries=None) -> "PerformanceMatrix":
        lines = [ln for ln in text.strip().splitlines() if ln]
        matrix = PerformanceMatrix(task_ids, budget)
        if boundaries is not None:
            matrix.boundaries = list(boundaries)
        for ln in lines[1:]:
            parts = ln.split(",")
            record_checkpoint(matrix, int(parts[0]),
                              np.array([float(v) for v in parts[1:]]))
        return matrix


@dataclass
class ReferenceCurves:
    """Per-task from-scratch training curves on the same checkpoint grid."""

    matrix: PerformanceMatrix


def record_checkpoint(matrix: PerformanceMatrix, global_step: int,
                      per_task_perf) -> None:
    row = np.asarray(per_task_perf, dtype=np.float64)
    if row.shape != (matrix.n_tasks,):
        raise ValueError(
            f"checkpoint row has shape {row.shape}, expected ({matrix.n_tasks},)")
    if matrix.steps and global_step <= matrix.steps[-1]:
        raise NonMonotonicStep(
            f"step {global_step} not after {matrix.steps[-1]}")
    matrix.steps.append(int(global_step))
    matrix.rows.append(row)


def auc(steps: np.ndarray, values: np.ndarray) -> float:
    """Trapezoidal mean of a curve over its span, in [0, 1] for unit values."""
    if len(steps) < 2:
        raise InsufficientPoints("need at least two points")
    span = float(steps[-1] - steps[0])
    return float(np.trapezoid(values, steps) / span)


def average_performance(matrix: PerformanceMatrix) -> float:
    return float(np.mean(matrix.final_row()))


def _check_alignment(matrix: PerformanceMatrix, ref: PerformanceMatrix) -> None:
    if (matrix.steps != ref.steps or matrix.n_tasks != ref.n_tasks
            or matrix.boundaries != ref.boundaries):
        raise MisalignedCurves("reference grid differs from the evaluated run")


def forward_transfer(matrix: PerformanceMatrix, refs: ReferenceCurves) -> float:
    ref = refs.matrix
    _check_alignment(matrix, ref)
    fws = []
    for i in range(matrix.n_tasks):
        xs, ys = matrix.phase_curve(i)
        rxs, rys = ref.phase_curve(i)
        a = auc(xs, ys)
        r = auc(rxs, rys)
        if r >= 1.0 - 1e-9:
            fws.append(0.0)
        else:
            fws.append((a - r) / (1.0 - r))
    return float(np.mean(fws))


def forgetting(matrix: PerformanceMatrix) -> float:
    if not matrix.rows:
        raise EmptyMatrix("no checkpoints recorded")
    final = matrix.final_row()
    fgs = []
    for i in range(matrix.n_tasks):
        _, start, end = matrix.boundaries[i]
        in_phase = [row[i] for s, row in zip(matrix.steps, matrix.rows)
                    if start < s <= end]
        if not in_phase:
            raise InsufficientPoints(f"task {i} phase holds no checkpoint")
        fgs.append(in_phase[-1] - final[i])
    return float(np.mean(fgs))
