from __future__ import annotations

import numpy as np

from clref.errors import ContractError


class AccuracyMatrix:
    """``A[t, i]``: test accuracy on task ``i`` after training through task ``t``.

    Entries with ``i > t`` are undefined and stored as NaN.
    """

    def __init__(self, n_tasks: int):
        self.values = np.full((n_tasks, n_tasks), np.nan)

    @classmethod
    def from_rows(cls, rows) -> "AccuracyMatrix":
        m = cls(len(rows))
        for t, row in enumerate(rows):
            for i, v in enumerate(row):
                if i <= t and v is not None:
                    m.set(t, i, v)
        return m

    @property
    def n_tasks(self) -> int:
        return self.values.shape[0]

    def set(self, stage: int, task: int, acc: float):
        if task > stage:
            raise ContractError("cannot record accuracy on a task not yet trained")
        if not 0.0 <= acc <= 1.0:
            raise ContractError(f"accuracy {acc} outside [0, 1]")
        self.values[stage, task] = acc

    def row_complete(self, stage: int) -> bool:
        return bool(np.all(np.isfinite(self.values[stage, : stage + 1])))

    def to_rows(self) -> list[list[float]]:
        return [[float(v) for v in self.values[t, : t + 1]] for t in range(self.n_tasks)]


def compute_metrics(matrix) -> tuple[float, float | None]:
    """ACC (mean final-row accuracy) and BWT (mean final minus just-trained accuracy).

    BWT is ``None`` for a single task.
    """
    if not isinstance(matrix, AccuracyMatrix):
        matrix = AccuracyMatrix.from_rows(matrix)
    n = matrix.n_tasks
    if n < 1 or not all(matrix.row_complete(t) for t in range(n)):
        raise ContractError("accuracy matrix is incomplete")
    a = matrix.values
    acc = float(np.mean(a[n - 1, :n]))
    if n == 1:
        return acc, None
    bwt = float(np.mean([a[n - 1, i] - a[i, i] for i in range(n - 1)]))
    return acc, bwt
