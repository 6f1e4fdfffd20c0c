"""Accuracy, confusion matrices and pairwise McNemar significance tests.

McNemar's test compares two classifiers on the same items using only their
disagreements: b items only the first got right, c items only the second.
Large disagreement counts (b + c >= 25) use the continuity-corrected
chi-squared statistic; smaller ones use the exact two-sided binomial test.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .errors import InputError

CHI2_THRESHOLD = 25
ALPHA = 0.05


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted."""
    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise InputError(f"confusion counts must be square, got {counts.shape}")
        if (counts < 0).any():
            raise InputError("confusion counts must be nonnegative")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        total = self.total
        if total == 0:
            raise InputError("empty confusion matrix has no accuracy")
        return float(np.trace(self.counts)) / total


def confusion(preds: Sequence[int], truths: Sequence[int],
              num_classes: int = 10) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if preds.shape != truths.shape or preds.ndim != 1:
        raise InputError(f"predictions {preds.shape} and truths {truths.shape} "
                         f"must be equal-length 1-D sequences")
    for name, arr in (("prediction", preds), ("truth", truths)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise InputError(f"{name} class id out of range [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (truths, preds), 1)
    return ConfusionMatrix(counts)


def confusion_csv(matrix: ConfusionMatrix, labels: Sequence[str]) -> str:
    """Header row of predicted labels; one row per true label."""
    if len(labels) != matrix.counts.shape[0]:
        raise InputError(f"{len(labels)} labels for a "
                         f"{matrix.counts.shape[0]}-class matrix")
    lines = ["true\\pred," + ",".join(labels)]
    for i, name in enumerate(labels):
        lines.append(name + "," + ",".join(str(int(v)) for v in matrix.counts[i]))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ContingencyTable:
    """Paired outcomes: n00 both wrong, n01 only A right, n10 only B right,
    n11 both right."""
    n00: int
    n01: int
    n10: int
    n11: int

    def __post_init__(self) -> None:
        for name in ("n00", "n01", "n10", "n11"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be nonnegative")

    @property
    def total(self) -> int:
        return self.n00 + self.n01 + self.n10 + self.n11

    @classmethod
    def from_correctness(cls, a_correct, b_correct) -> "ContingencyTable":
        a = np.asarray(a_correct, dtype=bool)
        b = np.asarray(b_correct, dtype=bool)
        if a.shape != b.shape or a.ndim != 1:
            raise InputError(f"correctness vectors must be equal-length 1-D, "
                             f"got {a.shape} and {b.shape}")
        return cls(
            n00=int(np.sum(~a & ~b)),
            n01=int(np.sum(a & ~b)),
            n10=int(np.sum(~a & b)),
            n11=int(np.sum(a & b)),
        )


class McNemarMethod(enum.Enum):
    CHI2_CORRECTED = "chi2_corrected"
    EXACT_BINOMIAL = "exact_binomial"


@dataclass(frozen=True)
class McNemarResult:
    statistic: float
    p_value: float
    method: McNemarMethod
    significant_at_0_05: bool
    degenerate: bool = False


def chi2_sf_1df(statistic: float) -> float:
    """Survival function of chi-squared with one degree of freedom."""
    if statistic < 0:
        raise InputError(f"chi-squared statistic must be nonnegative, got {statistic}")
    return math.erfc(math.sqrt(statistic / 2.0))


def exact_binomial_p(b: int, c: int) -> float:
    """Two-sided sign-test p-value: 2 * P[Binomial(b+c, 1/2) <= min(b,c)]."""
    n = b + c
    k = min(b, c)
    tail = sum(math.comb(n, i) for i in range(k + 1))
    p = 2.0 * tail / (2.0 ** n)
    return min(p, 1.0)


def mcnemar_from_counts(b: int, c: int) -> McNemarResult:
    """Test from the two disagreement counts alone."""
    if b < 0 or c < 0:
        raise InputError("disagreement counts must be nonnegative")
    n = b + c
    if n == 0:
        return McNemarResult(0.0, 1.0, McNemarMethod.EXACT_BINOMIAL,
                             significant_at_0_05=False, degenerate=True)
    if n >= CHI2_THRESHOLD:
        statistic = (abs(b - c) - 1.0) ** 2 / n
        p = chi2_sf_1df(statistic)
        method = McNemarMethod.CHI2_CORRECTED
    else:
        statistic = float(min(b, c))
        p = exact_binomial_p(b, c)
        method = McNemarMethod.EXACT_BINOMIAL
    return McNemarResult(statistic, p, method, significant_at_0_05=p < ALPHA)


def mcnemar(a_correct, b_correct) -> McNemarResult:
    table = ContingencyTable.from_correctness(a_correct, b_correct)
    return mcnemar_from_counts(table.n01, table.n10)


@dataclass(frozen=True)
class GridCell:
    system_a: str
    system_b: str
    b: int
    c: int
    result: McNemarResult


def significance_grid(names: Sequence[str],
                      correctness: Sequence[Sequence[int]]) -> List[GridCell]:
    """All unordered system pairs, each tested once."""
    if len(names) != len(correctness):
        raise InputError(f"{len(names)} names for {len(correctness)} vectors")
    if len(names) < 2:
        raise InputError("need at least two systems to compare")
    vectors = [np.asarray(v, dtype=bool) for v in correctness]
    length = vectors[0].shape[0]
    for name, v in zip(names, vectors):
        if v.ndim != 1 or v.shape[0] != length:
            raise InputError(f"correctness vector for {name!r} has length "
                             f"{v.shape[0]}, expected {length}")
    cells = []
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            table = ContingencyTable.from_correctness(vectors[i], vectors[j])
            cells.append(GridCell(names[i], names[j], table.n01, table.n10,
                                  mcnemar_from_counts(table.n01, table.n10)))
    return cells


def grid_csv(cells: Sequence[GridCell]) -> str:
    lines = ["system_a,system_b,b,c,statistic,p_value,method,significant"]
    for cell in cells:
        r = cell.result
        lines.append(",".join([
            cell.system_a, cell.system_b, str(cell.b), str(cell.c),
            f"{r.statistic:.6g}", f"{r.p_value:.6g}", r.method.value,
            "yes" if r.significant_at_0_05 else "no",
        ]))
    return "\n".join(lines) + "\n"


def grid_text(names: Sequence[str], cells: Sequence[GridCell]) -> str:
    """Symmetric p-value table; * marks p < 0.05, diagonal is blank."""
    values = {}
    for cell in cells:
        mark = "*" if cell.result.significant_at_0_05 else ""
        text = f"{cell.result.p_value:.4f}{mark}"
        values[(cell.system_a, cell.system_b)] = text
        values[(cell.system_b, cell.system_a)] = text
    width = max([len(n) for n in names] + [8])
    header = " " * width + "".join(n.rjust(width + 2) for n in names)
    rows = [header]
    for a in names:
        row = a.ljust(width)
        for b in names:
            row += ("-" if a == b else values[(a, b)]).rjust(width + 2)
        rows.append(row)
    return "\n".join(rows) + "\n"
