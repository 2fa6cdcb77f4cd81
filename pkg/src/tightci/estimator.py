"""Horvitz-Thompson estimation of the average treatment effect.

Inverse-probability-weighted pseudo-outcomes under all three designs,
including the grouped form that reweights each block by its conditional
propensity, the mirrored variant used by the Studentized interval, and an
exact conditional-expectation oracle for verifying unbiasedness.

Index conventions for the grouped estimator follow the draw's bookkeeping:
for slot ``s``, the observed outcome belongs to the unit at that slot
(``eta^{-1}(s)``) while the delivered treatment is the allocation pattern at
``beta(s)``.  Full blocks use weights ``g`` and ``1/(1 - 1/g)``; the tail
block replaces ``g`` with its own size-per-treated ratio.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from .design import (
    SCHEME_BERNOULLI,
    SCHEME_MBCR,
    Assignment,
    MbcrLayout,
    inverse_permutation,
)

VARIANT_STANDARD = "standard"
VARIANT_MIRRORED = "mirrored"

PROVENANCE_FIXED = "fixed"
PROVENANCE_SAMPLED = "sampled"


class EstimatorError(ValueError):
    """Inputs incompatible with the requested estimator."""


@dataclass(frozen=True)
class PotentialTable:
    """Per-unit potential outcomes, each confined to the unit interval."""

    y0: np.ndarray
    y1: np.ndarray
    provenance: str = PROVENANCE_FIXED

    def __post_init__(self) -> None:
        y0 = np.asarray(self.y0, dtype=np.float64)
        y1 = np.asarray(self.y1, dtype=np.float64)
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "y1", y1)
        if y0.ndim != 1 or y0.shape != y1.shape:
            raise EstimatorError("y0 and y1 must be equal-length vectors")
        for name, arr in (("y0", y0), ("y1", y1)):
            if not np.all(np.isfinite(arr)):
                raise EstimatorError(f"{name} contains non-finite values")
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise EstimatorError(f"{name} has entries outside [0, 1]")
        if self.provenance not in (PROVENANCE_FIXED, PROVENANCE_SAMPLED):
            raise EstimatorError(f"unknown provenance {self.provenance!r}")

    @property
    def n(self) -> int:
        return int(self.y0.shape[0])

    @property
    def psi_db(self) -> float:
        """Finite-population average treatment effect of this table."""
        return float(np.mean(self.y1 - self.y0))

    @classmethod
    def from_csv(cls, path, provenance: str = PROVENANCE_FIXED) -> "PotentialTable":
        """Load a table from a CSV file with header ``y0,y1``."""
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [
                f.strip() for f in reader.fieldnames
            ] != ["y0", "y1"]:
                raise EstimatorError(
                    f"{path}: expected CSV header 'y0,y1', got {reader.fieldnames}"
                )
            y0, y1 = [], []
            for i, row in enumerate(reader):
                try:
                    y0.append(float(row["y0"]))
                    y1.append(float(row["y1"]))
                except (TypeError, ValueError) as exc:
                    raise EstimatorError(f"{path}: bad row {i + 2}: {row}") from exc
        return cls(np.array(y0), np.array(y1), provenance=provenance)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["y0", "y1"])
            for a, b in zip(self.y0, self.y1):
                writer.writerow([repr(float(a)), repr(float(b))])


@dataclass(frozen=True)
class ObservedData:
    """Realized outcomes paired with the assignment that produced them."""

    y: np.ndarray
    assignment: Assignment

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=np.float64)
        object.__setattr__(self, "y", y)
        if y.shape != self.assignment.z.shape:
            raise EstimatorError("outcome vector length differs from assignment")

    @classmethod
    def realize(cls, table: PotentialTable, assignment: Assignment) -> "ObservedData":
        """Observe the potential outcome selected by each unit's arm."""
        if table.n != assignment.n:
            raise EstimatorError("table and assignment sizes differ")
        z = assignment.z
        y = np.where(z == 1, table.y1, table.y0)
        return cls(y=y, assignment=assignment)

    @property
    def n(self) -> int:
        return int(self.y.shape[0])


def pseudo_outcome(y, z, prop: float, variant: str = VARIANT_STANDARD):
    """Inverse-probability-weighted per-unit effect estimate.

    Standard form ``y * (z/p - (1-z)/(1-p))`` lies in
    ``[-1/(1-p), 1/p]``; the mirrored form replaces ``y`` with ``y - 1`` and
    reflects that range.  Accepts scalars or arrays.
    """
    if not (0.0 < prop < 1.0):
        raise EstimatorError(f"propensity {prop} outside (0, 1)")
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    base = y if variant == VARIANT_STANDARD else _mirrored_base(y, variant)
    out = base * (z / prop - (1.0 - z) / (1.0 - prop))
    return float(out) if out.ndim == 0 else out


def _mirrored_base(y: np.ndarray, variant: str) -> np.ndarray:
    if variant != VARIANT_MIRRORED:
        raise EstimatorError(f"unknown variant {variant!r}")
    return y - 1.0


def ht_standard(data: ObservedData, prop: float) -> float:
    """Plain Horvitz-Thompson estimate at a unit-wide propensity."""
    vals = pseudo_outcome(data.y, data.assignment.z, prop)
    return float(np.mean(vals))


def _slot_arrays(data: ObservedData):
    """Outcomes and delivered treatments in slot order, plus slot weights."""
    detail = data.assignment.mbcr
    if detail is None:
        raise EstimatorError(
            "grouped estimator needs the draw's permutation detail (beta, eta)"
        )
    lay = detail.layout
    inv_eta = inverse_permutation(detail.eta)
    y_slot = data.y[inv_eta]
    treated_slot = lay.allocation_vector()[detail.beta].astype(np.float64)
    g = float(lay.group_size)
    w_treat = np.full(lay.n, g)
    w_ctrl = np.full(lay.n, g / (g - 1.0))
    if lay.tail_size > 0:
        body = lay.num_full_groups * lay.group_size
        w_treat[body:] = lay.tail_size / lay.tail_treated
        w_ctrl[body:] = lay.tail_size / (lay.tail_size - lay.tail_treated)
    return lay, y_slot, treated_slot, w_treat, w_ctrl


def ht_mbcr(data: ObservedData) -> float:
    """Grouped Horvitz-Thompson estimate.

    Evaluates, slot by slot, the outcome of the unit at each slot against
    the treatment delivered there, weighting full blocks by the block size
    and the tail block by its own ratio.  With no tail this equals
    :func:`ht_standard` at ``prop = n1/n`` for every draw.
    """
    _, y_slot, t_slot, w_treat, w_ctrl = _slot_arrays(data)
    vals = y_slot * (t_slot * w_treat - (1.0 - t_slot) * w_ctrl)
    return float(np.mean(vals))


def groupwise_sums(data: ObservedData, variant: str = VARIANT_STANDARD) -> np.ndarray:
    """Per-group sums of pseudo-outcomes, tail group last.

    Under Bernoulli randomization every unit is its own group, so this is
    just the vector of per-unit pseudo-outcomes.  Each full-block standard
    sum lies in ``[-g, g]``.
    """
    scheme = data.assignment.scheme
    if scheme == SCHEME_BERNOULLI:
        base = data.y if variant == VARIANT_STANDARD else _mirrored_base(data.y, variant)
        prop = data.assignment.pi
        z = data.assignment.z.astype(np.float64)
        return base * (z / prop - (1.0 - z) / (1.0 - prop))
    if scheme != SCHEME_MBCR:
        raise EstimatorError(
            f"group sums need a grouped or Bernoulli assignment, got {scheme!r}"
        )
    lay, y_slot, t_slot, w_treat, w_ctrl = _slot_arrays(data)
    base = y_slot if variant == VARIANT_STANDARD else _mirrored_base(y_slot, variant)
    vals = base * (t_slot * w_treat - (1.0 - t_slot) * w_ctrl)
    body = lay.num_full_groups * lay.group_size
    sums = vals[:body].reshape(lay.num_full_groups, lay.group_size).sum(axis=1)
    if lay.tail_size > 0:
        sums = np.append(sums, vals[body:].sum())
    return sums


def conditional_mean_given_eta(
    table: PotentialTable, layout: MbcrLayout, eta: np.ndarray
) -> float:
    """Exact expectation of the grouped estimate over within-group shuffles.

    Given the unit-wide permutation, averages each group's sum over every
    admissible placement of its treated units (single choices for full
    blocks, subsets for the tail) and adds the groups up; group placements
    are independent so the sum of per-group means is the exact expectation.
    The result equals the table's finite-population effect for every
    permutation.
    """
    eta = np.asarray(eta)
    if eta.shape[0] != layout.n or table.n != layout.n:
        raise EstimatorError("table, layout, and permutation sizes differ")
    inv_eta = inverse_permutation(eta)
    g = float(layout.group_size)
    w_ctrl = g / (g - 1.0)
    total = 0.0
    blocks = layout.slot_blocks()
    full = blocks[: layout.num_full_groups]
    for block in full:
        units = inv_eta[block]
        y0g, y1g = table.y0[units], table.y1[units]
        s0 = y0g.sum()
        total += float(np.mean(g * y1g - w_ctrl * (s0 - y0g)))
    if layout.tail_size > 0:
        units = inv_eta[blocks[-1]]
        y0g, y1g = table.y0[units], table.y1[units]
        s0 = y0g.sum()
        wt = layout.tail_size / layout.tail_treated
        wc = layout.tail_size / (layout.tail_size - layout.tail_treated)
        acc = 0.0
        combos = list(itertools.combinations(range(layout.tail_size), layout.tail_treated))
        for picked in combos:
            sel = list(picked)
            acc += wt * y1g[sel].sum() - wc * (s0 - y0g[sel].sum())
        total += acc / len(combos)
    return total / layout.n
