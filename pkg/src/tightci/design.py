"""Randomization designs for two-arm experiments.

Three assignment schemes: independent Bernoulli(pi) coin flips, complete
randomization of a fixed treated count, and grouped ("mini-batch") complete
randomization, which realizes complete randomization as a unit-wide shuffle
composed with within-group shuffles over blocks of size ``ceil(1/pi)``.  The
grouped form is distributionally identical to complete randomization but keeps
explicit bookkeeping (which unit sits in which group, and the two permutations
that put it there) that downstream estimators need.

All draws are pure functions of an explicit ``numpy.random.Generator``; the
same seeded generator always reproduces the same assignment.  Exact
enumeration of the grouped scheme's assignment distribution, used by the
verification harness, counts permutation tuples with integer arithmetic only.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

SCHEME_BERNOULLI = "bernoulli"
SCHEME_COMPLETE = "complete"
SCHEME_MBCR = "mbcr"

SCHEMES = (SCHEME_BERNOULLI, SCHEME_COMPLETE, SCHEME_MBCR)

DEFAULT_ENUMERATION_BUDGET = 10**8


class DesignError(ValueError):
    """An ill-posed randomization design (bad counts or propensity)."""


class LayoutInfeasibleError(DesignError):
    """The grouped layout cannot host the requested treated count.

    Raised when the final (remainder) group would need as many or more
    treated units than it has members, which happens for propensities close
    to 1/2 that do not divide the sample evenly.  Concretely the construction
    breaks exactly when ``n1 * ceil(n / n1) - n >= 2 * ceil(n / n1) - 2``.
    """


class EnumerationBudgetError(DesignError):
    """Exact enumeration would exceed the configured tuple budget."""


def _check_counts(n: int, n1: int) -> None:
    if not isinstance(n, (int, np.integer)) or not isinstance(n1, (int, np.integer)):
        raise DesignError("n and n1 must be integers")
    if n1 < 1:
        raise DesignError(f"need at least one treated unit, got n1={n1}")
    if 2 * n1 > n:
        raise DesignError(
            f"n1={n1} exceeds n/2={n / 2}: the propensity n1/n must be at most "
            "1/2; relabel the arms so the smaller one is called treatment"
        )


def validate_propensity(pi: float) -> None:
    """Reject propensities outside (0, 1/2]."""
    if not (0.0 < pi <= 0.5):
        raise DesignError(
            f"propensity {pi} outside (0, 1/2]; relabel the arms so the "
            "smaller one is called treatment"
        )


@dataclass(frozen=True)
class DesignParams:
    """Counting design: ``n`` units of which exactly ``n1`` are treated."""

    n: int
    n1: int

    def __post_init__(self) -> None:
        _check_counts(self.n, self.n1)

    @property
    def pi(self) -> Fraction:
        return Fraction(self.n1, self.n)


@dataclass(frozen=True)
class MbcrLayout:
    """Derived batching arithmetic for grouped complete randomization.

    ``num_full_groups`` blocks of ``group_size`` slots each receive exactly
    one treated unit; a final block of ``tail_size`` slots (possibly empty)
    receives ``tail_treated`` of them.  Slots are laid out as the allocation
    pattern returned by :meth:`allocation_vector`.
    """

    n: int
    n1: int
    group_size: int
    num_full_groups: int
    tail_size: int
    tail_treated: int

    @property
    def pi(self) -> Fraction:
        return Fraction(self.n1, self.n)

    @property
    def tail_ratio(self) -> Fraction | None:
        """Final-group size per treated unit (None when there is no tail)."""
        if self.tail_treated == 0:
            return None
        return Fraction(self.tail_size, self.tail_treated)

    @property
    def num_groups(self) -> int:
        """Total group count including the tail when present."""
        return self.num_full_groups + (1 if self.tail_size > 0 else 0)

    def allocation_vector(self) -> np.ndarray:
        """Pre-randomization slot pattern: one 1 leading each full block,
        then the tail's treated slots, then the tail's control slots."""
        a = np.zeros(self.n, dtype=np.int8)
        body = self.num_full_groups * self.group_size
        a[0:body:self.group_size] = 1
        a[body:body + self.tail_treated] = 1
        return a

    def slot_blocks(self) -> list[np.ndarray]:
        """Slot index ranges, one per group, tail last when present."""
        g, t = self.group_size, self.num_full_groups
        blocks = [np.arange(i * g, (i + 1) * g) for i in range(t)]
        if self.tail_size > 0:
            blocks.append(np.arange(t * g, self.n))
        return blocks


def compute_layout(n: int, n1: int) -> MbcrLayout:
    """Group-size arithmetic for a treated count ``n1`` out of ``n`` units.

    The block size is ``ceil(n / n1)`` (the reciprocal propensity rounded
    up).  The number of full blocks and the tail's treated count follow a
    three-way split: when ``n1`` divides ``n`` there is no tail; otherwise
    one or two treated units spill into a remainder group, chosen so the
    remainder has at least two members.  Inputs where even the two-spill
    case leaves the remainder group short (no control unit, or fewer slots
    than treated) are rejected with :class:`LayoutInfeasibleError`.
    """
    _check_counts(n, n1)
    n = int(n)
    n1 = int(n1)
    group_size = -(-n // n1)
    if n % n1 == 0:
        full, tail_treated = n1, 0
    elif n - (n1 - 1) * group_size >= 2:
        full, tail_treated = n1 - 1, 1
    else:
        full, tail_treated = n1 - 2, 2
    tail = n - full * group_size
    if tail_treated >= 1 and tail <= tail_treated:
        raise LayoutInfeasibleError(
            f"no valid grouping for n={n}, n1={n1}: the remainder group would "
            f"have {tail} slot(s) for {tail_treated} treated unit(s) and no "
            "control; use Bernoulli randomization (or adjust n1) at this "
            "propensity"
        )
    return MbcrLayout(
        n=n,
        n1=n1,
        group_size=group_size,
        num_full_groups=full,
        tail_size=tail,
        tail_treated=tail_treated,
    )


@dataclass(frozen=True)
class MbcrDraw:
    """Permutation bookkeeping for one grouped draw.

    ``beta`` permutes slots within each block (slot ``s`` delivers the
    allocation pattern's value at ``beta[s]``); ``eta`` maps unit ``j`` to
    slot ``eta[j]``.  ``groups`` lists the units occupying each block, tail
    last, in slot order.
    """

    layout: MbcrLayout
    beta: np.ndarray
    eta: np.ndarray
    groups: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class Assignment:
    """A realized treatment vector plus how it was drawn."""

    z: np.ndarray
    scheme: str
    pi: float
    n1: int | None = None
    mbcr: MbcrDraw | None = None

    @property
    def n(self) -> int:
        return int(self.z.shape[0])


def inverse_permutation(perm: np.ndarray) -> np.ndarray:
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.shape[0])
    return inv


def draw_bernoulli(n: int, pi: float, rng: np.random.Generator) -> Assignment:
    """Independent Bernoulli(pi) assignment for each unit."""
    if n < 1:
        raise DesignError(f"need n >= 1, got {n}")
    validate_propensity(pi)
    z = (rng.random(n) < pi).astype(np.int8)
    return Assignment(z=z, scheme=SCHEME_BERNOULLI, pi=float(pi))


def draw_complete(n: int, n1: int, rng: np.random.Generator) -> Assignment:
    """Uniform draw over all arrangements of ``n1`` ones among ``n`` slots."""
    _check_counts(n, n1)
    canonical = np.zeros(n, dtype=np.int8)
    canonical[:n1] = 1
    z = rng.permutation(canonical)
    return Assignment(z=z, scheme=SCHEME_COMPLETE, pi=n1 / n, n1=int(n1))


def draw_mbcr(layout: MbcrLayout, rng: np.random.Generator) -> Assignment:
    """Grouped complete randomization draw.

    Samples one uniform permutation per block (composed into ``beta``), then
    a uniform unit-wide permutation ``eta``, always in that order so a seeded
    generator reproduces the draw exactly.  Unit ``j`` receives the
    allocation pattern's value at slot ``beta[eta[j]]``.
    """
    n, g = layout.n, layout.group_size
    body = layout.num_full_groups * g
    beta = np.arange(n)
    for t in range(layout.num_full_groups):
        beta[t * g:(t + 1) * g] = t * g + rng.permutation(g)
    if layout.tail_size >= 2:
        beta[body:] = body + rng.permutation(layout.tail_size)
    eta = rng.permutation(n)
    a = layout.allocation_vector()
    z = a[beta][eta]
    inv_eta = inverse_permutation(eta)
    groups = tuple(inv_eta[block] for block in layout.slot_blocks())
    detail = MbcrDraw(layout=layout, beta=beta, eta=eta, groups=groups)
    return Assignment(
        z=z, scheme=SCHEME_MBCR, pi=layout.n1 / n, n1=layout.n1, mbcr=detail
    )


@dataclass(frozen=True)
class MbcrDistribution:
    """Exact assignment counts from enumerating every permutation tuple."""

    n: int
    n1: int
    counts: dict[tuple[int, ...], int]
    total: int

    def probability(self, z) -> Fraction:
        return Fraction(self.counts.get(tuple(int(v) for v in z), 0), self.total)

    def is_uniform(self) -> bool:
        """True when every arrangement of n1 ones has identical probability."""
        expected = math.comb(self.n, self.n1)
        if len(self.counts) != expected:
            return False
        want = Fraction(self.total, expected)
        return want.denominator == 1 and all(
            c == want.numerator for c in self.counts.values()
        )


def enumeration_space_size(layout: MbcrLayout) -> int:
    """Number of permutation tuples the exact enumeration must visit."""
    size = math.factorial(layout.group_size) ** layout.num_full_groups
    if layout.tail_size >= 2:
        size *= math.factorial(layout.tail_size)
    return size * math.factorial(layout.n)


def enumerate_mbcr_distribution(
    layout: MbcrLayout, budget: int = DEFAULT_ENUMERATION_BUDGET
) -> MbcrDistribution:
    """Exact distribution of grouped draws over the full permutation space.

    Visits every tuple of within-block permutations and every unit-wide
    permutation, counting each resulting assignment with integer arithmetic.
    Refuses (never silently samples) when the tuple count exceeds ``budget``.
    """
    space = enumeration_space_size(layout)
    if space > budget:
        raise EnumerationBudgetError(
            f"exact enumeration needs {space} permutation tuples, over the "
            f"budget of {budget}; increase the budget or fall back to an "
            "approximate Monte Carlo chi-square check"
        )
    n, g = layout.n, layout.group_size
    a = layout.allocation_vector()
    block_perms = [
        [np.array(p) + t * g for p in itertools.permutations(range(g))]
        for t in range(layout.num_full_groups)
    ]
    if layout.tail_size >= 2:
        body = layout.num_full_groups * g
        block_perms.append(
            [
                np.array(p) + body
                for p in itertools.permutations(range(layout.tail_size))
            ]
        )
    patterns = [
        a[np.concatenate(combo)]
        for combo in itertools.product(*block_perms)
    ]
    weights = (1 << np.arange(n)).astype(np.int64)
    tally = np.zeros(1 << n, dtype=np.int64)
    chunk = 40320
    perm_iter = itertools.permutations(range(n))
    while True:
        batch = list(itertools.islice(perm_iter, chunk))
        if not batch:
            break
        eta_mat = np.array(batch, dtype=np.intp)
        for pattern in patterns:
            codes = pattern[eta_mat].astype(np.int64) @ weights
            tally += np.bincount(codes, minlength=1 << n)
    counts: dict[tuple[int, ...], int] = {}
    for code in np.nonzero(tally)[0]:
        z = tuple(int((code >> k) & 1) for k in range(n))
        counts[z] = int(tally[code])
    total = int(tally.sum())
    if total != space:
        raise AssertionError(
            f"enumeration visited {total} tuples, expected {space}"
        )
    return MbcrDistribution(n=n, n1=layout.n1, counts=counts, total=total)
