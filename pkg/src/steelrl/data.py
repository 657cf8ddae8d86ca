"""Batch dataset model, CSV ingestion and the loan-pricing preprocessing."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TransitionDataset:
    """Flat batch of (s, a, r, s') transitions from N trajectories of length T.

    Arrays are ordered trajectory-major: row i*T + t is step t of trajectory i.
    Immutable after construction; safe to share across readers.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    n_trajectories: int
    horizon: int
    r_max: float | None = None
    contiguous: bool = True

    def __post_init__(self):
        s, a, r, sn = self.states, self.actions, self.rewards, self.next_states
        nt = self.n_trajectories * self.horizon
        if s.shape[0] != nt or a.shape[0] != nt or r.shape[0] != nt or sn.shape[0] != nt:
            raise ValueError("array lengths inconsistent with N*T")
        if s.shape != sn.shape:
            raise ValueError("states and next_states must share a shape")
        for name, arr in (("states", s), ("actions", a), ("rewards", r), ("next_states", sn)):
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite values")
        if self.r_max is not None and np.abs(r).max(initial=0.0) > self.r_max + 1e-12:
            raise ValueError("reward magnitude exceeds declared r_max")
        if self.contiguous and self.horizon > 1:
            for i in range(self.n_trajectories):
                lo = i * self.horizon
                hi = lo + self.horizon
                if not np.array_equal(sn[lo : hi - 1], s[lo + 1 : hi]):
                    raise ValueError(f"trajectory {i} is not contiguous (s' != next s)")

    @property
    def nt(self) -> int:
        return self.n_trajectories * self.horizon

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    def state_actions(self) -> np.ndarray:
        """Transitions as stacked (s, a) rows, the Gram-matrix ordering."""
        return np.hstack([self.states, self.actions])

    def reward_bound(self) -> float:
        return self.r_max if self.r_max is not None else float(np.abs(self.rewards).max())


@dataclass(frozen=True)
class BanditDataset:
    """Single-decision batch: rows of (s0, a0, r0)."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        n = self.states.shape[0]
        if self.actions.shape[0] != n or self.rewards.shape[0] != n:
            raise ValueError("row counts differ between columns")
        for name, arr in (("states", self.states), ("actions", self.actions), ("rewards", self.rewards)):
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite values")

    @property
    def n(self) -> int:
        return self.states.shape[0]

    def as_transitions(self) -> TransitionDataset:
        """Embed as a T=1 dataset (s' = s; only valid with discount 0)."""
        return TransitionDataset(
            states=self.states,
            actions=self.actions,
            rewards=self.rewards,
            next_states=self.states.copy(),
            n_trajectories=self.n,
            horizon=1,
        )


@dataclass(frozen=True)
class TransitionSchema:
    """Maps CSV header names to column roles."""

    traj_id: str
    time: str
    state: tuple[str, ...]
    action: tuple[str, ...]
    reward: str


def _parse_float(text, row_num, col):
    try:
        v = float(text)
    except ValueError:
        raise ValueError(f"row {row_num}: cannot parse {col}={text!r} as a number") from None
    if not math.isfinite(v):
        raise ValueError(f"row {row_num}: non-finite value in column {col}")
    return v


def load_transitions(path, schema: TransitionSchema) -> TransitionDataset:
    """Read trajectory rows (traj_id, t, s..., a..., r) from CSV.

    Rows are sorted by (traj_id, t); each row's successor state is the next
    row's state within the same trajectory, and the final row of every
    trajectory is dropped.  Trajectories must end up with a common length.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty file")
        needed = [schema.traj_id, schema.time, schema.reward, *schema.state, *schema.action]
        missing = [c for c in needed if c not in reader.fieldnames]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        rows = []
        for row_num, row in enumerate(reader, start=2):
            rows.append(
                (
                    row[schema.traj_id],
                    _parse_float(row[schema.time], row_num, schema.time),
                    [_parse_float(row[c], row_num, c) for c in schema.state],
                    [_parse_float(row[c], row_num, c) for c in schema.action],
                    _parse_float(row[schema.reward], row_num, schema.reward),
                )
            )
    if not rows:
        raise ValueError(f"{path}: no data rows")

    by_traj: dict[str, list] = {}
    for rec in rows:
        by_traj.setdefault(rec[0], []).append(rec)
    lengths = set()
    s_parts, a_parts, r_parts, sn_parts = [], [], [], []
    for tid in sorted(by_traj):
        seq = sorted(by_traj[tid], key=lambda rec: rec[1])
        if len(seq) < 2:
            raise ValueError(f"trajectory {tid!r} has no transitions (needs >= 2 rows)")
        lengths.add(len(seq) - 1)
        s_parts.extend(rec[2] for rec in seq[:-1])
        a_parts.extend(rec[3] for rec in seq[:-1])
        r_parts.extend(rec[4] for rec in seq[:-1])
        sn_parts.extend(rec[2] for rec in seq[1:])
    if len(lengths) != 1:
        raise ValueError(f"ragged trajectories: lengths {sorted(lengths)}")
    horizon = lengths.pop()
    return TransitionDataset(
        states=np.asarray(s_parts, dtype=float),
        actions=np.asarray(a_parts, dtype=float),
        rewards=np.asarray(r_parts, dtype=float),
        next_states=np.asarray(sn_parts, dtype=float),
        n_trajectories=len(by_traj),
        horizon=horizon,
    )


def save_transitions(dataset: TransitionDataset, path, schema: TransitionSchema) -> None:
    """Write a dataset back to the CSV layout accepted by load_transitions.

    Each trajectory is written as T+1 rows; the terminal row carries the last
    successor state with zero action/reward placeholders (dropped on reload).
    Floats use repr(), so a load/save/load round trip is bit-exact.
    """
    header = [schema.traj_id, schema.time, *schema.state, *schema.action, schema.reward]
    zeros_a = ["0"] * len(schema.action)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n_trajectories):
            lo = i * dataset.horizon
            for t in range(dataset.horizon):
                writer.writerow(
                    [
                        str(i),
                        str(t),
                        *[repr(v) for v in dataset.states[lo + t]],
                        *[repr(v) for v in dataset.actions[lo + t]],
                        repr(float(dataset.rewards[lo + t])),
                    ]
                )
            writer.writerow(
                [
                    str(i),
                    str(dataset.horizon),
                    *[repr(v) for v in dataset.next_states[lo + dataset.horizon - 1]],
                    *zeros_a,
                    "0",
                ]
            )


@dataclass(frozen=True)
class LoanRecord:
    """One auto-loan offer and the applicant's accept/reject decision."""

    fico: float
    loan_amount_approved: float
    prime_rate: float
    competitor_rate: float
    term: int
    monthly_payment: float
    accepted: bool

    def __post_init__(self):
        if self.term < 1:
            raise ValueError("term must be >= 1")
        if self.prime_rate <= -1 or self.competitor_rate <= -1:
            raise ValueError("rates must exceed -1")
        if self.monthly_payment < 0:
            raise ValueError("monthly payment must be >= 0")


LOAN_FIELDS = (
    "fico",
    "loan_amount_approved",
    "prime_rate",
    "competitor_rate",
    "term",
    "monthly_payment",
    "accepted",
)


def compute_loan_price(payment, term, prime_rate, loan_amount) -> float:
    """Net present value of the payment stream minus the loan amount."""
    if term < 1:
        raise ValueError("term must be >= 1")
    if prime_rate <= -1:
        raise ValueError("prime rate must exceed -1")
    discount = sum((1.0 + prime_rate) ** (-t) for t in range(1, int(term) + 1))
    return float(payment * discount - loan_amount)


def load_loan_records(path) -> list[LoanRecord]:
    """Read loan records from CSV with columns named as in LOAN_FIELDS."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty file")
        for row_num, row in enumerate(reader, start=2):
            records.append(
                LoanRecord(
                    fico=_parse_float(row["fico"], row_num, "fico"),
                    loan_amount_approved=_parse_float(
                        row["loan_amount_approved"], row_num, "loan_amount_approved"
                    ),
                    prime_rate=_parse_float(row["prime_rate"], row_num, "prime_rate"),
                    competitor_rate=_parse_float(row["competitor_rate"], row_num, "competitor_rate"),
                    term=int(_parse_float(row["term"], row_num, "term")),
                    monthly_payment=_parse_float(row["monthly_payment"], row_num, "monthly_payment"),
                    accepted=row["accepted"].strip().lower() in ("1", "true", "yes"),
                )
            )
    if not records:
        raise ValueError(f"{path}: no data rows")
    return records


def save_loan_records(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOAN_FIELDS)
        for rec in records:
            writer.writerow(
                [
                    repr(rec.fico),
                    repr(rec.loan_amount_approved),
                    repr(rec.prime_rate),
                    repr(rec.competitor_rate),
                    str(rec.term),
                    repr(rec.monthly_payment),
                    "1" if rec.accepted else "0",
                ]
            )


PRICE_OUTLIER_CUTOFF = 10_000.0


@dataclass(frozen=True)
class PricingData:
    """Bandit view of loan records plus the standardization statistics
    needed to apply a learned policy to new raw records."""

    dataset: BanditDataset
    feature_means: np.ndarray
    feature_stds: np.ndarray
    retained_fraction: float
    feature_names: tuple[str, ...] = field(
        default=("fico", "loan_amount_approved", "prime_rate", "competitor_rate", "term")
    )

    def standardize(self, raw_features: np.ndarray) -> np.ndarray:
        """Z-score raw covariate rows and append the intercept column."""
        z = (raw_features - self.feature_means) / self.feature_stds
        return np.hstack([z, np.ones((len(z), 1))])


def build_pricing_dataset(records) -> PricingData:
    """Assemble the pricing bandit dataset from loan records.

    Price (the action) is the NPV of payments minus the approved amount;
    records with price above the outlier cutoff are dropped.  Features are
    z-scored over the retained rows and an intercept column is appended.
    Reward is price when the offer was accepted, else 0.
    """
    if not records:
        raise ValueError("no records")
    rows = []
    for rec in records:
        price = compute_loan_price(
            rec.monthly_payment, rec.term, rec.prime_rate, rec.loan_amount_approved
        )
        if price > PRICE_OUTLIER_CUTOFF:
            continue
        rows.append(
            (
                [rec.fico, rec.loan_amount_approved, rec.prime_rate, rec.competitor_rate, rec.term],
                price,
                price if rec.accepted else 0.0,
            )
        )
    if not rows:
        raise ValueError("all records filtered as outliers")
    raw = np.asarray([r[0] for r in rows], dtype=float)
    means = raw.mean(axis=0)
    stds = raw.std(axis=0)
    stds[stds == 0.0] = 1.0
    features = np.hstack([(raw - means) / stds, np.ones((len(raw), 1))])
    dataset = BanditDataset(
        states=features,
        actions=np.asarray([[r[1]] for r in rows], dtype=float),
        rewards=np.asarray([r[2] for r in rows], dtype=float),
    )
    return PricingData(
        dataset=dataset,
        feature_means=means,
        feature_stds=stds,
        retained_fraction=len(rows) / len(records),
    )
