"""BBM92 post-processing: basis sifting, disclosure and QBER reports.

Outcome +1 maps to bit 0 and -1 to bit 1. When the alignment targeted
anti-correlations (sign = -1) Bob's bits are flipped so that matched
bases agree at visibility -1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "SiftedKey",
    "QberReport",
    "InsufficientKey",
    "sift_events",
    "disclose_fraction",
    "qber_report_merge",
]


class InsufficientKey(ValueError):
    """Disclosure cannot populate a basis bucket needed for an estimate."""


@dataclass(frozen=True)
class SiftedKey:
    """Matched-basis raw key bits with their basis labels."""

    alice_bits: np.ndarray  # uint8 0/1
    bob_bits: np.ndarray
    basis_labels: np.ndarray  # int8, 1 or 2

    def __post_init__(self):
        if not (len(self.alice_bits) == len(self.bob_bits) == len(self.basis_labels)):
            raise ValueError("bit and label sequences must have equal length")

    def __len__(self) -> int:
        return len(self.alice_bits)

    def concat(self, other: "SiftedKey") -> "SiftedKey":
        return SiftedKey(
            np.concatenate([self.alice_bits, other.alice_bits]),
            np.concatenate([self.bob_bits, other.bob_bits]),
            np.concatenate([self.basis_labels, other.basis_labels]),
        )

    @classmethod
    def empty(cls) -> "SiftedKey":
        return cls(np.zeros(0, np.uint8), np.zeros(0, np.uint8), np.zeros(0, np.int8))


@dataclass(frozen=True)
class QberReport:
    """Disclosure outcome: compared counts, per-basis errors and rates.

    qber values are None (with the matching no_estimate flag set) when a
    basis bucket received no disclosed bits; rates are never fabricated.
    """

    disclosed_count: int = 0
    disclosed_11: int = 0
    disclosed_22: int = 0
    errors_11: int = 0
    errors_22: int = 0
    qber_11: Optional[float] = None
    qber_22: Optional[float] = None
    key_bits_remaining: int = 0
    no_estimate_11: bool = True
    no_estimate_22: bool = True

    @classmethod
    def from_counts(cls, disclosed_count, disclosed_11, disclosed_22,
                    errors_11, errors_22, key_bits_remaining) -> "QberReport":
        return cls(
            disclosed_count=disclosed_count,
            disclosed_11=disclosed_11,
            disclosed_22=disclosed_22,
            errors_11=errors_11,
            errors_22=errors_22,
            qber_11=errors_11 / disclosed_11 if disclosed_11 > 0 else None,
            qber_22=errors_22 / disclosed_22 if disclosed_22 > 0 else None,
            key_bits_remaining=key_bits_remaining,
            no_estimate_11=disclosed_11 == 0,
            no_estimate_22=disclosed_22 == 0,
        )

    def to_dict(self) -> dict:
        return {
            "disclosed_count": self.disclosed_count,
            "disclosed_11": self.disclosed_11,
            "disclosed_22": self.disclosed_22,
            "errors_11": self.errors_11,
            "errors_22": self.errors_22,
            "qber_11": self.qber_11,
            "qber_22": self.qber_22,
            "key_bits_remaining": self.key_bits_remaining,
            "no_estimate_11": self.no_estimate_11,
            "no_estimate_22": self.no_estimate_22,
        }


def sift_events(events: np.ndarray, sign: int = 1) -> SiftedKey:
    """Keep matched-basis coincidences as raw key bits.

    sign = -1 flips Bob's bits (anti-correlated alignment target).
    """
    if sign not in (-1, 1):
        raise ValueError("sign must be +1 or -1")
    events = np.asarray(events)
    mask = events["a_basis"] == events["b_basis"]
    alice = (events["a_out"][mask] < 0).astype(np.uint8)
    bob = (events["b_out"][mask] < 0).astype(np.uint8)
    if sign == -1:
        bob = (1 - bob).astype(np.uint8)
    return SiftedKey(alice_bits=alice, bob_bits=bob,
                     basis_labels=events["a_basis"][mask].astype(np.int8))


def disclose_fraction(key: SiftedKey, f: float,
                      rng: np.random.Generator) -> tuple:
    """Disclose floor(f * len) uniformly chosen bits and compare them.

    Disclosed positions are removed from the key. Returns
    (QberReport, reduced SiftedKey). Buckets without disclosed bits are
    flagged in the report instead of reporting a zero rate.
    """
    if not 0.0 <= f <= 1.0:
        raise ValueError("f must be in [0, 1]")
    total = len(key)
    k = int(np.floor(f * total))
    pos = rng.choice(total, size=k, replace=False) if k else np.zeros(0, np.intp)
    keep = np.ones(total, dtype=bool)
    keep[pos] = False
    errs = key.alice_bits[pos] != key.bob_bits[pos]
    labels = key.basis_labels[pos]
    report = QberReport.from_counts(
        disclosed_count=k,
        disclosed_11=int(np.sum(labels == 1)),
        disclosed_22=int(np.sum(labels == 2)),
        errors_11=int(np.sum(errs & (labels == 1))),
        errors_22=int(np.sum(errs & (labels == 2))),
        key_bits_remaining=total - k,
    )
    reduced = SiftedKey(key.alice_bits[keep], key.bob_bits[keep],
                        key.basis_labels[keep])
    return report, reduced


def qber_report_merge(*reports: QberReport) -> QberReport:
    """Count-weighted pooling of disclosure reports."""
    if not reports:
        return QberReport()
    return QberReport.from_counts(
        disclosed_count=sum(r.disclosed_count for r in reports),
        disclosed_11=sum(r.disclosed_11 for r in reports),
        disclosed_22=sum(r.disclosed_22 for r in reports),
        errors_11=sum(r.errors_11 for r in reports),
        errors_22=sum(r.errors_22 for r in reports),
        key_bits_remaining=sum(r.key_bits_remaining for r in reports),
    )
