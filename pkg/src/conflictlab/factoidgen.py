"""Factoid perturbation, indicator-vector ladders, and factoid-seeded evidence.

Conflict intensity between two evidences is the XOR fraction of their
perturbation indicator vectors: Hamming distance divided by length, kept as
an exact rational.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence

from .core import Evidence, FactoidPair, LengthMode, QAItem, QcStatus, stable_id
from .errors import (
    EmptyVector,
    GenerationParseFailure,
    IdenticalOutput,
    InsufficientFactoids,
    LengthMismatch,
    NoJsonFound,
    KeyAbsent,
    NonStringValue,
)
from .gateway import GenerationRequest, ModelGateway
from .prompts import TEMPLATES, extract_json_field

__all__ = [
    "LadderMode",
    "LadderSpec",
    "IndicatorPlan",
    "perturb_factoid",
    "perturb_factoids",
    "select_factoid_set",
    "generate_evidence_from_factoids",
    "intensity",
    "build_intensity_ladder",
    "factoid_variants",
]

CONFLICT_TOTAL_FACTOIDS = 4


class LadderMode(Enum):
    CONFLICT = "CONFLICT"
    CORROBORATION = "CORROBORATION"


@dataclass(frozen=True)
class LadderSpec:
    """Controlled-intensity pair construction.

    CONFLICT mode fixes the factoid count at 4 and flips ``level`` positions;
    CORROBORATION mode keeps exactly one conflicting position among
    ``level`` corroborating ones (total level+1).
    """

    mode: LadderMode
    level: int
    total_factoids: int = 0

    def __post_init__(self):
        if not 1 <= self.level <= 3:
            raise ValueError("ladder level must be in [1, 3]")
        expected = (
            CONFLICT_TOTAL_FACTOIDS if self.mode is LadderMode.CONFLICT else self.level + 1
        )
        if self.total_factoids == 0:
            object.__setattr__(self, "total_factoids", expected)
        elif self.total_factoids != expected:
            raise ValueError(
                f"{self.mode.value} level {self.level} requires {expected} factoids"
            )


@dataclass(frozen=True)
class IndicatorPlan:
    """One ladder pair: positions of the item's factoids plus both indicators."""

    positions: tuple[int, ...]
    left: tuple[int, ...]
    right: tuple[int, ...]


def perturb_factoid(
    gateway: ModelGateway,
    backend: str,
    statement: str,
    max_attempts: Optional[int] = None,
) -> str:
    """Generate a contradicting variant of one factoid statement."""
    if not statement:
        raise ValueError("statement must be non-empty")
    prompt = TEMPLATES["perturb_factoid"].render({"s": statement})
    attempts = max_attempts or gateway.max_attempts
    last_error: Exception = GenerationParseFailure("no attempts made")
    for attempt in range(attempts):
        raw = gateway.complete(GenerationRequest(backend, prompt, attempt=attempt))
        try:
            perturbed = extract_json_field(raw, "modified statement")
        except (NoJsonFound, KeyAbsent, NonStringValue) as exc:
            last_error = GenerationParseFailure(str(exc))
            continue
        if perturbed == statement or not perturbed:
            last_error = IdenticalOutput("perturbation returned the original statement")
            continue
        return perturbed
    raise last_error


def perturb_factoids(
    gateway: ModelGateway,
    backend: str,
    qa: QAItem,
    max_attempts: Optional[int] = None,
) -> list[FactoidPair]:
    if not qa.factoids:
        raise ValueError(f"item {qa.id} has no factoids")
    return [
        FactoidPair(
            qa_id=qa.id,
            position=k,
            original=s,
            perturbed=perturb_factoid(gateway, backend, s, max_attempts),
        )
        for k, s in enumerate(qa.factoids)
    ]


def select_factoid_set(
    pairs: Sequence[FactoidPair], indicator: Sequence[int]
) -> list[str]:
    """Position k yields the perturbed variant iff indicator[k] is 1."""
    if len(pairs) != len(indicator):
        raise LengthMismatch(
            "indicator length must equal factoid pair count",
            pairs=len(pairs),
            indicator=len(indicator),
        )
    return [p.perturbed if bit else p.original for p, bit in zip(pairs, indicator)]


def factoid_variants(
    pairs: Sequence[FactoidPair], indicator: Sequence[int]
) -> tuple[list[str], list[str]]:
    """(used, unused) factoid texts for the quality check: the selected
    variant at each position, and its opposite."""
    used = select_factoid_set(pairs, indicator)
    unused = [p.original if bit else p.perturbed for p, bit in zip(pairs, indicator)]
    return used, unused


def format_keypoints(factoids: Sequence[str]) -> str:
    # Keypoints enter the prompt as a numbered list.
    return "\n".join(f"{i + 1}. {text}" for i, text in enumerate(factoids))


def generate_evidence_from_factoids(
    gateway: ModelGateway,
    backend: str,
    qa: QAItem,
    factoids: Sequence[str],
    indicator: Sequence[int],
    positions: Optional[Sequence[int]] = None,
    variant: int = 0,
    shuffle_seed: Optional[int] = None,
    max_attempts: Optional[int] = None,
) -> Evidence:
    """Generate one paragraph of evidence from the given factoid texts.

    Shuffling (when a seed is given) reorders the keypoints in the prompt
    only; indicator semantics and intensity are unaffected.
    """
    if not factoids:
        raise ValueError("factoids must be non-empty")
    if len(factoids) != len(indicator):
        raise LengthMismatch(
            "indicator length must equal factoid count",
            factoids=len(factoids),
            indicator=len(indicator),
        )
    prompt_factoids = list(factoids)
    if shuffle_seed is not None:
        random.Random(shuffle_seed).shuffle(prompt_factoids)
    prompt = TEMPLATES["evidence_gen_factoid"].render({"s": format_keypoints(prompt_factoids)})
    attempts = max_attempts or gateway.max_attempts
    last_error: Exception = GenerationParseFailure("no attempts made")
    for attempt in range(attempts):
        raw = gateway.complete(
            GenerationRequest(backend, prompt, variant=variant, attempt=attempt)
        )
        try:
            text = extract_json_field(raw, "Paragraph")
        except (NoJsonFound, KeyAbsent, NonStringValue) as exc:
            last_error = GenerationParseFailure(str(exc))
            continue
        indicator_tag = "".join(str(int(b)) for b in indicator)
        position_tag = (
            ",".join(str(p) for p in positions) if positions is not None else "all"
        )
        return Evidence(
            id=stable_id("evidence", qa.id, "factoid", indicator_tag, position_tag, variant),
            qa_id=qa.id,
            text=text,
            indicator=tuple(int(b) for b in indicator),
            factoid_positions=tuple(positions) if positions is not None else None,
            length_mode=LengthMode.LONG,
            qc_status=QcStatus.UNCHECKED,
        )
    raise last_error


def intensity(p_i: Sequence[int], p_j: Sequence[int]) -> Fraction:
    """XOR fraction between two indicator vectors: Hamming distance / n."""
    if len(p_i) != len(p_j):
        raise LengthMismatch("indicator vectors differ in length", left=len(p_i), right=len(p_j))
    if not p_i:
        raise EmptyVector("indicator vectors must be non-empty")
    hamming = sum(int(a) ^ int(b) for a, b in zip(p_i, p_j))
    return Fraction(hamming, len(p_i))


def build_intensity_ladder(
    qa: QAItem,
    spec: LadderSpec,
    seed: int,
    n_pairs: int = 1,
) -> list[IndicatorPlan]:
    """Indicator-vector pairs realizing the requested ladder level.

    The base vector is all-zero; the counterpart flips seeded positions
    (``level`` of them in CONFLICT mode, exactly one in CORROBORATION mode).
    """
    available = len(qa.factoids or ())
    if available < spec.total_factoids:
        raise InsufficientFactoids(
            "item has too few factoids for this ladder",
            qa_id=qa.id,
            available=available,
            required=spec.total_factoids,
        )
    rng = random.Random(seed)
    n = spec.total_factoids
    plans = []
    for _ in range(n_pairs):
        if available == n:
            positions = tuple(range(available))
        else:
            positions = tuple(sorted(rng.sample(range(available), n)))
        flips = spec.level if spec.mode is LadderMode.CONFLICT else 1
        flipped = set(rng.sample(range(n), flips))
        left = tuple(0 for _ in range(n))
        right = tuple(1 if k in flipped else 0 for k in range(n))
        plans.append(IndicatorPlan(positions=positions, left=left, right=right))
    return plans
