"""Perturbation configuration, feasibility rules, and test-value pools.

Rule tables and value-pool inventories ship as data files so deployments can
extend them without code changes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

CONSTRAINT_KINDS = ("min_present_age", "max_onset_age", "required_sex")


@dataclass(frozen=True)
class PerturbConfig:
    age_offset_bound_years: int = 3
    sex_flip_probability: float = 0.5
    steb_window_size: int = 3
    similarity_threshold: float = 0.85
    max_retries: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.age_offset_bound_years < 1:
            raise ValueError("age_offset_bound_years must be positive")
        if not 0.0 <= self.sex_flip_probability <= 1.0:
            raise ValueError("sex_flip_probability must be in [0, 1]")
        if self.steb_window_size < 1:
            raise ValueError("steb_window_size must be positive")
        if not 0.0 < self.similarity_threshold < 1.0:
            raise ValueError("similarity_threshold must be in (0, 1)")
        if self.max_retries < 1:
            raise ValueError("max_retries must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "PerturbConfig":
        known = {f for f in cls.__dataclass_fields__}  # type: ignore[attr-defined]
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown perturb config keys: {sorted(unknown)}")
        return cls(**doc)


def case_seed(global_seed: int, case_id: str) -> int:
    """Per-case RNG seed derived from the run seed and the case id."""
    digest = hashlib.sha256(f"{global_seed}:{case_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class FeasibilityRule:
    """One clinical feasibility constraint keyed on a diagnosis pattern.

    min_present_age: perturbed present age must be >= value.
    max_onset_age: age at the earliest related episode must stay < value.
    required_sex: sex is pinned to value and never flipped.
    """

    diagnosis_pattern: str
    constraint_kind: str
    value: int | str

    def __post_init__(self) -> None:
        if not self.diagnosis_pattern.strip():
            raise ValueError("diagnosis_pattern must be nonempty")
        if self.constraint_kind not in CONSTRAINT_KINDS:
            raise ValueError(f"unknown constraint_kind {self.constraint_kind!r}")
        if self.constraint_kind in ("min_present_age", "max_onset_age"):
            if not isinstance(self.value, int) or not 0 <= self.value <= 130:
                raise ValueError(f"{self.constraint_kind} value out of clinical range: {self.value!r}")

    def matches(self, diagnosis_label: str) -> bool:
        return self.diagnosis_pattern.lower() in diagnosis_label.lower()


@dataclass(frozen=True)
class TestValuePool:
    """Clinically equivalent value bands for one canonical numeric test."""

    canonical_test: str
    aliases: tuple[str, ...]
    bands: tuple[tuple[int, int, str], ...]  # (low, high, interpretation)

    def __post_init__(self) -> None:
        spans = sorted((low, high) for low, high, _ in self.bands)
        for (low, high) in spans:
            if high - low < 1:
                raise ValueError(f"{self.canonical_test}: band {low}-{high} has fewer than 2 values")
        for (_, high_a), (low_b, _) in zip(spans, spans[1:]):
            if low_b <= high_a:
                raise ValueError(f"{self.canonical_test}: bands overlap at {low_b}")

    def band_for(self, value: int) -> tuple[int, int, str] | None:
        for low, high, label in self.bands:
            if low <= value <= high:
                return (low, high, label)
        return None


def _data_text(name: str) -> str:
    return resources.files("anonpsy").joinpath(f"data/{name}").read_text(encoding="utf-8")


def load_feasibility_rules(path: str | Path | None = None) -> list[FeasibilityRule]:
    text = Path(path).read_text(encoding="utf-8") if path else _data_text("feasibility_rules.yaml")
    doc = yaml.safe_load(text) or {}
    rules = []
    for entry in doc.get("rules", []):
        rules.append(
            FeasibilityRule(
                diagnosis_pattern=entry["diagnosis_pattern"],
                constraint_kind=entry["constraint_kind"],
                value=entry["value"],
            )
        )
    return rules


def load_test_value_pools(path: str | Path | None = None) -> list[TestValuePool]:
    text = Path(path).read_text(encoding="utf-8") if path else _data_text("test_value_pools.yaml")
    doc = yaml.safe_load(text) or {}
    pools = []
    for entry in doc.get("pools", []):
        pools.append(
            TestValuePool(
                canonical_test=entry["canonical_test"],
                aliases=tuple(entry["aliases"]),
                bands=tuple((b["low"], b["high"], b["label"]) for b in entry["bands"]),
            )
        )
    return pools


def load_minor_occupations(path: str | Path | None = None) -> frozenset[str]:
    text = Path(path).read_text(encoding="utf-8") if path else _data_text("minor_occupations.txt")
    return frozenset(line.strip().lower() for line in text.splitlines() if line.strip())


def load_contradiction_lexicon(path: str | Path | None = None) -> dict[str, dict[str, list[str]]]:
    text = Path(path).read_text(encoding="utf-8") if path else _data_text("contradiction_lexicon.yaml")
    return yaml.safe_load(text) or {}


def load_mse_domains(path: str | Path | None = None) -> dict[str, list[str]]:
    text = Path(path).read_text(encoding="utf-8") if path else _data_text("mse_domains.yaml")
    return yaml.safe_load(text) or {}
