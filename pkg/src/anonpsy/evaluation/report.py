"""Corpus-level privacy/utility evaluation over a run directory.

Per case and variant: diagnosis prediction (scored with soft-F1 against the
gold labels), cosine similarity to the original, and a binary diagnosis
acceptability judgment. Across the corpus: signed-rank, rank-sum, binomial,
Cochran/McNemar, and Friedman tests with Holm correction where tests are
pairwise. The per-variant (cosine, soft-F1) means are the coordinates in the
recallability vs structure plane.
"""

from __future__ import annotations

import csv
import io
import random
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..gateway import GatewayError, LlmGateway
from .canon import canonical_label_set, soft_f1
from .embedding import doc_similarity
from .judge import JudgeError, judge_risk
from .stats import (
    binomial_test,
    cochran_q,
    friedman,
    holm_correct,
    mann_whitney_u,
    mcnemar,
    wilcoxon_signed_rank,
)

VARIANT_FILES = {
    "anonpsy": "deid.txt",
    "phi": "baseline.phi.txt",
    "sdc": "baseline.sdc.txt",
    "llm_only": "baseline.llm_only.txt",
}


class EvalInputError(RuntimeError):
    """Raised when required run artifacts are missing."""


@dataclass
class VariantMetrics:
    cosine: float
    soft_f1: float
    predicted: list[str]
    acceptable: bool | None = None


@dataclass
class CaseEval:
    case_id: str
    gold: list[str]
    variants: dict[str, VariantMetrics] = field(default_factory=dict)
    risk_anonpsy: int | None = None
    risk_llm_only: int | None = None
    more_similar: str | None = None  # anonpsy | llm_only
    flags: list[str] = field(default_factory=list)


@dataclass
class EvalReport:
    cases: list[CaseEval]
    variant_means: dict[str, dict[str, float]]  # variant -> {cosine, soft_f1}
    statistics: list[dict]

    def to_yaml(self) -> str:
        doc = {
            "variant_means": {
                name: {k: round(v, 6) for k, v in means.items()}
                for name, means in sorted(self.variant_means.items())
            },
            "statistics": self.statistics,
            "cases": [
                {
                    "case_id": c.case_id,
                    "gold": c.gold,
                    "variants": {
                        name: {
                            "cosine": round(m.cosine, 6),
                            "soft_f1": round(m.soft_f1, 6),
                            "predicted": m.predicted,
                            "acceptable": m.acceptable,
                        }
                        for name, m in sorted(c.variants.items())
                    },
                    "risk": {
                        "anonpsy": c.risk_anonpsy,
                        "llm_only": c.risk_llm_only,
                        "more_similar": c.more_similar,
                    },
                    "flags": c.flags,
                }
                for c in self.cases
            ],
        }
        return yaml.safe_dump(doc, sort_keys=False, allow_unicode=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["case_id", "variant", "cosine", "soft_f1", "acceptable", "risk"])
        for case in self.cases:
            risks = {"anonpsy": case.risk_anonpsy, "llm_only": case.risk_llm_only}
            for name, metrics in sorted(case.variants.items()):
                writer.writerow(
                    [
                        case.case_id,
                        name,
                        f"{metrics.cosine:.6f}",
                        f"{metrics.soft_f1:.6f}",
                        "" if metrics.acceptable is None else str(metrics.acceptable).lower(),
                        risks.get(name, ""),
                    ]
                )
        return buf.getvalue()


def _predict_diagnoses(gw: LlmGateway, narrative: str, case_id: str, variant: str, model: str | None) -> list[str]:
    text = gw.call(
        "predict_diagnoses",
        {"case_id": case_id, "variant": variant, "narrative": narrative},
        temperature=0.0,
        model=model,
    )
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict) or not isinstance(doc.get("diagnoses"), list):
        raise GatewayError("predict_diagnoses", "response is not a diagnoses mapping")
    return [str(d) for d in doc["diagnoses"] if str(d).strip()]


def _judge_acceptability(
    gw: LlmGateway, narrative: str, gold: list[str], case_id: str, variant: str, model: str | None
) -> bool:
    text = gw.call(
        "diagnosis_acceptability",
        {
            "case_id": case_id,
            "variant": variant,
            "narrative": narrative,
            "diagnoses": "; ".join(gold),
        },
        temperature=0.0,
        model=model,
    )
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict) or not isinstance(doc.get("acceptable"), bool):
        raise GatewayError("diagnosis_acceptability", "response is not an acceptability mapping")
    return doc["acceptable"]


def discover_cases(run_dir: str | Path) -> list[tuple[str, Path]]:
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise EvalInputError(f"run directory {run_dir} does not exist")
    cases = []
    for case_dir in sorted(p for p in run_dir.iterdir() if p.is_dir()):
        if (case_dir / "original.txt").is_file() and (case_dir / "meta.yaml").is_file():
            cases.append((case_dir.name, case_dir))
    if not cases:
        raise EvalInputError(f"no case directories with original.txt + meta.yaml under {run_dir}")
    return cases


def run_eval(
    run_dir: str | Path,
    gw: LlmGateway,
    embedder,
    match_threshold: float = 0.8,
    matcher=None,
    judge_model: str | None = None,
    seed: int = 0,
) -> EvalReport:
    """Evaluate every case directory under run_dir and aggregate statistics."""
    cases: list[CaseEval] = []
    missing: list[str] = []
    for case_id, case_dir in discover_cases(run_dir):
        original = (case_dir / "original.txt").read_text(encoding="utf-8")
        meta = yaml.safe_load((case_dir / "meta.yaml").read_text(encoding="utf-8")) or {}
        gold = canonical_label_set([str(d) for d in meta.get("diagnoses", [])])
        case = CaseEval(case_id=case_id, gold=gold)

        texts: dict[str, str] = {"original": original}
        for variant, filename in VARIANT_FILES.items():
            path = case_dir / filename
            if path.is_file():
                texts[variant] = path.read_text(encoding="utf-8")
        if "anonpsy" not in texts:
            missing.append(f"{case_id}/{VARIANT_FILES['anonpsy']}")
            continue

        for variant, text in texts.items():
            predicted_raw = _predict_diagnoses(gw, text, case_id, variant, judge_model)
            predicted = canonical_label_set(predicted_raw)
            score = soft_f1(predicted, gold, matcher=matcher, threshold=match_threshold)
            cos = 1.0 if variant == "original" else doc_similarity(original, text, embedder)
            acceptable = None
            if gold:
                acceptable = _judge_acceptability(gw, text, gold, case_id, variant, judge_model)
            case.variants[variant] = VariantMetrics(
                cosine=cos, soft_f1=score, predicted=predicted, acceptable=acceptable
            )

        if "llm_only" in texts:
            rng = random.Random(f"{seed}:{case_id}:judge")
            try:
                result = judge_risk(
                    original, texts["anonpsy"], texts["llm_only"], gw, rng, model=judge_model
                )
            except JudgeError as exc:
                case.flags.append(f"risk judgment excluded: {exc}")
            else:
                case.risk_anonpsy = result.score_a
                case.risk_llm_only = result.score_b
                case.more_similar = "anonpsy" if result.choice == "A" else "llm_only"
        cases.append(case)

    if missing:
        raise EvalInputError("missing run artifacts: " + ", ".join(missing))

    variant_means = _variant_means(cases)
    statistics = _corpus_statistics(cases)
    return EvalReport(cases=cases, variant_means=variant_means, statistics=statistics)


def _variant_means(cases: list[CaseEval]) -> dict[str, dict[str, float]]:
    sums: dict[str, list[float]] = {}
    counts: dict[str, int] = {}
    for case in cases:
        for name, metrics in case.variants.items():
            bucket = sums.setdefault(name, [0.0, 0.0])
            bucket[0] += metrics.cosine
            bucket[1] += metrics.soft_f1
            counts[name] = counts.get(name, 0) + 1
    return {
        name: {"cosine": sums[name][0] / counts[name], "soft_f1": sums[name][1] / counts[name]}
        for name in sums
    }


def _stat_record(name: str, comparison: str, outcome, correction: str | None = None) -> dict:
    return {
        "test": name,
        "comparison": comparison,
        "statistic": round(float(outcome.statistic), 6),
        "p": round(float(outcome.p_value), 6),
        "method": outcome.method,
        "correction": correction,
    }


def _corpus_statistics(cases: list[CaseEval]) -> list[dict]:
    stats: list[dict] = []

    paired_cosine = [
        (c.variants["anonpsy"].cosine, c.variants["llm_only"].cosine)
        for c in cases
        if "anonpsy" in c.variants and "llm_only" in c.variants
    ]
    if paired_cosine:
        outcome = wilcoxon_signed_rank(paired_cosine, alternative="less")
        stats.append(_stat_record("wilcoxon_signed_rank", "cosine: anonpsy < llm_only", outcome))

    paired_risk = [
        (float(c.risk_anonpsy), float(c.risk_llm_only))
        for c in cases
        if c.risk_anonpsy is not None and c.risk_llm_only is not None
    ]
    if paired_risk:
        outcome = wilcoxon_signed_rank(paired_risk, alternative="two_sided")
        stats.append(_stat_record("wilcoxon_signed_rank", "risk: anonpsy vs llm_only", outcome))

    choices = [c.more_similar for c in cases if c.more_similar is not None]
    if choices:
        k = sum(1 for choice in choices if choice == "llm_only")
        p = binomial_test(k, len(choices), 0.5)
        stats.append(
            {
                "test": "binomial",
                "comparison": f"llm_only chosen more similar ({k}/{len(choices)})",
                "statistic": float(k),
                "p": round(p, 6),
                "method": "exact",
                "correction": None,
            }
        )

    chosen_risk: list[float] = []
    unchosen_risk: list[float] = []
    for c in cases:
        if c.more_similar is None or c.risk_anonpsy is None or c.risk_llm_only is None:
            continue
        if c.more_similar == "anonpsy":
            chosen_risk.append(float(c.risk_anonpsy))
            unchosen_risk.append(float(c.risk_llm_only))
        else:
            chosen_risk.append(float(c.risk_llm_only))
            unchosen_risk.append(float(c.risk_anonpsy))
    if chosen_risk and unchosen_risk:
        outcome = mann_whitney_u(chosen_risk, unchosen_risk)
        stats.append(_stat_record("mann_whitney_u", "risk: chosen vs non-chosen", outcome))

    # Variants present in every case participate in the k-sample tests.
    if cases:
        complete = sorted(
            name for name in cases[0].variants if all(name in c.variants for c in cases)
        )
    else:
        complete = []

    if len(complete) >= 2 and len(cases) >= 2:
        table = [[c.variants[name].soft_f1 for name in complete] for c in cases]
        outcome = friedman(table)
        stats.append(_stat_record("friedman", "soft_f1 across " + "/".join(complete), outcome))

        pair_names: list[str] = []
        pair_ps: list[float] = []
        pair_stats: list[float] = []
        for i, name_a in enumerate(complete):
            for name_b in complete[i + 1 :]:
                pairs = [(c.variants[name_a].soft_f1, c.variants[name_b].soft_f1) for c in cases]
                outcome = wilcoxon_signed_rank(pairs)
                pair_names.append(f"soft_f1: {name_a} vs {name_b}")
                pair_ps.append(outcome.p_value)
                pair_stats.append(outcome.statistic)
        for name, stat, raw, adj in zip(pair_names, pair_stats, pair_ps, holm_correct(pair_ps)):
            stats.append(
                {
                    "test": "wilcoxon_signed_rank",
                    "comparison": name,
                    "statistic": round(stat, 6),
                    "p": round(raw, 6),
                    "p_holm": round(adj, 6),
                    "method": "exact" if len(cases) <= 25 else "approx",
                    "correction": "holm",
                }
            )

        accept_variants = [
            name
            for name in complete
            if all(c.variants[name].acceptable is not None for c in cases)
        ]
        if len(accept_variants) >= 2:
            table_bool = [
                [bool(c.variants[name].acceptable) for name in accept_variants] for c in cases
            ]
            outcome = cochran_q(table_bool)
            stats.append(
                _stat_record("cochran_q", "acceptability across " + "/".join(accept_variants), outcome)
            )
            mc_names: list[str] = []
            mc_ps: list[float] = []
            for i, name_a in enumerate(accept_variants):
                for name_b in accept_variants[i + 1 :]:
                    b_count = sum(
                        1
                        for c in cases
                        if c.variants[name_a].acceptable and not c.variants[name_b].acceptable
                    )
                    c_count = sum(
                        1
                        for c in cases
                        if not c.variants[name_a].acceptable and c.variants[name_b].acceptable
                    )
                    mc_names.append(f"acceptability: {name_a} vs {name_b}")
                    mc_ps.append(mcnemar(b_count, c_count))
            for name, raw, adj in zip(mc_names, mc_ps, holm_correct(mc_ps)):
                stats.append(
                    {
                        "test": "mcnemar",
                        "comparison": name,
                        "statistic": None,
                        "p": round(raw, 6),
                        "p_holm": round(adj, 6),
                        "method": "exact",
                        "correction": "holm",
                    }
                )

    return stats
