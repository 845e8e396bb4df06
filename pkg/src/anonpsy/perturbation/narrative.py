"""Narrative-level perturbation: visit episode, STEB frames, MSE alignment.

All rewrites go through hard validators. The similarity gate rejects outputs
too close to the source text; the visit-event scaffold is immutable and its
rewrite may not contradict it; STEB rewrites may never introduce fields the
source frame lacked; the MSE editor must retain every objective domain
mentioned in the original paragraph.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import yaml

from ..gateway import GatewayError, LlmGateway
from ..model import CaseAttributes, SemanticGraph, StebContext, SymptomNode, VisitEvent
from ..textproc import trigram_jaccard
from .config import PerturbConfig


@dataclass(frozen=True)
class GateResult:
    accepted: bool
    score: float


def similarity_gate(original: str, candidate: str, threshold: float, similarity_fn=None) -> GateResult:
    """Reject iff similarity(original, candidate) > threshold."""
    fn = similarity_fn or trigram_jaccard
    score = fn(original, candidate)
    return GateResult(accepted=score <= threshold, score=score)


def derive_scaffold(visit: VisitEvent) -> dict[str, str]:
    """Immutable presentation attributes; urgency derives from safety flags."""
    return {
        "legal_status": visit.legal_status,
        "arrival_mode": visit.arrival_mode,
        "setting": visit.setting,
        "urgency": "urgent" if visit.safety_flags else "routine",
    }


def _contradiction(scaffold: dict[str, str], lexicon: dict[str, dict[str, list[str]]], text: str) -> str | None:
    """First scaffold-contradicting keyword found in the text, if any."""
    lowered = text.lower()
    for field_name, value in scaffold.items():
        field_lexicon = lexicon.get(field_name, {})
        matched_key = None
        for key in sorted(field_lexicon, key=len, reverse=True):
            if key in value.lower():
                matched_key = key
                break
        if matched_key is None:
            continue
        for keyword in field_lexicon[matched_key]:
            if keyword.lower() in lowered:
                return f"{field_name}={value!r} contradicted by {keyword!r}"
    return None


def rewrite_visit_episode(
    g: SemanticGraph,
    gw: LlmGateway,
    cfg: PerturbConfig,
    lexicon: dict[str, dict[str, list[str]]],
    similarity_fn=None,
) -> tuple[VisitEvent, dict]:
    """Rewrite the visit episode text under the immutable scaffold.

    Candidates containing scaffold-contradicting keywords or failing the
    similarity gate trigger retries; exhausted retries keep the original.
    """
    visit = g.visit_event
    scaffold = derive_scaffold(visit)
    rejections: list[str] = []
    for attempt in range(1, cfg.max_retries + 1):
        try:
            text = gw.call(
                "visit_rewrite",
                {
                    **scaffold,
                    "reason_for_visit": visit.reason_for_visit,
                    "visit_episode": visit.visit_episode,
                    "pathway": visit.pathway or "",
                    "attempt": str(attempt),
                },
                operator="perturb",
            )
        except GatewayError as exc:
            rejections.append(f"attempt {attempt}: gateway failure: {exc}")
            break
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError:
            rejections.append(f"attempt {attempt}: unparseable response")
            continue
        if not isinstance(doc, dict) or not isinstance(doc.get("visit_episode"), str):
            rejections.append(f"attempt {attempt}: missing visit_episode")
            continue
        episode = doc["visit_episode"].strip()
        pathway = doc.get("pathway")
        pathway = pathway.strip() if isinstance(pathway, str) and pathway.strip() else visit.pathway
        conflict = _contradiction(scaffold, lexicon, episode)
        if conflict:
            rejections.append(f"attempt {attempt}: {conflict}")
            continue
        gate = similarity_gate(visit.visit_episode, episode, cfg.similarity_threshold, similarity_fn)
        if not gate.accepted:
            rejections.append(f"attempt {attempt}: similarity {gate.score:.3f} above threshold")
            continue
        new_visit = replace(visit, visit_episode=episode, pathway=pathway)
        return new_visit, {
            "step": "visit_episode",
            "attempts": attempt,
            "rejected": rejections,
            "scaffold": scaffold,
        }
    return visit, {
        "step": "visit_episode",
        "rejected": rejections,
        "scaffold": scaffold,
        "fallback": "original kept",
    }


def _frame_text(ctx: StebContext) -> str:
    return "\n".join(f"{name}: {getattr(ctx, name)}" for name in ctx.present_fields())


def _age_at_event(age_years: int, start_days: int) -> int:
    value = age_years + start_days / 365.0
    return max(0, int(value + 0.5))


def rewrite_steb_contexts(
    g: SemanticGraph,
    gw: LlmGateway,
    cfg: PerturbConfig,
    similarity_fn=None,
) -> tuple[SemanticGraph, list[dict]]:
    """Rewrite STEB frames in chronologically retrograde order.

    Each prompt sees the perturbed visit episode, the window of most recently
    edited frames, and the patient's age at the event. Only fields present in
    the source frame are rewritten; node ids, durations, and relations are
    untouched.
    """
    pool = g.durations_by_id()
    age = g.attributes.demographics.age
    visit_episode = g.visit_event.visit_episode if g.visit_event else ""

    def node_start(node: SymptomNode) -> int:
        starts = [pool[i].offset_days for i in node.duration_ids if i in pool]
        return min(starts) if starts else 0

    order = sorted(range(len(g.symptoms)), key=lambda i: (-node_start(g.symptoms[i]), i))
    recent: list[str] = []
    audits: list[dict] = []
    new_symptoms = list(g.symptoms)

    for index in order:
        node = g.symptoms[index]
        if not node.contexts:
            continue
        start = node_start(node)
        new_contexts = list(node.contexts)
        for frame_index, ctx in enumerate(node.contexts):
            fields = ctx.present_fields()
            original_text = _frame_text(ctx)
            rejections: list[str] = []
            accepted: StebContext | None = None
            for attempt in range(1, cfg.max_retries + 1):
                try:
                    text = gw.call(
                        "steb_rewrite",
                        {
                            "node_id": node.id,
                            "frame_index": str(frame_index),
                            "symptom": node.symptom,
                            "fields": ", ".join(fields),
                            "frame": original_text,
                            "visit_episode": visit_episode,
                            "recent_contexts": "\n---\n".join(recent[-cfg.steb_window_size:]),
                            "age_at_event": str(_age_at_event(age, start)),
                            "attempt": str(attempt),
                        },
                        operator="perturb",
                    )
                except GatewayError as exc:
                    rejections.append(f"attempt {attempt}: gateway failure: {exc}")
                    break
                candidate = _parse_frame(text, fields, rejections, attempt)
                if candidate is None:
                    continue
                gate = similarity_gate(
                    original_text, _frame_text(candidate), cfg.similarity_threshold, similarity_fn
                )
                if not gate.accepted:
                    rejections.append(f"attempt {attempt}: similarity {gate.score:.3f} above threshold")
                    continue
                accepted = candidate
                break
            if accepted is None:
                audits.append(
                    {
                        "step": "steb",
                        "node_id": node.id,
                        "frame": frame_index,
                        "rejected": rejections,
                        "fallback": "original frame kept",
                    }
                )
            else:
                new_contexts[frame_index] = accepted
                recent.append(_frame_text(accepted))
                audits.append(
                    {
                        "step": "steb",
                        "node_id": node.id,
                        "frame": frame_index,
                        "rejected": rejections,
                    }
                )
        new_symptoms[index] = replace(node, contexts=new_contexts)

    return replace(g, symptoms=new_symptoms), audits


def _parse_frame(text: str, fields: tuple[str, ...], rejections: list[str], attempt: int) -> StebContext | None:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError:
        rejections.append(f"attempt {attempt}: unparseable response")
        return None
    if not isinstance(doc, dict):
        rejections.append(f"attempt {attempt}: expected mapping")
        return None
    values: dict[str, str] = {}
    for name in fields:
        value = doc.get(name)
        if not isinstance(value, str) or not value.strip():
            rejections.append(f"attempt {attempt}: field {name!r} missing from rewrite")
            return None
        values[name] = value.strip()
    extras = [k for k in doc if k not in fields]
    if extras:
        rejections.append(f"attempt {attempt}: extra fields dropped: {sorted(extras)}")
    return StebContext(**values)


def essence_diff(original: SemanticGraph, perturbed: SemanticGraph) -> dict[str, dict[str, str]]:
    """Changed demographic / visit framing fields, old vs new."""
    diff: dict[str, dict[str, str]] = {}
    a, b = original.attributes.demographics, perturbed.attributes.demographics
    for field_name in ("age", "sex", "ethnicity", "occupation"):
        old, new = getattr(a, field_name), getattr(b, field_name)
        if old != new:
            diff[field_name] = {"from": str(old), "to": str(new)}
    old_episode = original.visit_event.visit_episode if original.visit_event else ""
    new_episode = perturbed.visit_event.visit_episode if perturbed.visit_event else ""
    if old_episode != new_episode:
        diff["visit_episode"] = {"from": old_episode, "to": new_episode}
    return diff


def rewritten_thoughts(original: SemanticGraph, perturbed: SemanticGraph) -> list[str]:
    before = {
        (node.id, i): ctx.thought
        for node in original.symptoms
        for i, ctx in enumerate(node.contexts)
    }
    out = []
    for node in perturbed.symptoms:
        for i, ctx in enumerate(node.contexts):
            if ctx.thought and before.get((node.id, i)) != ctx.thought:
                out.append(ctx.thought)
    return out


def align_mse(
    attrs: CaseAttributes,
    diff: dict[str, dict[str, str]],
    thoughts: list[str],
    gw: LlmGateway,
    cfg: PerturbConfig,
    domains: dict[str, list[str]],
) -> tuple[str, dict]:
    """Minimally edit the MSE paragraph to match perturbed demographics/themes.

    Skipped outright when nothing changed. The validator refuses outputs that
    drop any objective domain mentioned in the source.
    """
    source = attrs.test_results.get("mental_status", "")
    if (not diff and not thoughts) or not source.strip():
        return source, {"step": "mse", "skipped": "no changes to harmonize"}

    source_domains = _domains_present(source, domains)
    changes = "\n".join(f"{k}: {v['from']!r} -> {v['to']!r}" for k, v in sorted(diff.items()))
    rejections: list[str] = []
    for attempt in range(1, cfg.max_retries + 1):
        try:
            text = gw.call(
                "mse_align",
                {
                    "mental_status": source,
                    "changes": changes,
                    "thoughts": "\n".join(thoughts),
                    "attempt": str(attempt),
                },
                operator="perturb",
            )
        except GatewayError as exc:
            rejections.append(f"attempt {attempt}: gateway failure: {exc}")
            break
        candidate = text.strip()
        if not candidate:
            rejections.append(f"attempt {attempt}: empty rewrite")
            continue
        missing = source_domains - _domains_present(candidate, domains)
        if missing:
            rejections.append(f"attempt {attempt}: dropped domains {sorted(missing)}")
            continue
        return candidate, {"step": "mse", "attempts": attempt, "rejected": rejections}
    return source, {"step": "mse", "rejected": rejections, "fallback": "original kept"}


def _domains_present(text: str, domains: dict[str, list[str]]) -> set[str]:
    lowered = text.lower()
    return {name for name, keywords in domains.items() if any(k.lower() in lowered for k in keywords)}
