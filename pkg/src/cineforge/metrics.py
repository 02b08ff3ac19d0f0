"""Evaluation protocol: narrative grounding (SVC, SC), retrieval precision
(Precision/Recall/F1, TCS, NL, PA) and overall quality (ESR, ARR, CQ),
aggregated into per-instruction rows with macro-averaged means.

F1 is averaged per instruction, never recomputed from mean P and mean R —
the harmonic mean of the averages is a different number.  TCS is the
duration of the best correctly ordered subsequence over the generated
total, computed by dynamic programming; a count-maximizing variant sits
behind a flag.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .errors import CineforgeError
from .identity import cosine
from .prompts import JUDGE_RUBRICS, RUBRIC_VERSION, judge_user
from .providers import CompletionProvider, CompletionRequest, TextEmbeddingProvider

JUDGE_METRICS = ("SC", "NL", "PA", "CQ")
METRIC_KEYS = ("SVC", "SC", "P", "R", "F1", "TCS", "NL", "PA", "ESR", "ARR", "CQ")


def svc(summaries, shots, embedder: TextEmbeddingProvider) -> float:
    """Mean cosine between each shot summary's text embedding and the shot's
    keyframe embedding; the embedder must emit vectors of the manifest's
    dimension."""
    if len(summaries) != len(shots):
        raise CineforgeError("svc needs exactly one summary per shot")
    if not shots:
        raise CineforgeError("svc needs at least one shot")
    total = 0.0
    for summary, shot in zip(summaries, shots):
        vec = embedder.embed(summary.text)
        if len(vec) != len(shot.keyframe_embedding):
            raise CineforgeError(
                f"embedder dimension {len(vec)} != keyframe dimension "
                f"{len(shot.keyframe_embedding)}")
        total += cosine(vec, shot.keyframe_embedding)
    return total / len(shots)


def retrieval_prf(predicted: set, gt: set) -> tuple[float, float, float]:
    """Shot-level precision/recall/F1 with the empty-set conventions:
    empty prediction scores P=1 against empty truth, 0 otherwise; empty
    truth scores R=1; F1 is 0 whenever P+R is 0."""
    predicted = set(predicted)
    gt = set(gt)
    hit = len(predicted & gt)
    if predicted:
        p = hit / len(predicted)
    else:
        p = 1.0 if not gt else 0.0
    r = hit / len(gt) if gt else 1.0
    f1 = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
    return p, r, f1


def tcs(predicted: list[tuple[str, float]], gt_order: list[str],
        mode: str = "duration") -> float:
    """Temporal correctness: duration of the best common subsequence of
    (predicted, gt) over the predicted total.

    mode="duration" maximizes the subsequence's duration directly;
    mode="count" maximizes its length first, breaking ties toward higher
    duration, and still reports the duration ratio.
    """
    if mode not in ("duration", "count"):
        raise CineforgeError(f"unknown tcs mode {mode!r}")
    if not predicted:
        return 0.0
    keys = [k for k, _ in predicted]
    if len(set(keys)) != len(keys):
        raise CineforgeError("duplicate refs within predicted_order")
    for key, dur in predicted:
        if dur <= 0:
            raise CineforgeError(f"non-positive duration for {key!r}")
    total = sum(d for _, d in predicted)

    n, m = len(predicted), len(gt_order)
    # dp cells: duration mode -> best duration; count mode -> (count, duration)
    zero = 0.0 if mode == "duration" else (0, 0.0)
    dp = [[zero] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            best = max(dp[i - 1][j], dp[i][j - 1])
            if keys[i - 1] == gt_order[j - 1]:
                dur = predicted[i - 1][1]
                take = (dp[i - 1][j - 1] + dur if mode == "duration"
                        else (dp[i - 1][j - 1][0] + 1, dp[i - 1][j - 1][1] + dur))
                best = max(best, take)
            dp[i][j] = best
    matched = dp[n][m] if mode == "duration" else dp[n][m][1]
    return matched / total


_NUMBER = re.compile(r"-?\d+(?:\.\d+)?")


@dataclass
class JudgeArtifacts:
    instruction_text: str
    script_digest: str
    rendered_summary: str


def judge_scores(artifacts: JudgeArtifacts, judge: CompletionProvider) -> tuple[dict, list[str]]:
    """One judge call per metric against the fixed rubrics; responses parse
    as numbers clamped to [1, 10], with one retry before the metric is
    recorded missing and flagged."""
    scores: dict[str, float | None] = {}
    flags: list[str] = []
    for metric in JUDGE_METRICS:
        request = CompletionRequest(
            JUDGE_RUBRICS[metric],
            judge_user(metric, artifacts.instruction_text, artifacts.script_digest,
                       artifacts.rendered_summary))
        value = None
        for attempt in range(2):
            text = judge.complete(request).text
            match = _NUMBER.search(text)
            if match:
                value = float(match.group())
                break
            request = CompletionRequest(
                JUDGE_RUBRICS[metric],
                judge_user(metric, artifacts.instruction_text, artifacts.script_digest,
                           artifacts.rendered_summary)
                + "\nYour previous reply held no number. Reply with the number only.")
        if value is None:
            flags.append(f"{metric}: no numeric judge response after retry; recorded missing")
            scores[metric] = None
            continue
        clamped = min(10.0, max(1.0, value))
        if clamped != value:
            flags.append(f"{metric}: judge score {value} clamped to {clamped}")
        scores[metric] = clamped
    return scores, flags


def esr(outcomes) -> float:
    """Percentage of sessions processed without a system error; justified
    rejections count as processed."""
    statuses = [o if isinstance(o, str) else o.status for o in outcomes]
    if not statuses:
        raise CineforgeError("esr needs at least one outcome")
    ok = sum(1 for s in statuses if s != "error")
    return 100.0 * ok / len(statuses)


def arr(adversarial_outcomes) -> float:
    """Percentage of adversarial instructions that ended in an explicit
    rejection; errors do not count as refusals."""
    statuses = [o if isinstance(o, str) else o.status for o in adversarial_outcomes]
    if not statuses:
        raise CineforgeError("arr needs at least one adversarial outcome")
    refused = sum(1 for s in statuses if s == "rejected")
    return 100.0 * refused / len(statuses)


# ---------------------------------------------------------------------------
# batch evaluation


@dataclass
class GroundTruth:
    instruction_id: str
    gt_shots: set[str]
    gt_order: list[str]
    adversarial: bool = False

    def __post_init__(self):
        if self.adversarial and self.gt_shots:
            raise CineforgeError(
                f"{self.instruction_id}: adversarial entries must have empty gt_shots")
        if sorted(set(self.gt_order)) != sorted(self.gt_shots) \
                or len(self.gt_order) != len(set(self.gt_order)):
            raise CineforgeError(
                f"{self.instruction_id}: gt_order must order gt_shots without repeats")


def load_ground_truth(path) -> list[GroundTruth]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return [GroundTruth(g["instruction_id"], set(g.get("gt_shots", [])),
                        list(g.get("gt_order", [])), bool(g.get("adversarial", False)))
            for g in doc["instructions"]]


@dataclass
class RunRecord:
    """One executed instruction, as the evaluator sees it."""

    instruction_id: str
    instruction_text: str
    status: str  # success | rejected | error
    script_entries: list[tuple[str, float]] = field(default_factory=list)  # (key, duration)
    svc_pairs: list = field(default_factory=list)  # (ShotSummary, Shot) across sources
    rendered_summary: str = ""


@dataclass
class EvaluationReport:
    rows: list[dict]
    aggregates: dict
    flags: list[str]
    rubric_version: str = RUBRIC_VERSION
    tcs_mode: str = "duration"

    def to_dict(self) -> dict:
        return {
            "rubric_version": self.rubric_version,
            "tcs_mode": self.tcs_mode,
            "rows": self.rows,
            "aggregates": self.aggregates,
            "flags": self.flags,
        }


def _round(value: float | None) -> float | None:
    return None if value is None else round(value, 6)


def evaluate(runs: list[RunRecord], gts: list[GroundTruth],
             embedder: TextEmbeddingProvider | None = None,
             judge: CompletionProvider | None = None,
             tcs_mode: str = "duration") -> EvaluationReport:
    """Compute every applicable metric per instruction and macro-average.

    Retrieval metrics are skipped for adversarial entries; judge metrics
    apply only to successful runs; ESR covers every run and ARR the
    adversarial subset.
    """
    if not runs:
        raise CineforgeError("evaluate needs at least one run")
    gt_by_id = {g.instruction_id: g for g in gts}
    missing = [r.instruction_id for r in runs if r.instruction_id not in gt_by_id]
    if missing:
        raise CineforgeError(f"runs without ground truth: {missing}")

    rows = []
    flags: list[str] = []
    for run in runs:
        gt = gt_by_id[run.instruction_id]
        row: dict = {"instruction_id": run.instruction_id, "status": run.status,
                     "adversarial": gt.adversarial}
        for key in ("SVC", "SC", "P", "R", "F1", "TCS", "NL", "PA", "CQ"):
            row[key] = None

        if run.svc_pairs and embedder is not None:
            summaries = [s for s, _ in run.svc_pairs]
            shots = [sh for _, sh in run.svc_pairs]
            row["SVC"] = _round(svc(summaries, shots, embedder))

        if not gt.adversarial:
            predicted_keys = {k for k, _ in run.script_entries}
            p, r, f1 = retrieval_prf(predicted_keys, gt.gt_shots)
            row["P"], row["R"], row["F1"] = _round(p), _round(r), _round(f1)
            row["TCS"] = _round(tcs(run.script_entries, gt.gt_order, mode=tcs_mode))

        if run.status == "success" and run.script_entries and judge is not None:
            digest = " -> ".join(k for k, _ in run.script_entries)
            scores, judge_flags = judge_scores(
                JudgeArtifacts(run.instruction_text, digest, run.rendered_summary), judge)
            for metric, value in scores.items():
                row[metric] = _round(value)
            flags.extend(f"{run.instruction_id}: {f}" for f in judge_flags)
        rows.append(row)

    aggregates: dict = {}
    for key in ("SVC", "SC", "P", "R", "F1", "TCS", "NL", "PA", "CQ"):
        values = [row[key] for row in rows if row[key] is not None]
        aggregates[key] = _round(sum(values) / len(values)) if values else None
    aggregates["ESR"] = _round(esr([r.status for r in runs]))
    adversarial = [r.status for r in runs if gt_by_id[r.instruction_id].adversarial]
    aggregates["ARR"] = _round(arr(adversarial)) if adversarial else None
    return EvaluationReport(rows=rows, aggregates=aggregates, flags=flags,
                            tcs_mode=tcs_mode)


def report_markdown(report: EvaluationReport) -> str:
    keys = ("SVC", "SC", "P", "R", "F1", "TCS", "NL", "PA", "CQ")
    lines = ["| instruction | status | adv | " + " | ".join(keys) + " |",
             "|---" * (len(keys) + 3) + "|"]
    def fmt(v):
        return "-" if v is None else f"{v:.4f}"
    for row in report.rows:
        cells = [row["instruction_id"], row["status"], "yes" if row["adversarial"] else "no"]
        cells += [fmt(row[k]) for k in keys]
        lines.append("| " + " | ".join(cells) + " |")
    agg = report.aggregates
    lines.append("| mean | | | " + " | ".join(fmt(agg[k]) for k in keys) + " |")
    lines.append("")
    lines.append(f"ESR: {fmt(agg['ESR'])}%  ARR: {fmt(agg['ARR'])}%")
    return "\n".join(lines) + "\n"


def report_csv(report: EvaluationReport) -> str:
    keys = ("SVC", "SC", "P", "R", "F1", "TCS", "NL", "PA", "CQ")
    lines = ["instruction_id,status,adversarial," + ",".join(keys)]
    def fmt(v):
        return "" if v is None else f"{v:.6f}"
    for row in report.rows:
        cells = [row["instruction_id"], row["status"], str(row["adversarial"]).lower()]
        cells += [fmt(row[k]) for k in keys]
        lines.append(",".join(cells))
    agg = report.aggregates
    lines.append("aggregate_mean,,," + ",".join(fmt(agg[k]) for k in keys))
    lines.append(f"ESR,{fmt(agg['ESR'])}")
    lines.append(f"ARR,{fmt(agg['ARR'])}")
    return "\n".join(lines) + "\n"
