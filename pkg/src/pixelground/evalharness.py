"""Dual-metric evaluation: option extraction, per-task and macro accuracy,
grounding IoU against ground-truth masks, and the IoU-vs-correctness
correlation analysis.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .benchforge import BenchSample, load_benchmark
from .raster import RleMask, rle_decode

_OPTION_RE = re.compile(r"\b[A-D]\b")


class ConstantColumnError(ValueError):
    """Correlation is undefined when either variable is constant."""


class ResponseSchemaError(ValueError):
    pass


@dataclass(frozen=True)
class EvalRecord:
    sample_id: str
    task: str
    predicted: Optional[str]       # letter or None
    correct: bool
    mean_iou: Optional[float]      # present iff the response carried >= 1 mask

    def to_json(self) -> dict:
        return {"sample_id": self.sample_id, "task": self.task,
                "predicted": self.predicted, "correct": self.correct,
                "mean_iou": self.mean_iou}


@dataclass(frozen=True)
class EvalReport:
    per_task_accuracy: dict
    macro_accuracy: float
    mean_iou: Optional[float]
    mean_iou_correct: Optional[float]
    mean_iou_incorrect: Optional[float]
    pearson_r: Optional[float]
    sample_counts: dict

    def to_json(self) -> dict:
        return {
            "per_task_accuracy": self.per_task_accuracy,
            "macro_accuracy": self.macro_accuracy,
            "mean_iou": self.mean_iou,
            "mean_iou_correct": self.mean_iou_correct,
            "mean_iou_incorrect": self.mean_iou_incorrect,
            "pearson_r": self.pearson_r,
            "sample_counts": self.sample_counts,
        }

    def to_table(self) -> str:
        lines = [f"{'task':<18}{'n':>6}{'accuracy':>10}"]
        for task in sorted(self.per_task_accuracy):
            lines.append(f"{task:<18}{self.sample_counts[task]:>6}"
                         f"{self.per_task_accuracy[task]:>10.1f}")
        lines.append(f"{'macro':<18}{sum(self.sample_counts.values()):>6}"
                     f"{self.macro_accuracy:>10.1f}")
        if self.mean_iou is not None:
            lines.append(f"mean IoU          {self.mean_iou:.4f}")
        if self.mean_iou_correct is not None:
            lines.append(f"mean IoU correct  {self.mean_iou_correct:.4f}")
        if self.mean_iou_incorrect is not None:
            lines.append(f"mean IoU incorrect {self.mean_iou_incorrect:.4f}")
        if self.pearson_r is not None:
            lines.append(f"pearson r         {self.pearson_r:.4f}")
        return "\n".join(lines)


def extract_option(response: str) -> Optional[str]:
    """First standalone A-D token in the response; None when absent (such
    responses score as incorrect)."""
    m = _OPTION_RE.search(response)
    return m.group(0) if m else None


def mask_iou(a: RleMask, b: RleMask) -> float:
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError("IoU requires masks with identical dimensions")
    pa = rle_decode(a).pixels
    pb = rle_decode(b).pixels
    union = int((pa | pb).sum())
    if union == 0:
        return 1.0  # both empty: identical
    return int((pa & pb).sum()) / union


def grounding_iou(pred_masks: Sequence[RleMask], gt_masks: Sequence[RleMask]) -> float:
    """Greedy max-IoU matching between predicted and ground-truth masks;
    unmatched ground truths contribute 0; mean over ground-truth masks."""
    if not gt_masks:
        raise ValueError("at least one ground-truth mask required")
    pairs = [(mask_iou(p, g), gi, pi)
             for gi, g in enumerate(gt_masks) for pi, p in enumerate(pred_masks)]
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_g: set = set()
    used_p: set = set()
    total = 0.0
    for iou, gi, pi in pairs:
        if gi in used_g or pi in used_p:
            continue
        used_g.add(gi)
        used_p.add(pi)
        total += iou
    return total / len(gt_masks)


def score_answers(records: Sequence[EvalRecord]) -> tuple[dict, float, dict]:
    """Per-task accuracy (exact letter match) and the unweighted macro mean."""
    if not records:
        raise ValueError("no records to score")
    hits: dict = {}
    counts: dict = {}
    for r in records:
        counts[r.task] = counts.get(r.task, 0) + 1
        hits[r.task] = hits.get(r.task, 0) + (1 if r.correct else 0)
    per_task = {t: 100.0 * hits[t] / counts[t] for t in counts}
    macro = sum(per_task.values()) / len(per_task)
    return per_task, macro, counts


def iou_correlation(records: Sequence[EvalRecord]) -> tuple[float, float, float]:
    """Group means and Pearson r between correctness (0/1) and per-sample mean
    IoU, over records that carry masks. Point-biserial form of Pearson."""
    with_iou = [r for r in records if r.mean_iou is not None]
    if len(with_iou) < 2:
        raise ValueError("need at least 2 records with masks")
    x = np.array([1.0 if r.correct else 0.0 for r in with_iou])
    y = np.array([r.mean_iou for r in with_iou])
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ConstantColumnError("correlation undefined for a constant column")
    mean_correct = float(y[x == 1].mean()) if (x == 1).any() else float("nan")
    mean_incorrect = float(y[x == 0].mean()) if (x == 0).any() else float("nan")
    xc = x - x.mean()
    yc = y - y.mean()
    r = float((xc * yc).sum() / np.sqrt((xc ** 2).sum() * (yc ** 2).sum()))
    return mean_correct, mean_incorrect, r


# ---------------------------------------------------------------------------
# Full-file evaluation

def _response_masks(resp: dict) -> list[tuple[int, RleMask]]:
    """(image_index, mask) pairs from a response record. Trace records carry
    seg events with image indices; plain responses may carry a bare mask list
    (image index defaults to 1)."""
    out = []
    if "events" in resp:
        for e in resp["events"]:
            if e.get("type") == "seg":
                idx = max(int(e.get("image_index", 1)), 1)
                out.append((idx, RleMask.from_json(e["mask"])))
    elif "masks" in resp:
        for m in resp["masks"]:
            if "rle" in m:  # wrapped form with an explicit image index
                out.append((max(int(m.get("image_index", 1)), 1),
                            RleMask.from_json(m["rle"])))
            else:
                out.append((1, RleMask.from_json(m)))
    return out


def _response_text(resp: dict) -> str:
    if "response" in resp:
        return resp["response"]
    if "answer" in resp:
        return resp["answer"]
    raise ResponseSchemaError("response record needs a 'response' or 'answer' field")


def evaluate_records(samples: Sequence[BenchSample], responses: dict) -> tuple[list[EvalRecord], EvalReport]:
    """Score responses (keyed by sample id) against benchmark samples."""
    records: list[EvalRecord] = []
    for s in samples:
        resp = responses.get(s.id)
        if resp is None:
            records.append(EvalRecord(sample_id=s.id, task=s.task, predicted=None,
                                      correct=False, mean_iou=None))
            continue
        letter = extract_option(_response_text(resp))
        correct = letter == s.answer
        pred_masks = _response_masks(resp)
        mean_iou = None
        if pred_masks:
            # IoU only between masks referencing the same image index
            gt_by_img: dict = {}
            for m in s.gt_masks:
                gt_by_img.setdefault(int(m.get("image_index", 1)), []).append(
                    RleMask.from_json(m["rle"]))
            total, n_gt = 0.0, 0
            for img, gts in gt_by_img.items():
                preds = [pm for idx, pm in pred_masks if max(idx, 1) == img]
                total += grounding_iou(preds, gts) * len(gts)
                n_gt += len(gts)
            mean_iou = total / n_gt if n_gt else None
        records.append(EvalRecord(sample_id=s.id, task=s.task, predicted=letter,
                                  correct=correct, mean_iou=mean_iou))
    per_task, macro, counts = score_answers(records)
    with_iou = [r for r in records if r.mean_iou is not None]
    mean_iou = mean_c = mean_i = pearson = None
    if with_iou:
        mean_iou = float(np.mean([r.mean_iou for r in with_iou]))
        try:
            mean_c, mean_i, pearson = iou_correlation(records)
        except (ValueError, ConstantColumnError):
            corr = [r.mean_iou for r in with_iou if r.correct]
            inc = [r.mean_iou for r in with_iou if not r.correct]
            mean_c = float(np.mean(corr)) if corr else None
            mean_i = float(np.mean(inc)) if inc else None
    report = EvalReport(per_task_accuracy=per_task, macro_accuracy=macro,
                        mean_iou=mean_iou, mean_iou_correct=mean_c,
                        mean_iou_incorrect=mean_i, pearson_r=pearson,
                        sample_counts=counts)
    return records, report


def load_responses(path: Union[str, Path]) -> dict:
    """JSON-lines responses keyed by sample id. Raises ResponseSchemaError
    naming the offending line on malformed input."""
    responses: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ResponseSchemaError(f"line {lineno}: not valid JSON ({exc})") from exc
        if not isinstance(obj, dict) or "id" not in obj:
            raise ResponseSchemaError(f"line {lineno}: response record needs an 'id' field")
        if "response" not in obj and "answer" not in obj:
            raise ResponseSchemaError(
                f"line {lineno}: response record needs a 'response' or 'answer' field")
        responses[obj["id"]] = obj
    return responses


def evaluate_files(bench_path: Union[str, Path], responses_path: Union[str, Path]) -> tuple[list[EvalRecord], EvalReport]:
    samples = load_benchmark(bench_path)
    responses = load_responses(responses_path)
    return evaluate_records(samples, responses)
