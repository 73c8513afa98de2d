"""Multiple-choice benchmark synthesis from spatial answers.

Candidates come from deterministic rule evaluation over semantic rasters (and
building sets for the change task); distractors are factor-based and seeded,
option order is shuffled per sample, and the whole pipeline is byte-stable
under a fixed seed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import geoquery as gq
from .raster import RleMask, rle_encode

RASTER_TASKS = ("existence", "coverage", "area", "ranking", "distance", "adjacency")
ALL_TASKS = RASTER_TASKS + ("building_change",)
BINARY_TASKS = {"existence", "ranking", "adjacency"}

# per-task sample shares mirroring the target benchmark composition
TASK_SHARES = {
    "coverage": 855, "area": 855, "distance": 129,
    "ranking": 855, "adjacency": 855, "building_change": 288,
}

DISTRACTOR_FACTORS = (0.5, 0.75, 1.5, 2.0)
FALLBACK_FACTORS = (0.25, 3.0, 4.0, 0.1, 5.0, 8.0, 10.0)

DEFAULT_TEMPLATES = {
    "existence": "Is there any {class} in the image?",
    "coverage": "What percentage of the image is covered by {class}?",
    "area": "What is the area of {class}?",
    "ranking": "Is {class1} larger than {class2}?",
    "distance": "What is the distance between {class1} and {class2}?",
    "adjacency": "Does {class1} border {class2}?",
    "building_change": "What percentage of buildings were destroyed?",
}


@dataclass(frozen=True)
class QuestionTemplate:
    task: str
    pattern: str

    def __post_init__(self):
        pair = "{class1}" in self.pattern and "{class2}" in self.pattern
        single = "{class}" in self.pattern
        if self.task in ("ranking", "distance", "adjacency"):
            if not pair:
                raise ValueError(f"{self.task} template needs {{class1}}/{{class2}} slots")
        elif self.task in ("existence", "coverage", "area") and not single:
            raise ValueError(f"{self.task} template needs a {{class}} slot")

    def render(self, **names) -> str:
        return self.pattern.format(**names)


def default_templates() -> dict:
    return {task: QuestionTemplate(task=task, pattern=pat)
            for task, pat in DEFAULT_TEMPLATES.items()}


@dataclass(frozen=True)
class BenchSample:
    id: str
    task: str
    question: str
    options: tuple            # ((letter, text), ...) in presentation order
    answer: str               # correct letter
    gt_masks: tuple           # ({"role", "image_index", "rle"}, ...)
    images: tuple             # ({"path", "modality", "timestamp"}, ...)
    source_answer: gq.SpatialAnswer
    source: dict = field(default_factory=dict)  # raster/buildings path + class ids

    def __post_init__(self):
        texts = [t for _, t in self.options]
        if len(set(texts)) != len(texts):
            raise ValueError("options must be pairwise distinct")
        expected = 2 if self.task in BINARY_TASKS else 4
        if len(self.options) != expected:
            raise ValueError(f"{self.task} samples need {expected} options")
        if self.answer not in {l for l, _ in self.options}:
            raise ValueError("answer letter must name an option")

    def correct_text(self) -> str:
        return dict(self.options)[self.answer]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "task": self.task,
            "question": self.question,
            "options": [{"letter": l, "text": t} for l, t in self.options],
            "answer": self.answer,
            "gt_masks": [dict(m) for m in self.gt_masks],
            "images": [dict(im) for im in self.images],
            "source_answer": self.source_answer.to_json(),
            "source": self.source,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BenchSample":
        return cls(
            id=obj["id"], task=obj["task"], question=obj["question"],
            options=tuple((o["letter"], o["text"]) for o in obj["options"]),
            answer=obj["answer"],
            gt_masks=tuple(dict(m) for m in obj["gt_masks"]),
            images=tuple(dict(im) for im in obj["images"]),
            source_answer=gq.SpatialAnswer.from_json(obj["source_answer"]),
            source=obj.get("source", {}),
        )


@dataclass(frozen=True)
class BenchStats:
    per_task: dict
    option_histogram: dict
    total: int

    def to_json(self) -> dict:
        return {"per_task": self.per_task, "option_histogram": self.option_histogram,
                "total": self.total}


# ---------------------------------------------------------------------------
# Answer rendering and distractors

def render_value(task: str, value: float) -> str:
    """Task-appropriate rounding: percents to 1 decimal, areas to 3 significant
    figures, distances to the nearest 10 meters."""
    if task in ("coverage", "building_change"):
        return f"{round(float(value), 1):.1f}%"
    if task == "area":
        v = float(value)
        if v == 0:
            return "0 m^2"
        sig = float(f"{v:.3g}")
        text = f"{sig:.0f}" if sig >= 100 else f"{sig:g}"
        return f"{text} m^2"
    if task == "distance":
        return f"{int(round(float(value) / 10.0) * 10)} m"
    raise ValueError(f"task {task} has no numeric rendering")


def make_options(task: str, answer: gq.SpatialAnswer, seed: int) -> tuple[tuple, str]:
    """Build the labeled option list and the correct letter.

    Binary tasks get {Yes, No}; numeric tasks get three distractors produced
    by scaling the true value with seeded factors, skipping factors whose
    rendering collides with an existing option. Presentation order is a
    seeded shuffle; letters follow the final order.
    """
    if not answer.valid:
        raise ValueError(f"cannot build options for invalid answer: {answer.reject_reason}")
    rng = np.random.default_rng(seed)
    if task in BINARY_TASKS:
        correct = "Yes" if answer.value else "No"
        texts = ["Yes", "No"]
        rng.shuffle(texts)
    else:
        correct = render_value(task, answer.value)
        factors = list(DISTRACTOR_FACTORS)
        rng.shuffle(factors)
        factors += list(FALLBACK_FACTORS)
        texts = [correct]
        for f in factors:
            if len(texts) == 4:
                break
            cand = render_value(task, answer.value * f)
            if cand not in texts:
                texts.append(cand)
        if len(texts) < 4:
            raise ValueError("could not build 4 distinct options")
        order = rng.permutation(4)
        texts = [texts[i] for i in order]
    letters = "ABCD"
    options = tuple((letters[i], t) for i, t in enumerate(texts))
    correct_letter = next(l for l, t in options if t == correct)
    return options, correct_letter


# ---------------------------------------------------------------------------
# Candidate generation

def _mask_entry(role: str, mask, image_index: int = 1) -> dict:
    return {"role": role, "image_index": image_index, "rle": rle_encode(mask).to_json()}


def _sample_seed(seed: int, sample_id: str) -> int:
    # stable per-sample stream independent of generation order
    h = 1469598103934665603
    for ch in f"{seed}/{sample_id}".encode():
        h = ((h ^ ch) * 1099511628211) % (1 << 64)
    return h


def generate_l1(raster: gq.SemanticRaster, templates: Optional[dict] = None,
                seed: int = 0, tasks: Optional[Sequence[str]] = None,
                raster_path: str = "", image_path: str = "") -> list[BenchSample]:
    """All valid template instantiations of the requested tasks on one raster.

    When `tasks` is omitted, 2-4 of the raster task types are drawn from the
    seed, mirroring the generation strategy the samples are modeled on.
    Invalid answers (failed significance filters) are dropped.
    """
    templates = templates or default_templates()
    rng = np.random.default_rng(seed)
    if tasks is None:
        k = int(rng.integers(2, 5))
        tasks = sorted(rng.choice(RASTER_TASKS, size=min(k, len(RASTER_TASKS)),
                                  replace=False).tolist())
    samples: list[BenchSample] = []
    classes = sorted(raster.present_classes())
    names = raster.class_names
    base = Path(raster_path).stem if raster_path else "raster"
    image_refs = ({"path": image_path or raster_path, "modality": "optical", "timestamp": "t1"},)

    def emit(task, sid, question, answer, gt_masks, class_ids):
        if not answer.valid:
            return
        options, letter = make_options(task, answer, _sample_seed(seed, sid))
        samples.append(BenchSample(
            id=sid, task=task, question=question, options=options, answer=letter,
            gt_masks=tuple(gt_masks), images=image_refs, source_answer=answer,
            source={"raster": raster_path, "classes": list(class_ids)}))

    for task in tasks:
        tpl = templates[task]
        if task in ("existence", "coverage", "area"):
            for cid in classes:
                answer = {"existence": gq.existence, "coverage": gq.coverage_percentage,
                          "area": gq.area}[task](raster, cid)
                emit(task, f"{base}-{task}-{cid}",
                     tpl.pattern.format(**{"class": names[cid]}), answer,
                     [_mask_entry("target", gq.class_mask(raster, cid))], [cid])
        elif task in ("ranking", "distance", "adjacency"):
            fn = {"ranking": gq.compare_pair, "distance": gq.min_distance,
                  "adjacency": gq.adjacency}[task]
            for i, ci in enumerate(classes):
                for cj in classes[i + 1:]:
                    answer = fn(raster, ci, cj)
                    emit(task, f"{base}-{task}-{ci}-{cj}",
                         tpl.pattern.format(class1=names[ci], class2=names[cj]), answer,
                         [_mask_entry("class1", gq.class_mask(raster, ci)),
                          _mask_entry("class2", gq.class_mask(raster, cj))],
                         [ci, cj])
    return samples


def generate_building_change(buildings: gq.BuildingSet, width: int, height: int,
                             seed: int = 0, source_path: str = "",
                             image_paths: tuple = ()) -> list[BenchSample]:
    """Building-change candidates from one footprint file (bi-temporal)."""
    answer, destroyed_mask = gq.building_change(buildings, width, height)
    if not answer.valid:
        return []
    base = Path(source_path).stem if source_path else "buildings"
    sid = f"{base}-building_change"
    options, letter = make_options("building_change", answer, _sample_seed(seed, sid))
    images = image_paths or (
        {"path": source_path, "modality": "optical", "timestamp": "t1"},
        {"path": source_path, "modality": "optical", "timestamp": "t2"},
    )
    return [BenchSample(
        id=sid, task="building_change",
        question=DEFAULT_TEMPLATES["building_change"], options=options, answer=letter,
        gt_masks=(_mask_entry("destroyed", destroyed_mask, image_index=2),),
        images=tuple(images), source_answer=answer,
        source={"buildings": source_path, "width": width, "height": height})]


# ---------------------------------------------------------------------------
# Assembly

def apportion(pools: dict, shares: dict = TASK_SHARES) -> dict:
    """Apportion samples across tasks, constrained by pool sizes, keeping the
    emitted proportions close to the target shares.

    Largest-remainder quotas are computed for every feasible total and the
    largest total whose worst per-task relative error stays under 5% wins
    (falling back to the overall best when no total clears that bar)."""
    tasks = [t for t in shares if pools.get(t)]
    if not tasks:
        return {}
    total_share = sum(shares[t] for t in tasks)
    frac = {t: shares[t] / total_share for t in tasks}
    # largest total for which every task can fill its quota
    t_max = min(int(len(pools[t]) / frac[t]) for t in tasks)
    t_max = max(t_max, len(tasks))

    def hamilton(total: int) -> dict:
        floors = {t: int(frac[t] * total) for t in tasks}
        remainder = total - sum(floors.values())
        by_frac = sorted(tasks, key=lambda t: (-(frac[t] * total - floors[t]), t))
        quotas = dict(floors)
        for t in by_frac:
            if remainder == 0:
                break
            if quotas[t] < len(pools[t]):
                quotas[t] += 1
                remainder -= 1
        return quotas

    best = None
    for total in range(t_max, max(len(tasks) - 1, t_max // 2 - 1), -1):
        quotas = hamilton(total)
        emitted = sum(quotas.values())
        if emitted == 0:
            continue
        err = max(abs(quotas[t] / emitted - frac[t]) / frac[t] for t in tasks)
        if err <= 0.05:
            return quotas
        if best is None or err < best[0]:
            best = (err, quotas)
    return best[1] if best else hamilton(t_max)


def select_samples(pools: dict, seed: int, shares: dict = TASK_SHARES) -> list[BenchSample]:
    """Seeded, proportion-matched draw from per-task candidate pools."""
    quotas = apportion(pools, shares)
    chosen: list[BenchSample] = []
    for task in sorted(quotas):
        pool = sorted(pools[task], key=lambda s: s.id)
        rng = np.random.default_rng(_sample_seed(seed, f"select-{task}"))
        idx = rng.choice(len(pool), size=quotas[task], replace=False)
        chosen.extend(pool[i] for i in sorted(idx.tolist()))
    return chosen


def assemble_benchmark(samples: Sequence[BenchSample], out_path: Union[str, Path]) -> BenchStats:
    """Write samples as JSON lines and report per-task and option-count stats.
    Every sample is re-verified against a fresh rule computation first."""
    if not samples:
        raise ValueError("no samples to assemble")
    for s in samples:
        reverify_sample(s)
    out_path = Path(out_path)
    with out_path.open("w") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json(), sort_keys=True) + "\n")
    per_task: dict = {}
    histogram: dict = {}
    for s in samples:
        per_task[s.task] = per_task.get(s.task, 0) + 1
        histogram[len(s.options)] = histogram.get(len(s.options), 0) + 1
    return BenchStats(per_task=per_task, option_histogram=histogram, total=len(samples))


def load_benchmark(path: Union[str, Path]) -> list[BenchSample]:
    samples = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            samples.append(BenchSample.from_json(json.loads(line)))
    return samples


def reverify_sample(sample: BenchSample) -> None:
    """Recompute the sample's answer from its source raster/buildings and check
    it matches the stored correct option. Raises AssertionError on mismatch."""
    src = sample.source
    if sample.task == "building_change":
        buildings = gq.BuildingSet.load(src["buildings"])
        fresh, _ = gq.building_change(buildings, src["width"], src["height"])
    else:
        raster = gq.SemanticRaster.load(src["raster"])
        ids = src["classes"]
        fn = {
            "existence": lambda: gq.existence(raster, ids[0]),
            "coverage": lambda: gq.coverage_percentage(raster, ids[0]),
            "area": lambda: gq.area(raster, ids[0]),
            "ranking": lambda: gq.compare_pair(raster, ids[0], ids[1]),
            "distance": lambda: gq.min_distance(raster, ids[0], ids[1]),
            "adjacency": lambda: gq.adjacency(raster, ids[0], ids[1]),
        }[sample.task]
        fresh = fn()
    assert fresh.valid, f"sample {sample.id}: fresh answer no longer valid"
    if sample.task in BINARY_TASKS:
        expected = "Yes" if fresh.value else "No"
    else:
        expected = render_value(sample.task, fresh.value)
    assert sample.correct_text() == expected, (
        f"sample {sample.id}: stored answer {sample.correct_text()!r} != fresh {expected!r}")
