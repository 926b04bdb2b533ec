"""Cross-validated comparison of training strategies.

Four ways to build the training input are compared with identical models:
train on all samples, one random sample, the linear average, and the learned
connectional template (CBT). Regression uses the graph GAN cascade, diagnosis
uses the attention classifier.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .classification import ClassifierConfig, predict_proba, train_classifier
from .evolution import EvolutionHyperparams, predict_trajectory, train_cascade
from .graph_core import Population, Trajectory, mean_absolute_error
from .seeding import derive_seed
from .templates import TemplateConfig, estimate_cbt, linear_average_template, random_one_shot_select

log = logging.getLogger(__name__)


class TooFewSamples(ValueError):
    pass


class SingleClassLabels(ValueError):
    pass


class Strategy(str, Enum):
    TRAIN_ON_ALL = "all"
    RANDOM_ONE_SHOT = "random"
    LINEAR_AVERAGE_ONE_SHOT = "avg"
    CBT_ONE_SHOT = "cbt"

    @property
    def title(self) -> str:
        return _TITLES[self]


_TITLES = {
    Strategy.TRAIN_ON_ALL: "Train on all",
    Strategy.RANDOM_ONE_SHOT: "Random one-shot",
    Strategy.LINEAR_AVERAGE_ONE_SHOT: "Linear average one-shot",
    Strategy.CBT_ONE_SHOT: "CBT one-shot",
}


@dataclass(frozen=True)
class StrategySpec:
    kind: Strategy
    repeats: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", Strategy(self.kind))
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    @classmethod
    def default(cls, kind) -> "StrategySpec":
        kind = Strategy(kind)
        return cls(kind, 20 if kind is Strategy.RANDOM_ONE_SHOT else 1)


def parse_strategies(text: str) -> list[StrategySpec]:
    """``"all,cbt,avg,random"`` -> default specs, in the given order."""
    return [StrategySpec.default(s.strip()) for s in text.split(",") if s.strip()]


ALL_STRATEGIES = [StrategySpec.default(s) for s in Strategy]


# ---------------------------------------------------------------------------
# folds


@dataclass(frozen=True)
class FoldSplit:
    k: int
    train: tuple
    test: tuple
    seed: int

    def __iter__(self):
        return iter(zip(self.train, self.test))


def kfold_split(n: int, labels: Optional[Sequence] = None, k: int = 5, seed: int = 0) -> FoldSplit:
    """Shuffled k-fold partition, stratified when ``labels`` are given.

    Indices are shuffled within each class, concatenated class by class and
    dealt round-robin to the folds, so fold sizes differ by at most one and
    each class is spread as evenly as its count allows.
    """
    if k < 1 or n < k:
        raise TooFewSamples(f"cannot split {n} samples into {k} folds")
    rng = np.random.default_rng(seed)
    if labels is None:
        order = list(rng.permutation(n))
    else:
        if len(labels) != n:
            raise ValueError("labels must have length n")
        order = []
        for c in sorted(set(labels), key=str):
            idx = [i for i in range(n) if labels[i] == c]
            order.extend(np.asarray(idx)[rng.permutation(len(idx))].tolist())
    tests = [sorted(int(i) for i in order[f::k]) for f in range(k)]
    trains = [sorted(set(range(n)) - set(t)) for t in tests]
    return FoldSplit(k, tuple(tuple(t) for t in trains), tuple(tuple(t) for t in tests), seed)


# ---------------------------------------------------------------------------
# metrics


def auc_score(scores, labels, positive_class) -> Optional[float]:
    """Mann-Whitney AUC of positive-class scores; ties count one half.

    Returns None when only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.array([l == positive_class for l in labels])
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def classification_metrics(predictions, scores, labels, positive_class) -> dict:
    preds = list(predictions)
    labels = list(labels)
    if not labels or len(preds) != len(labels) or len(scores) != len(labels):
        raise ValueError("predictions, scores and labels must be aligned and nonempty")
    tp = sum(p == positive_class and l == positive_class for p, l in zip(preds, labels))
    fn = sum(p != positive_class and l == positive_class for p, l in zip(preds, labels))
    tn = sum(p != positive_class and l != positive_class for p, l in zip(preds, labels))
    fp = sum(p == positive_class and l != positive_class for p, l in zip(preds, labels))
    return {
        "accuracy": (tp + tn) / len(labels),
        "sensitivity": tp / (tp + fn) if tp + fn else None,
        "specificity": tn / (tn + fp) if tn + fp else None,
        "auc": auc_score(scores, labels, positive_class),
    }


def _mean_defined(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def _average_records(records: Sequence[dict]) -> dict:
    return {key: _mean_defined([r[key] for r in records]) for key in records[0]}


# ---------------------------------------------------------------------------
# leakage audit


class TemplateAudit:
    """Records which dataset indices reached a template estimator, per fold."""

    def __init__(self):
        self.seen: dict[int, set] = {}

    def hook(self, fold: int) -> Callable[[Sequence[int]], None]:
        def record(indices):
            self.seen.setdefault(fold, set()).update(int(i) for i in indices)

        return record

    def check(self, split: FoldSplit) -> None:
        for f, test in enumerate(split.test):
            leaked = self.seen.get(f, set()) & set(test)
            if leaked:
                raise AssertionError(f"fold {f}: test indices {sorted(leaked)} reached a template estimator")


# ---------------------------------------------------------------------------
# reports


def _fmt(v, digits=3):
    return "n/a" if v is None else f"{v:.{digits}f}"


@dataclass
class RegressionReport:
    """MAE per follow-up timepoint, per fold, per strategy."""

    timepoints: int
    folds: int
    fold_mae: dict = field(default_factory=dict)  # strategy -> folds x T
    repeat_mae: dict = field(default_factory=dict)  # strategy -> folds x repeats x T
    meta: dict = field(default_factory=dict)

    def mean(self, strategy) -> np.ndarray:
        return np.mean(self.fold_mae[Strategy(strategy).value], axis=0)

    def std(self, strategy) -> np.ndarray:
        return np.std(self.fold_mae[Strategy(strategy).value], axis=0)

    def to_dict(self) -> dict:
        return {
            "task": "regression",
            "timepoints": self.timepoints,
            "folds": self.folds,
            "meta": self.meta,
            "strategies": {
                s: {
                    "title": Strategy(s).title,
                    "fold_mae": np.asarray(v).tolist(),
                    "mean": self.mean(s).tolist(),
                    "std": self.std(s).tolist(),
                    "repeat_mae": np.asarray(self.repeat_mae[s]).tolist(),
                }
                for s, v in self.fold_mae.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionReport":
        rep = cls(d["timepoints"], d["folds"], meta=d.get("meta", {}))
        for s, v in d["strategies"].items():
            rep.fold_mae[s] = np.asarray(v["fold_mae"])
            rep.repeat_mae[s] = np.asarray(v["repeat_mae"])
        return rep

    def render(self) -> str:
        cols = [f"t{i + 1}" for i in range(self.timepoints)]
        lines = [
            "| Method | " + " | ".join(cols) + " |",
            "|---|" + "---|" * len(cols),
        ]
        for s in self.fold_mae:
            cells = [f"{m:.3f} ± {sd:.4f}" for m, sd in zip(self.mean(s), self.std(s))]
            lines.append(f"| {Strategy(s).title} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"


CLASSIFICATION_METRICS = ("accuracy", "sensitivity", "specificity", "auc")


@dataclass
class ClassificationReport:
    """Accuracy, sensitivity, specificity and AUC per fold, per strategy."""

    folds: int
    positive_class: object
    fold_metrics: dict = field(default_factory=dict)  # strategy -> [metric dict per fold]
    meta: dict = field(default_factory=dict)
    # strategy -> per fold {"scores": [...], "labels": [...]}, pooled over repeats
    test_scores: dict = field(default_factory=dict)

    def mean(self, strategy) -> dict:
        return _average_records(self.fold_metrics[Strategy(strategy).value])

    def to_dict(self) -> dict:
        return {
            "task": "classification",
            "folds": self.folds,
            "positive_class": self.positive_class,
            "meta": self.meta,
            "strategies": {
                s: {
                    "title": Strategy(s).title,
                    "fold_metrics": v,
                    "mean": self.mean(s),
                    "test_scores": self.test_scores.get(s, []),
                }
                for s, v in self.fold_metrics.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassificationReport":
        rep = cls(d["folds"], d["positive_class"], meta=d.get("meta", {}))
        for s, v in d["strategies"].items():
            rep.fold_metrics[s] = v["fold_metrics"]
            rep.test_scores[s] = v.get("test_scores", [])
        return rep

    def render(self) -> str:
        lines = ["| Method | Accuracy | Sensitivity | Specificity | AUC |", "|---|---|---|---|---|"]
        for s in self.fold_metrics:
            m = self.mean(s)
            lines.append(f"| {Strategy(s).title} | " + " | ".join(_fmt(m[k], 2) for k in CLASSIFICATION_METRICS) + " |")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# regression protocol


def _slice(trajectories, indices, t) -> Population:
    return Population([trajectories[i].states[t] for i in indices])


def _template_cfg(cfg: TemplateConfig, seed: int) -> TemplateConfig:
    return replace(cfg, rng_seed=seed)


def cbt_trajectory(trajectories, indices, cfg: TemplateConfig, seed: int, audit=None) -> Trajectory:
    """Per-timepoint templates, each estimated independently from ``indices`` only."""
    steps = len(trajectories[indices[0]])
    return Trajectory(
        [
            estimate_cbt(_slice(trajectories, indices, t), _template_cfg(cfg, derive_seed(seed, "cbt", t)), audit, indices)
            for t in range(steps)
        ],
        subject_id="cbt",
    )


def average_trajectory(trajectories, indices) -> Trajectory:
    steps = len(trajectories[indices[0]])
    return Trajectory(
        [linear_average_template(_slice(trajectories, indices, t)) for t in range(steps)], subject_id="average"
    )


def evaluate_cascade(model, trajectories, indices) -> np.ndarray:
    """Mean MAE over test subjects, one value per follow-up."""
    errs = []
    for i in indices:
        preds = predict_trajectory(model, trajectories[i].states[0])
        errs.append([mean_absolute_error(p, s) for p, s in zip(preds, trajectories[i].states[1:])])
    return np.mean(errs, axis=0)


def run_regression_benchmark(
    trajectories: Sequence[Trajectory],
    strategies: Sequence[StrategySpec] = ALL_STRATEGIES,
    hp: Optional[EvolutionHyperparams] = None,
    folds: Optional[FoldSplit] = None,
    template_cfg: Optional[TemplateConfig] = None,
    seed: int = 0,
    audit: Optional[TemplateAudit] = None,
) -> RegressionReport:
    """Cross-validated follow-up MAE for each strategy.

    Every model and template seed is derived from ``seed`` (per fold and
    repeat); the ``rng_seed`` fields of ``hp`` and ``template_cfg`` are ignored.
    """
    hp = hp or EvolutionHyperparams()
    template_cfg = template_cfg or TemplateConfig()
    trajectories = list(trajectories)
    folds = folds or kfold_split(len(trajectories), k=5, seed=derive_seed(seed, "folds"))
    steps = len(trajectories[0]) - 1
    report = RegressionReport(steps, folds.k)
    for spec in strategies:
        report.fold_mae[spec.kind.value] = []
        report.repeat_mae[spec.kind.value] = []

    for f, (train, test) in enumerate(folds):
        train = list(train)
        hook = audit.hook(f) if audit is not None else None
        for spec in strategies:
            runs = []
            for rep in range(spec.repeats):
                if spec.kind is Strategy.TRAIN_ON_ALL:
                    data = [trajectories[i] for i in train]
                elif spec.kind is Strategy.RANDOM_ONE_SHOT:
                    pick = random_one_shot_select(len(train), derive_seed(seed, "random", f, rep))
                    data = [trajectories[train[pick]]]
                elif spec.kind is Strategy.LINEAR_AVERAGE_ONE_SHOT:
                    if hook is not None:
                        hook(train)
                    data = [average_trajectory(trajectories, train)]
                else:
                    data = [cbt_trajectory(trajectories, train, template_cfg, derive_seed(seed, "cbt", f, rep), hook)]
                model = train_cascade(data, replace(hp, rng_seed=derive_seed(seed, "cascade", f, rep)))
                runs.append(evaluate_cascade(model, trajectories, test))
            log.info("fold %d %s: %s", f, spec.kind.value, np.mean(runs, axis=0))
            report.repeat_mae[spec.kind.value].append(np.asarray(runs).tolist())
            report.fold_mae[spec.kind.value].append(np.mean(runs, axis=0).tolist())
    for s in report.fold_mae:
        report.fold_mae[s] = np.asarray(report.fold_mae[s])
    return report


def stability_study(
    trajectories: Sequence[Trajectory],
    hp: Optional[EvolutionHyperparams] = None,
    template_cfg: Optional[TemplateConfig] = None,
    runs: int = 20,
    seed: int = 0,
    folds: Optional[FoldSplit] = None,
) -> dict:
    """Spread of test MAE over random one-shot draws vs reseeded CBT runs.

    Uses the first fold. Run j of either arm trains its cascade with seed j;
    the random arm also draws training subject j, the CBT arm re-estimates its
    templates with seed j. Test MAE is averaged over follow-ups.
    """
    hp = hp or EvolutionHyperparams()
    template_cfg = template_cfg or TemplateConfig()
    trajectories = list(trajectories)
    folds = folds or kfold_split(len(trajectories), k=5, seed=derive_seed(seed, "folds"))
    train, test = list(folds.train[0]), list(folds.test[0])
    random_mae, cbt_mae = [], []
    for j in range(runs):
        run_hp = replace(hp, rng_seed=derive_seed(seed, "cascade", j))
        pick = random_one_shot_select(len(train), derive_seed(seed, "random", j))
        random_mae.append(float(evaluate_cascade(train_cascade([trajectories[train[pick]]], run_hp), trajectories, test).mean()))
        cbt = cbt_trajectory(trajectories, train, template_cfg, derive_seed(seed, "cbt", j))
        cbt_mae.append(float(evaluate_cascade(train_cascade([cbt], run_hp), trajectories, test).mean()))
    return {
        "random_mae": random_mae,
        "cbt_mae": cbt_mae,
        "random_std": float(np.std(random_mae)),
        "cbt_std": float(np.std(cbt_mae)),
    }


# ---------------------------------------------------------------------------
# classification protocol


def _evaluate_classifier(model, pop: Population, test, positive_class) -> dict:
    graphs = [pop.members[i] for i in test]
    labels = [pop.labels[i] for i in test]
    proba = predict_proba(model, graphs)
    second = model.classes[1]
    preds = [second if p1 > 0.5 else model.classes[0] for p1 in proba[:, 1]]
    scores = proba[:, model.classes.index(positive_class)]
    return classification_metrics(preds, scores, labels, positive_class), scores.tolist(), labels


def run_classification_benchmark(
    pop: Population,
    strategies: Sequence[StrategySpec] = ALL_STRATEGIES,
    cfg: Optional[ClassifierConfig] = None,
    folds: Optional[FoldSplit] = None,
    template_cfg: Optional[TemplateConfig] = None,
    positive_class=1,
    seed: int = 0,
    audit: Optional[TemplateAudit] = None,
) -> ClassificationReport:
    """Cross-validated accuracy, sensitivity, specificity and AUC per strategy.

    Seeds are derived from ``seed`` as in :func:`run_regression_benchmark`.
    """
    if pop.labels is None:
        raise SingleClassLabels("classification needs a labelled population")
    classes = tuple(sorted(set(pop.labels), key=str))
    if len(classes) != 2:
        raise SingleClassLabels(f"need exactly two classes, found {classes}")
    if positive_class not in classes:
        raise ValueError(f"positive class {positive_class!r} not among {classes}")
    cfg = cfg or ClassifierConfig()
    template_cfg = template_cfg or TemplateConfig()
    folds = folds or kfold_split(len(pop), pop.labels, k=5, seed=derive_seed(seed, "folds"))
    report = ClassificationReport(folds.k, positive_class)
    for spec in strategies:
        report.fold_metrics[spec.kind.value] = []
        report.test_scores[spec.kind.value] = []

    for f, (train, test) in enumerate(folds):
        by_class = {c: [i for i in train if pop.labels[i] == c] for c in classes}
        hook = audit.hook(f) if audit is not None else None
        for spec in strategies:
            records, pooled = [], {"scores": [], "labels": []}
            for rep in range(spec.repeats):
                if spec.kind is Strategy.TRAIN_ON_ALL:
                    data = pop.subset(train)
                elif spec.kind is Strategy.RANDOM_ONE_SHOT:
                    data = {}
                    for c in classes:
                        pick = random_one_shot_select(len(by_class[c]), derive_seed(seed, "random", f, rep, str(c)))
                        data[c] = pop.members[by_class[c][pick]]
                elif spec.kind is Strategy.LINEAR_AVERAGE_ONE_SHOT:
                    if hook is not None:
                        for c in classes:
                            hook(by_class[c])
                    data = {c: linear_average_template(pop.subset(by_class[c])) for c in classes}
                else:
                    data = {
                        c: estimate_cbt(
                            pop.subset(by_class[c]),
                            _template_cfg(template_cfg, derive_seed(seed, "cbt", f, rep, str(c))),
                            hook,
                            by_class[c],
                        )
                        for c in classes
                    }
                model = train_classifier(data, replace(cfg, rng_seed=derive_seed(seed, "classifier", f, rep)), classes=classes)
                record, scores, labels = _evaluate_classifier(model, pop, test, positive_class)
                records.append(record)
                pooled["scores"] += scores
                pooled["labels"] += labels
            fold_record = _average_records(records)
            log.info("fold %d %s: %s", f, spec.kind.value, fold_record)
            report.fold_metrics[spec.kind.value].append(fold_record)
            report.test_scores[spec.kind.value].append(pooled)
    return report
