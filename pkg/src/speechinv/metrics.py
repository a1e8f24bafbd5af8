"""Pearson correlation, phoneme accuracy, and evaluation reports.

Correlations are pooled: predicted and ground-truth trajectories are
concatenated across test utterances (padded frames dropped) before one
correlation per tract variable is computed. A per-utterance mode (correlate
each utterance, then average) is available behind a flag.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .corpus import PAD_INDEX, TV_NAMES
from .errors import DimensionMismatch, TooShort, UndefinedCorrelation


def ppmc(x, y) -> float:
    """Pearson product-moment correlation of two equal-length sequences."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionMismatch(f"need equal-length 1-d sequences, got {x.shape} and {y.shape}")
    if x.shape[0] < 2:
        raise TooShort(f"need at least 2 samples, got {x.shape[0]}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 and syy == 0.0:
        raise UndefinedCorrelation("both sequences are constant")
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelation("one sequence is constant")
    r = float(np.dot(dx, dy)) / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def _collect_predictions(model, examples):
    """Forward every example; returns (tv_preds, logits_list) aligned with examples."""
    tv_preds = []
    logits = []
    for ex in examples:
        out = model.forward(ex.features)
        tv_preds.append(out.tv)
        logits.append(out.ph_logits)
    return tv_preds, logits


def pooled_tv_ppmc(tv_preds, tv_targets, pad_masks, per_utterance=False):
    """Per-TV correlation over concatenated non-padded frames; (dict, average).

    A TV whose correlation is undefined is reported as None, excluded from the
    average, and flagged with a warning. per_utterance=True instead averages
    per-utterance correlations (utterances with undefined correlation for a TV
    are skipped for that TV).
    """
    per_tv = {}
    if per_utterance:
        for j, name in enumerate(TV_NAMES):
            vals = []
            for pred, target, mask in zip(tv_preds, tv_targets, pad_masks):
                keep = ~mask
                try:
                    vals.append(ppmc(pred[keep, j], target[keep, j]))
                except UndefinedCorrelation:
                    continue
            per_tv[name] = float(np.mean(vals)) if vals else None
    else:
        pred_all = np.concatenate([p[~m] for p, m in zip(tv_preds, pad_masks)])
        target_all = np.concatenate([t[~m] for t, m in zip(tv_targets, pad_masks)])
        for j, name in enumerate(TV_NAMES):
            try:
                per_tv[name] = ppmc(pred_all[:, j], target_all[:, j])
            except UndefinedCorrelation:
                per_tv[name] = None
    defined = [v for v in per_tv.values() if v is not None]
    for name, v in per_tv.items():
        if v is None:
            warnings.warn(f"correlation undefined for {name}; excluded from the average")
    average = float(np.mean(defined)) if defined else None
    return per_tv, average


def evaluate_tvs(model, test_set, per_utterance=False):
    """(per-TV correlation dict, unweighted average over the defined TVs)."""
    if not test_set:
        raise TooShort("test set is empty")
    tv_preds, _ = _collect_predictions(model, test_set)
    targets = [ex.tv for ex in test_set]
    masks = [ex.pad_mask for ex in test_set]
    return pooled_tv_ppmc(tv_preds, targets, masks, per_utterance)


def phoneme_accuracy(logits, labels, include_pad: bool = False):
    """Fraction of frames whose argmax matches the label; None if no frames remain."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise DimensionMismatch(
            f"logits {logits.shape} do not align with labels {labels.shape}"
        )
    keep = np.ones(labels.shape[0], dtype=bool) if include_pad else labels != PAD_INDEX
    if not np.any(keep):
        return None
    pred = np.argmax(logits[keep], axis=1)
    return float(np.mean(pred == labels[keep]))


@dataclass
class EvalReport:
    per_tv_ppmc: dict  # TV name -> correlation or None
    average_ppmc: float | None
    phoneme_accuracy_excl_pad: float | None
    phoneme_accuracy_incl_pad: float | None
    n_test_frames: int
    param_count: int
    train_seconds: float | None = None

    def to_json(self) -> str:
        payload = {
            "per_tv_ppmc": {k: self.per_tv_ppmc[k] for k in TV_NAMES},
            "average_ppmc": self.average_ppmc,
            "phoneme_accuracy_excl_pad": self.phoneme_accuracy_excl_pad,
            "phoneme_accuracy_incl_pad": self.phoneme_accuracy_incl_pad,
            "n_test_frames": self.n_test_frames,
            "param_count": self.param_count,
            "train_seconds": self.train_seconds,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        headers = ["Metric"] + list(TV_NAMES) + ["Average"]
        row = ["PPMC"]
        for name in TV_NAMES:
            v = self.per_tv_ppmc[name]
            row.append("undef" if v is None else f"{v:.3f}")
        row.append("undef" if self.average_ppmc is None else f"{self.average_ppmc:.3f}")
        lines = [render_table(headers, [row])]
        if self.phoneme_accuracy_excl_pad is not None:
            lines.append(f"phoneme accuracy (excl. pad): {self.phoneme_accuracy_excl_pad:.2%}")
        if self.phoneme_accuracy_incl_pad is not None:
            lines.append(f"phoneme accuracy (incl. pad): {self.phoneme_accuracy_incl_pad:.2%}")
        lines.append(f"test frames: {self.n_test_frames}")
        lines.append(f"parameters: {self.param_count}")
        if self.train_seconds is not None:
            lines.append(f"training time: {self.train_seconds:.1f} s")
        return "\n".join(lines) + "\n"


def evaluate_model(model, examples, train_seconds=None, per_utterance=False) -> EvalReport:
    """Full evaluation: pooled TV correlations plus phoneme accuracies."""
    if not examples:
        raise TooShort("evaluation set is empty")
    from .model import count_params  # local import keeps the module dependency one-way

    tv_preds, logits = _collect_predictions(model, examples)
    targets = [ex.tv for ex in examples]
    masks = [ex.pad_mask for ex in examples]
    per_tv, average = pooled_tv_ppmc(tv_preds, targets, masks, per_utterance)
    acc_excl = acc_incl = None
    if model.config.multi_task:
        all_logits = np.concatenate(logits)
        all_labels = np.concatenate([ex.labels for ex in examples])
        acc_excl = phoneme_accuracy(all_logits, all_labels, include_pad=False)
        acc_incl = phoneme_accuracy(all_logits, all_labels, include_pad=True)
    n_frames = sum(ex.labels.shape[0] for ex in examples)
    return EvalReport(
        per_tv_ppmc=per_tv,
        average_ppmc=average,
        phoneme_accuracy_excl_pad=acc_excl,
        phoneme_accuracy_incl_pad=acc_incl,
        n_test_frames=n_frames,
        param_count=count_params(model.params),
        train_seconds=train_seconds,
    )


def dev_average_ppmc(model, dev_examples):
    """Average pooled correlation on a dev set; None if every TV is undefined."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, average = evaluate_tvs(model, dev_examples)
    return average


def render_table(headers, rows) -> str:
    """Aligned text table; header row, a rule, then data rows."""
    cells = [list(map(str, headers))] + [list(map(str, r)) for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    def fmt(row):
        return "  ".join(c.rjust(w) for c, w in zip(row, widths))
    out = [fmt(cells[0]), "  ".join("-" * w for w in widths)]
    out.extend(fmt(r) for r in cells[1:])
    return "\n".join(out)


def write_csv(path, headers, rows):
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers)
        writer.writerows(rows)
