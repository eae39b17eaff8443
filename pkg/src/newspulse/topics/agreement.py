"""Annotator agreement on topic labels."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from ..errors import NoVariation


def krippendorff_alpha(table, level: str = "nominal") -> float:
    """Krippendorff's alpha for nominal labels.

    ``table`` is items x annotators; ``None`` or NaN marks a missing label.
    Items with fewer than two labels are not pairable and are ignored.
    Identical labels everywhere give zero expected disagreement; alpha is then
    reported as 1.0 with a :class:`NoVariation` warning.
    """
    if level != "nominal":
        raise ValueError("only nominal level is supported")
    rows = [list(r) for r in (table.to_numpy() if isinstance(table, pd.DataFrame) else table)]
    if len(rows) < 2 or min(len(r) for r in rows) < 2:
        raise ValueError("need at least 2 items and 2 annotators")

    def missing(v):
        return v is None or (isinstance(v, float) and np.isnan(v))

    values = sorted({v for r in rows for v in r if not missing(v)}, key=str)
    index = {v: i for i, v in enumerate(values)}
    coincidence = np.zeros((len(values), len(values)))
    for r in rows:
        labels = [index[v] for v in r if not missing(v)]
        m = len(labels)
        if m < 2:
            continue
        counts = np.bincount(labels, minlength=len(values)).astype(float)
        coincidence += (np.outer(counts, counts) - np.diag(counts)) / (m - 1)
    n_c = coincidence.sum(axis=1)
    n = n_c.sum()
    observed = coincidence.sum() - np.trace(coincidence)
    expected = (n_c.sum() ** 2 - np.sum(n_c ** 2)) / (n - 1)
    if expected == 0:
        warnings.warn("all labels identical; alpha set to 1", NoVariation, stacklevel=2)
        return 1.0
    return float(1.0 - observed / expected)


@dataclass
class TopicLabel:
    topic: int
    annotator_labels: dict = field(default_factory=dict)
    final: Optional[str] = None


def load_labels(path, annotators=None) -> dict[int, TopicLabel]:
    """Read ``topic,annotator,label`` rows.

    Rows with annotator ``final`` carry the resolved label. When no final row
    exists and every annotator agrees, the agreed label is final. A final
    label is only set once all expected annotators have labeled the topic.
    """
    labels: dict[int, TopicLabel] = {}
    finals = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            t = int(row["topic"])
            who = row["annotator"].strip()
            lab = row["label"].strip()
            if who == "final":
                finals[t] = lab
                continue
            labels.setdefault(t, TopicLabel(t)).annotator_labels[who] = lab
    everyone = set(annotators) if annotators else {a for tl in labels.values() for a in tl.annotator_labels}
    for t, tl in labels.items():
        if set(tl.annotator_labels) != everyone:
            continue
        if t in finals:
            tl.final = finals[t]
        elif len(set(tl.annotator_labels.values())) == 1:
            tl.final = next(iter(tl.annotator_labels.values()))
    return labels


def label_table(labels: dict[int, TopicLabel]) -> pd.DataFrame:
    """Items x annotators frame for :func:`krippendorff_alpha`."""
    annotators = sorted({a for tl in labels.values() for a in tl.annotator_labels})
    data = {a: [labels[t].annotator_labels.get(a) for t in sorted(labels)] for a in annotators}
    return pd.DataFrame(data, index=sorted(labels))
