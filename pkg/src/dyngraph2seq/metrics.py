"""Corpus BLEU-n, ROUGE-1 recall and token accuracy on a 0-100 scale."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .graphdata import ConfigError

METRIC_NAMES = ("BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ROUGE-1")


def _check_corpus(candidates, references):
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} references")
    if not references:
        raise ValueError("empty corpus")


def ngram_counts(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def modified_precision_counts(candidates, references, n):
    """Corpus totals ``(clipped matches, candidate n-grams)`` for order ``n``."""
    matched = total = 0
    for cand, ref in zip(candidates, references):
        c, r = ngram_counts(cand, n), ngram_counts(ref, n)
        matched += sum(min(k, r[g]) for g, k in c.items())
        total += sum(c.values())
    return matched, total


def bleu(candidates, references, n=4):
    """Corpus BLEU with uniform weights over orders 1..n and no smoothing.

    An order with no n-grams in either candidates or references counts as
    precision 1, so identical corpora of short sequences still score 100.
    """
    if n not in (1, 2, 3, 4):
        raise ConfigError(f"BLEU order must be 1..4, got {n}")
    _check_corpus(candidates, references)
    log_p = 0.0
    for m in range(1, n + 1):
        matched, total = modified_precision_counts(candidates, references, m)
        if total == 0 and not any(len(r) >= m for r in references):
            continue  # no m-grams on either side: the order is vacuous
        if matched == 0:
            return 0.0
        log_p += math.log(matched / total)
    c = sum(len(x) for x in candidates)
    r = sum(len(x) for x in references)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_p / n)


def rouge1(candidates, references):
    """Corpus unigram recall: clipped matches over reference unigrams."""
    _check_corpus(candidates, references)
    matched, _ = modified_precision_counts(candidates, references, 1)
    r = sum(len(x) for x in references)
    if r == 0:
        raise ValueError("references contain no tokens")
    return 100.0 * matched / r


def token_accuracy(candidates, references):
    """Mean over pairs of position-wise agreement on the shorter length.

    A pair where either side is empty scores 0 unless both are empty.
    """
    _check_corpus(candidates, references)
    scores = []
    for cand, ref in zip(candidates, references):
        k = min(len(cand), len(ref))
        if k == 0:
            scores.append(1.0 if len(cand) == len(ref) else 0.0)
        else:
            scores.append(sum(a == b for a, b in zip(cand[:k], ref[:k])) / k)
    return float(np.mean(scores))


def score_all(candidates, references):
    scores = {f"BLEU-{n}": bleu(candidates, references, n) for n in range(1, 5)}
    scores["ROUGE-1"] = rouge1(candidates, references)
    return scores


@dataclass
class EvalReport:
    """Per-metric scores across runs with mean and sample SD."""

    runs: list = field(default_factory=list)  # list of {metric: score}

    def add(self, scores):
        self.runs.append(dict(scores))

    @property
    def run_count(self):
        return len(self.runs)

    def mean(self, metric):
        return float(np.mean([r[metric] for r in self.runs]))

    def sd(self, metric):
        vals = [r[metric] for r in self.runs]
        return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0

    def summary(self, metrics=METRIC_NAMES):
        return {m: {"mean": self.mean(m), "sd": self.sd(m)} for m in metrics}

    def to_dict(self, metrics=METRIC_NAMES):
        return {"run_count": self.run_count, "runs": self.runs, "summary": self.summary(metrics)}

    def table(self, label="model", metrics=METRIC_NAMES):
        """Aligned text table with one ``mean±SD`` cell per metric."""
        cells = [f"{self.mean(m):.1f}±{self.sd(m):.2f}" for m in metrics]
        widths = [max(len(m), len(c)) for m, c in zip(metrics, cells)]
        lw = max(len("Model"), len(label))
        head = "Model".ljust(lw) + " | " + "  ".join(m.rjust(w) for m, w in zip(metrics, widths))
        row = label.ljust(lw) + " | " + "  ".join(c.rjust(w) for c, w in zip(cells, widths))
        return "\n".join([head, "-" * len(head), row])
