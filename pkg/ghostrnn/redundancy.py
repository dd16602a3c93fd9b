"""Hidden-state redundancy analysis.

A trained cell is run over sample sequences and its full states [h g] are
stacked into an m x n feature map (units x time). Two views of redundancy
are computed from it: the cumulative PCA contribution of its singular
values, and the cosine similarity between every pair of units.
"""

import json
import logging
import os
from typing import Optional, Sequence

import numpy as np

from ghostrnn.cells import CellParams, run_sequence
from ghostrnn.errors import GhostRNNError
from ghostrnn.kernel import cosine_similarity, singular_values
from ghostrnn.model_io import export_csv, export_table
from ghostrnn.models import FeatureMap, PcaReport, SimilarityMatrix


logger = logging.getLogger("ghostrnn.redundancy")

DEFAULT_MAX_STEPS = 4096
DEFAULT_THRESHOLD = 0.99
# slack for reaching a threshold of exactly 1.0 through rounded sums
CONTRIBUTION_SLACK = 1e-12


def collect_feature_map(
    cell: CellParams,
    sequences: Sequence[np.ndarray],
    max_steps: int = DEFAULT_MAX_STEPS,
) -> FeatureMap:
    """Run ``cell`` over each sequence and concatenate the states in time.

    Columns are sequence-major (all steps of sequence 0, then sequence 1,
    ...) and the map is cut off after ``max_steps`` columns.
    """
    if len(sequences) == 0:
        raise GhostRNNError.invalid_config("collect_feature_map needs at least one sequence")
    if max_steps < 1:
        raise GhostRNNError.invalid_config(f"max_steps must be >= 1, got {max_steps}")
    blocks = []
    collected = 0
    for xs in sequences:
        if collected >= max_steps:
            break
        _, fm = run_sequence(cell, xs)
        block = fm.values[:, : max_steps - collected]
        blocks.append(block)
        collected += block.shape[1]
    values = np.concatenate(blocks, axis=1)
    logger.debug("collected feature map %dx%d from %d sequences", values.shape[0], values.shape[1], len(blocks))
    return FeatureMap(values)


def pca_contribution(
    fm: FeatureMap,
    threshold: float = DEFAULT_THRESHOLD,
    centered: bool = True,
    squared: bool = True,
) -> PcaReport:
    """Cumulative share of the leading singular values of the feature map.

    With the defaults the rows are mean-centered and singular values are
    squared, which is the explained-variance convention of PCA.
    ``k_at_threshold`` is the smallest k whose cumulative share reaches
    ``threshold``; an all-zero map is reported as degenerate with k = 0.
    """
    if not 0.0 < threshold <= 1.0:
        raise GhostRNNError.invalid_config(f"threshold must be in (0, 1], got {threshold}")
    values = fm.values
    if centered:
        values = values - values.mean(axis=1, keepdims=True)
    sigma = singular_values(values)
    weights = sigma * sigma if squared else sigma.copy()
    total = float(np.sum(weights))
    if total == 0.0:
        return PcaReport(
            singular_values=sigma,
            contribution=np.zeros_like(sigma),
            k_at_threshold=0,
            threshold=threshold,
            centered=centered,
            squared=squared,
            degenerate=True,
        )
    contribution = np.minimum(np.cumsum(weights) / total, 1.0)
    contribution[-1] = 1.0
    k = int(np.argmax(contribution >= threshold - CONTRIBUTION_SLACK)) + 1
    return PcaReport(
        singular_values=sigma,
        contribution=contribution,
        k_at_threshold=k,
        threshold=threshold,
        centered=centered,
        squared=squared,
    )


def similarity_matrix(fm: FeatureMap) -> SimilarityMatrix:
    """Cosine similarity of every pair of raw (uncentered) unit rows.

    Zero rows score 0 against every other row; their diagonal entry is
    still set to 1 and their indices are listed in ``zero_rows``.
    """
    m = fm.m
    if m < 2:
        raise GhostRNNError.invalid_config(f"similarity_matrix needs at least 2 units, got {m}")
    rows = fm.values
    values = np.eye(m)
    for i in range(m):
        for j in range(i + 1, m):
            s = cosine_similarity(rows[i], rows[j])
            values[i, j] = s
            values[j, i] = s
    zero_rows = [i for i in range(m) if not np.any(rows[i])]
    return SimilarityMatrix(values, zero_rows)


def suggest_ratio(report: PcaReport, m: int) -> int:
    """Largest r dividing m with m / r still covering ``k_at_threshold`` units."""
    if report.degenerate or report.k_at_threshold < 1:
        return 1
    best = 1
    for r in range(1, m + 1):
        if m % r == 0 and m // r >= report.k_at_threshold:
            best = r
    return best


def write_analysis(
    out_dir: str,
    fm: FeatureMap,
    report: PcaReport,
    similarity: SimilarityMatrix,
    digits: int = 9,
) -> Optional[int]:
    """Write singular_values.csv, contribution.csv, similarity.csv and pca_report.json.

    Returns the suggested ratio recorded in the JSON report.
    """
    os.makedirs(out_dir, exist_ok=True)
    export_table(
        os.path.join(out_dir, "singular_values.csv"),
        ("index", "value"),
        [(i, float(v)) for i, v in enumerate(report.singular_values)],
        digits,
    )
    export_table(
        os.path.join(out_dir, "contribution.csv"),
        ("k", "cumulative_fraction"),
        [(i + 1, float(v)) for i, v in enumerate(report.contribution)],
        digits,
    )
    export_csv(similarity.values, os.path.join(out_dir, "similarity.csv"), digits)
    suggested = suggest_ratio(report, fm.m)
    summary = {
        "m": fm.m,
        "n": fm.n,
        "centered": report.centered,
        "squared": report.squared,
        "threshold": report.threshold,
        "k_at_threshold": report.k_at_threshold,
        "suggested_r": suggested,
        "degenerate": report.degenerate,
        "contribution": [float(v) for v in report.contribution],
        "zero_rows": similarity.zero_rows,
    }
    with open(os.path.join(out_dir, "pca_report.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info("analysis written to %s (k_at_threshold=%d, suggested_r=%d)", out_dir, report.k_at_threshold, suggested)
    return suggested


__all__ = [
    "DEFAULT_MAX_STEPS",
    "DEFAULT_THRESHOLD",
    "collect_feature_map",
    "pca_contribution",
    "similarity_matrix",
    "suggest_ratio",
    "write_analysis",
]
