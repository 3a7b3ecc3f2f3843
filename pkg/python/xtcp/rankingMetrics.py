# This file is part of xtcp.
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.

"""Ranking quality measures and LambdaRank gradients.
"""

__all__ = ["ndcg", "compute_lambdas", "median_rank_error"]

import numpy as np
from scipy.special import expit


def _checkGrades(grades):
    grades = np.asarray(grades)
    if grades.ndim != 1:
        raise ValueError(f"Grades must be one-dimensional, not of shape {grades.shape}")
    if grades.size and not np.issubdtype(grades.dtype, np.integer):
        if not np.all(np.equal(np.mod(grades, 1), 0)):
            raise ValueError("Grades must be integers")
    if np.any(grades < 0):
        raise ValueError(f"Grades must be non-negative, got {grades.min()}")
    return grades.astype(np.int64)


def _cutoff(n, truncation):
    if truncation is None:
        return n
    if truncation < 1:
        raise ValueError(f"NDCG truncation must be at least 1, not {truncation}")
    return min(int(truncation), n)


def _discounts(k):
    return 1.0/np.log2(np.arange(2, k + 2, dtype=np.float64))


def ndcg(grades, truncation=None):
    """Normalized discounted cumulative gain of a ranked list.

    Parameters
    ----------
    grades : sequence of `int`
        Relevance grades in predicted order.
    truncation : `int`, optional
        Only the first ``truncation`` positions count; `None` for the full
        list.

    Returns
    -------
    ndcg : `float`
        DCG divided by the ideal DCG, with gain ``2**g - 1`` and discount
        ``1/log2(position + 1)``. A list without relevant items scores 1.
    """
    grades = _checkGrades(grades)
    if grades.size == 0:
        raise ValueError("Cannot compute NDCG of an empty list")
    k = _cutoff(grades.size, truncation)
    gains = np.exp2(grades.astype(np.float64)) - 1.0
    discounts = _discounts(k)
    ideal = float(np.sort(gains)[::-1][:k] @ discounts)
    if ideal == 0.0:
        return 1.0
    return min(1.0, float(gains[:k] @ discounts)/ideal)


def compute_lambdas(scores, grades, sigma=1.0, truncation=None):
    """LambdaRank gradients and second derivatives for one query.

    For every pair ``(i, j)`` with ``grades[i] > grades[j]`` the pair weight
    ``rho = 1/(1 + exp(sigma*(s_i - s_j)))`` and the NDCG change of swapping
    the two give ``lambda = sigma*rho*|dNDCG|``, added to ``i`` and
    subtracted from ``j``. Both receive ``sigma**2*rho*(1 - rho)*|dNDCG|``
    as hessian. Positions come from the current scores, ties broken by
    index. Gradients point in the ascent direction.

    Parameters
    ----------
    scores : sequence of `float`
        Current model scores.
    grades : sequence of `int`
        Relevance grades.
    sigma : `float`
        Slope of the pairwise logistic.
    truncation : `int`, optional
        NDCG truncation; positions beyond it have no discount.

    Returns
    -------
    gradients, hessians : `numpy.ndarray`
    """
    scores = np.asarray(scores, dtype=np.float64)
    grades = _checkGrades(grades)
    if scores.shape != grades.shape:
        raise ValueError(f"Length mismatch: {scores.size} scores and {grades.size} grades")
    if scores.size == 0:
        raise ValueError("Cannot compute lambdas of an empty query")
    n = scores.size
    gradients = np.zeros(n)
    hessians = np.zeros(n)
    if n < 2 or grades.min() == grades.max():
        return gradients, hessians

    k = _cutoff(n, truncation)
    order = np.lexsort((np.arange(n), -scores))
    positions = np.empty(n, dtype=np.int64)
    positions[order] = np.arange(1, n + 1)
    discount = np.where(positions <= k, 1.0/np.log2(positions + 1.0), 0.0)
    gains = np.exp2(grades.astype(np.float64)) - 1.0
    idcg = float(np.sort(gains)[::-1][:k] @ _discounts(k))
    if idcg == 0.0:
        return gradients, hessians

    pairs = grades[:, np.newaxis] > grades[np.newaxis, :]
    delta = (np.abs(gains[:, np.newaxis] - gains[np.newaxis, :])
             * np.abs(discount[:, np.newaxis] - discount[np.newaxis, :])/idcg)
    rho = expit(-sigma*(scores[:, np.newaxis] - scores[np.newaxis, :]))
    lambdas = np.where(pairs, sigma*rho*delta, 0.0)
    weights = np.where(pairs, sigma*sigma*rho*(1.0 - rho)*delta, 0.0)

    gradients = lambdas.sum(axis=1) - lambdas.sum(axis=0)
    hessians = weights.sum(axis=1) + weights.sum(axis=0)
    return gradients, hessians


def median_rank_error(predicted, trueLabels):
    """Median absolute difference between predicted and true positions.

    Parameters
    ----------
    predicted : `Ranking`
        Predicted ranking of a build.
    trueLabels : mapping of `str` to `int`
        True position of every test in the build.

    Returns
    -------
    error : `float`
    """
    predictedPositions = {entry.test_id: entry.position for entry in predicted.entries}
    if set(predictedPositions) != set(trueLabels):
        missing = sorted(set(predictedPositions).symmetric_difference(trueLabels))
        raise ValueError(f"Predicted and true rankings cover different tests: {missing}")
    diffs = [abs(predictedPositions[testId] - int(trueLabels[testId])) for testId in predictedPositions]
    return float(np.median(diffs))
