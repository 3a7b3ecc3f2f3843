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

"""Sign-preserving scaling and cosine similarity of local explanations.
"""

__all__ = ["NORMALIZATION", "ContributionVector", "SimilarityMatrix", "normalize_vector",
           "normalize_contributions", "cosine_similarity", "pairwise_similarity"]

import logging
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np
from astropy.table import Table

import lsst.pipe.base as pipeBase

from .errors import ExplanationError

_LOG = logging.getLogger(__name__)

# Contributions are divided by the sum of their absolute values.
NORMALIZATION = "l1-abs-sum"


@dataclass(frozen=True, eq=False)
class ContributionVector:
    """Scaled contributions of one explanation, in schema order."""

    values: np.ndarray
    feature_names: tuple[str, ...] = ()
    degenerate: bool = False

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise ExplanationError("Contribution vectors must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self):
        return self.values.size


def normalize_vector(values):
    """Divide ``values`` by the sum of their absolute values.

    Returns
    -------
    normalized : `numpy.ndarray`
    degenerate : `bool`
        `True` if every value is zero; the zero vector is returned.
    """
    values = np.asarray(values, dtype=np.float64)
    total = np.abs(values).sum()
    if total == 0.0:
        return np.zeros_like(values), True
    return values/total, False


def normalize_contributions(explanation):
    """Scaled contribution vector of ``explanation``, in schema order."""
    values, degenerate = normalize_vector(explanation.contributions())
    if degenerate:
        _LOG.warning("Explanation of test %r in build %s has only zero contributions",
                     explanation.test_id, explanation.build_id)
    return ContributionVector(values=values, feature_names=explanation.feature_names, degenerate=degenerate)


def cosine_similarity(a, b):
    """Cosine similarity of two contribution vectors.

    Returns
    -------
    result : `lsst.pipe.base.Struct`
        ``similarity``
            Cosine in [-1, 1]; 0 if either vector is zero.
        ``degenerate``
            `True` if either vector is zero.
    """
    x = a.values if isinstance(a, ContributionVector) else np.asarray(a, dtype=np.float64)
    y = b.values if isinstance(b, ContributionVector) else np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ExplanationError(f"Cannot compare contribution vectors of lengths {x.size} and {y.size}")
    norms = np.linalg.norm(x)*np.linalg.norm(y)
    if norms == 0.0:
        return pipeBase.Struct(similarity=0.0, degenerate=True)
    return pipeBase.Struct(similarity=float(np.clip(np.dot(x, y)/norms, -1.0, 1.0)), degenerate=False)


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """Pairwise cosine similarities of explanations, in ranking order."""

    test_ids: tuple[str, ...]
    entries: np.ndarray
    degenerate: tuple[bool, ...]
    normalization: str = NORMALIZATION

    def __post_init__(self):
        object.__setattr__(self, "test_ids", tuple(self.test_ids))
        object.__setattr__(self, "degenerate", tuple(bool(d) for d in self.degenerate))
        entries = np.array(self.entries, dtype=np.float64)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    def __getitem__(self, pair):
        i, j = (self.test_ids.index(t) for t in pair)
        return float(self.entries[i, j])

    def toTable(self):
        """Square table with a leading label column, ``test_id`` unless a test
        is named that way, in which case underscores are appended.
        """
        label = "test_id"
        while label in self.test_ids:
            label += "_"
        columns = {label: np.array(self.test_ids, dtype=str)}
        for j, testId in enumerate(self.test_ids):
            columns[testId] = self.entries[:, j]
        return Table(columns)

    def toDict(self):
        return {"test_ids": list(self.test_ids), "matrix": self.entries.tolist(),
                "degenerate": list(self.degenerate), "normalization": self.normalization}


def pairwise_similarity(explanations, ranking, testIds=None):
    """Similarity of every pair of explained tests.

    Parameters
    ----------
    explanations : sequence or mapping of `Explanation`
        Explanations; a mapping is keyed by test id.
    ranking : `Ranking`
        Ranking that orders the matrix.
    testIds : sequence of `str`, optional
        Tests to compare; defaults to every explained test.

    Returns
    -------
    matrix : `SimilarityMatrix`
    """
    if not isinstance(explanations, Mapping):
        explanations = {e.test_id: e for e in explanations}
    if testIds is None:
        testIds = list(explanations)
    positions = ranking.positions()
    for testId in testIds:
        if testId not in explanations:
            raise ExplanationError(f"No explanation for test {testId!r}")
        if testId not in positions:
            raise ExplanationError(f"Test {testId!r} is not in the ranking of build {ranking.build_id}")
    ordered = sorted(dict.fromkeys(testIds), key=lambda t: positions[t])
    vectors = [normalize_contributions(explanations[t]) for t in ordered]
    n = len(ordered)
    entries = np.zeros((n, n))
    for i in range(n):
        entries[i, i] = 0.0 if vectors[i].degenerate else 1.0
        for j in range(i + 1, n):
            entries[i, j] = entries[j, i] = cosine_similarity(vectors[i], vectors[j]).similarity
    return SimilarityMatrix(test_ids=tuple(ordered), entries=entries,
                            degenerate=tuple(v.degenerate for v in vectors))
