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

__all__ = ["BreakDownConfig", "BreakDownTask", "BackgroundSet", "ExplanationStep", "Explanation",
           "ContrastiveEntry", "ContrastiveDiff", "expected_prediction", "break_down", "contrastive_diff",
           "BREAK_DOWN_VARIANT"]

import json
from dataclasses import dataclass, field

import numpy as np
from astropy.table import Table

import lsst.pex.config as pexConfig
import lsst.pipe.base as pipeBase
from lsst.utils.timer import timeMethod

from .errors import ExplanationError, InvariantViolationError

BREAK_DOWN_VARIANT = "step-down-max-abs"

# Upper bound on the cells of one batch of modified background rows.
_BATCH_CELLS = 4_000_000


class BreakDownConfig(pexConfig.Config):
    max_background = pexConfig.Field[int](
        default=500,
        doc="Maximum number of background rows; larger training partitions are subsampled "
            "uniformly without replacement.",
        check=lambda x: x >= 1,
    )
    additivity_tolerance = pexConfig.Field[float](
        default=1e-9,
        doc="Largest accepted |baseline + sum(contributions) - prediction|.",
        check=lambda x: x >= 0,
    )


@dataclass(frozen=True, eq=False)
class BackgroundSet:
    """Reference rows that stand in for the unknown feature values.

    Parameters
    ----------
    rows : `numpy.ndarray`, shape ``(B, p)``
        Background feature vectors.
    firstBuild, lastBuild : `int`, optional
        Build id range the rows were drawn from.
    seed : `int`, optional
        Seed of the subsample, if one was drawn.
    """

    rows: np.ndarray
    firstBuild: int | None = None
    lastBuild: int | None = None
    seed: int | None = None
    poolSize: int | None = None

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] == 0 or rows.shape[1] == 0:
            raise ExplanationError(f"Background must be a non-empty matrix, not of shape {rows.shape}")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @classmethod
    def fromBuilds(cls, builds, maxRows=500, seed=0):
        """Stack the records of ``builds``, subsampling to ``maxRows`` rows."""
        builds = [group for group in builds if len(group)]
        if not builds:
            raise ExplanationError("Cannot build a background from no records")
        rows = np.vstack([group.features for group in builds])
        poolSize = rows.shape[0]
        if poolSize > maxRows:
            rng = np.random.default_rng(seed)
            rows = rows[np.sort(rng.choice(poolSize, size=maxRows, replace=False))]
        return cls(rows=rows, firstBuild=builds[0].build_id, lastBuild=builds[-1].build_id,
                   seed=seed, poolSize=poolSize)

    @property
    def size(self):
        return int(self.rows.shape[0])

    @property
    def provenance(self):
        return {"first_build": self.firstBuild, "last_build": self.lastBuild, "size": self.size,
                "pool_size": self.poolSize, "seed": self.seed}


@dataclass(frozen=True)
class ExplanationStep:
    feature: str
    value: float
    contribution: float


@dataclass(frozen=True)
class Explanation:
    """Break Down attribution of one prediction.

    ``steps`` are in greedy selection order; ``baseline`` plus every
    contribution equals ``prediction``.
    """

    test_id: str
    build_id: int
    baseline: float
    steps: tuple[ExplanationStep, ...]
    prediction: float
    feature_names: tuple[str, ...]
    variant: str = BREAK_DOWN_VARIANT
    background: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if sorted(step.feature for step in self.steps) != sorted(self.feature_names):
            raise ExplanationError(f"Explanation of {self.test_id!r} must have one step per feature")

    def contributions(self):
        """Contributions in schema order."""
        byName = {step.feature: step.contribution for step in self.steps}
        return np.array([byName[name] for name in self.feature_names], dtype=np.float64)

    def toDict(self):
        return {
            "test_id": self.test_id,
            "build_id": self.build_id,
            "baseline": self.baseline,
            "prediction": self.prediction,
            "variant": self.variant,
            "background": dict(self.background),
            "steps": [{"feature": step.feature, "value": step.value, "contribution": step.contribution}
                      for step in self.steps],
        }

    def toJson(self):
        return json.dumps(self.toDict(), sort_keys=True, indent=2) + "\n"

    def toTable(self):
        """One row per step, in selection order."""
        return Table({
            "test_id": np.array([self.test_id]*len(self.steps), dtype=str),
            "build_id": np.full(len(self.steps), self.build_id, dtype=np.int64),
            "step": np.arange(1, len(self.steps) + 1, dtype=np.int64),
            "feature": np.array([step.feature for step in self.steps], dtype=str),
            "value": np.array([step.value for step in self.steps], dtype=np.float64),
            "contribution": np.array([step.contribution for step in self.steps], dtype=np.float64),
        })


@dataclass(frozen=True)
class ContrastiveEntry:
    feature: str
    contribution_a: float
    contribution_b: float
    delta: float


@dataclass(frozen=True)
class ContrastiveDiff:
    """Per-feature difference of two explanations, largest |delta| first."""

    test_id_a: str
    test_id_b: str
    entries: tuple[ContrastiveEntry, ...]

    def toTable(self):
        return Table({
            "test_id_a": np.array([self.test_id_a]*len(self.entries), dtype=str),
            "test_id_b": np.array([self.test_id_b]*len(self.entries), dtype=str),
            "feature": np.array([e.feature for e in self.entries], dtype=str),
            "contribution_a": np.array([e.contribution_a for e in self.entries], dtype=np.float64),
            "contribution_b": np.array([e.contribution_b for e in self.entries], dtype=np.float64),
            "delta": np.array([e.delta for e in self.entries], dtype=np.float64),
        })


def _checkInstance(model, instance):
    instance = np.asarray(instance, dtype=np.float64)
    if instance.shape != (model.schema.size,):
        raise ValueError(f"Instance has shape {instance.shape}; expected ({model.schema.size},)")
    return instance


def expected_prediction(model, background, instance, fixed):
    """Mean prediction over the background with ``fixed`` features taken
    from ``instance``.

    Parameters
    ----------
    model : `LtrModel`
        Any object with ``schema`` and ``predictBatch``.
    background : `BackgroundSet`
        Reference rows.
    instance : array-like, shape ``(p,)``
        Feature vector being explained.
    fixed : iterable of `int`
        Feature indices overwritten with the instance values.

    Returns
    -------
    value : `float`
    """
    instance = _checkInstance(model, instance)
    fixed = sorted(set(int(j) for j in fixed))
    p = model.schema.size
    if any(not 0 <= j < p for j in fixed):
        raise ValueError(f"Fixed features {fixed} outside 0..{p - 1}")
    if len(fixed) == p:
        return float(model.predictBatch(instance[np.newaxis, :])[0])
    rows = background.rows.copy()
    rows[:, fixed] = instance[fixed]
    return float(np.mean(model.predictBatch(rows)))


def _candidateMeans(model, current, instance, candidates):
    """Mean prediction of ``current`` with each candidate feature in turn
    set to its instance value.
    """
    size, p = current.shape
    chunk = max(1, _BATCH_CELLS//(size*p))
    means = []
    for start in range(0, len(candidates), chunk):
        block = candidates[start:start + chunk]
        rows = np.repeat(current[np.newaxis, :, :], len(block), axis=0)
        for c, j in enumerate(block):
            rows[c, :, j] = instance[j]
        means.append(model.predictBatch(rows.reshape(-1, p)).reshape(len(block), size).mean(axis=1))
    return np.concatenate(means)


def break_down(model, background, instance, testId="", buildId=-1, tolerance=1e-9):
    """Attribute one prediction to the features, greedily.

    Starting from the background mean, each step fixes the remaining
    feature whose fixing moves the expected prediction the most (ties to
    the lowest index) and records that move as its contribution. Once all
    features are fixed the expectation equals the prediction.

    Parameters
    ----------
    model : `LtrModel`
        Any object with ``schema`` and ``predictBatch``.
    background : `BackgroundSet`
        Reference rows.
    instance : array-like, shape ``(p,)``
        Feature vector to explain.
    testId : `str`, optional
        Test the instance belongs to.
    buildId : `int`, optional
        Build the instance belongs to.
    tolerance : `float`, optional
        Largest accepted additivity error.

    Returns
    -------
    explanation : `Explanation`

    Raises
    ------
    InvariantViolationError
        Raised if baseline plus contributions misses the prediction by more
        than ``tolerance``.
    """
    instance = _checkInstance(model, instance)
    names = model.schema.names
    p = len(names)
    current = background.rows.copy()
    baseline = float(np.mean(model.predictBatch(current)))
    prediction = float(model.predictBatch(instance[np.newaxis, :])[0])

    remaining = list(range(p))
    value = baseline
    steps = []
    while remaining:
        if len(remaining) == 1:
            means = np.array([prediction])
        else:
            means = _candidateMeans(model, current, instance, remaining)
        deltas = means - value
        choice = int(np.argmax(np.abs(deltas)))
        j = remaining.pop(choice)
        current[:, j] = instance[j]
        steps.append(ExplanationStep(feature=names[j], value=float(instance[j]),
                                     contribution=float(deltas[choice])))
        value = float(means[choice])

    residual = baseline + sum(step.contribution for step in steps) - prediction
    if abs(residual) > tolerance:
        raise InvariantViolationError(f"Break Down of test {testId!r} in build {buildId} is not additive: "
                                      f"residual {residual:.3g} exceeds {tolerance:g}")
    return Explanation(test_id=testId, build_id=buildId, baseline=baseline, steps=tuple(steps),
                       prediction=prediction, feature_names=names, background=background.provenance)


def contrastive_diff(a, b):
    """Per-feature contribution differences ``a - b``.

    Entries are sorted by descending ``|delta|``, ties in schema order.
    """
    if a.feature_names != b.feature_names:
        raise ExplanationError(f"Explanations of {a.test_id!r} and {b.test_id!r} have different schemas")
    ca = a.contributions()
    cb = b.contributions()
    delta = ca - cb
    order = sorted(range(len(delta)), key=lambda j: (-abs(delta[j]), j))
    entries = [ContrastiveEntry(feature=a.feature_names[j], contribution_a=float(ca[j]),
                                contribution_b=float(cb[j]), delta=float(delta[j])) for j in order]
    return ContrastiveDiff(test_id_a=a.test_id, test_id_b=b.test_id, entries=tuple(entries))


class BreakDownTask(pipeBase.Task):
    """Explain the predicted relevance of selected tests of a build."""
    ConfigClass = BreakDownConfig
    _DefaultName = "breakDown"

    def makeBackground(self, builds, seed):
        """Background from the records of ``builds``, subsampled with ``seed``."""
        background = BackgroundSet.fromBuilds(builds, maxRows=self.config.max_background, seed=seed)
        self.log.debug("Background of %d rows from %d records of builds %s-%s", background.size,
                       background.poolSize, background.firstBuild, background.lastBuild)
        return background

    @timeMethod
    def run(self, model, group, background, testIds=None):
        """Explain tests of ``group``.

        Parameters
        ----------
        model : `LtrModel`
            Trained model.
        group : `BuildGroup`
            Build holding the tests.
        background : `BackgroundSet`
            Reference rows.
        testIds : sequence of `str`, optional
            Tests to explain; all tests of the build by default.

        Returns
        -------
        result : `lsst.pipe.base.Struct`
            ``explanations``
                `list` of `Explanation`, in the order of ``testIds``.
        """
        if testIds is None:
            testIds = group.test_ids
        explanations = []
        for testId in testIds:
            record = group.record(testId)
            explanations.append(break_down(model, background, record.features, testId=testId,
                                           buildId=group.build_id,
                                           tolerance=self.config.additivity_tolerance))
        self.log.info("Explained %d test(s) of build %d against %d background rows",
                      len(explanations), group.build_id, background.size)
        return pipeBase.Struct(explanations=explanations)
