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

__all__ = ["BuildTimelineConfig", "BuildTimelineTask", "TrajectoryCell", "TrajectoryTable",
           "TimelinePoint", "ImportanceTimeline", "DriftPoint", "DriftSeries",
           "rank_trajectory", "importance_timeline", "explanation_drift", "NOT_EXECUTED"]

from collections import Counter
from dataclasses import dataclass

import numpy as np
from astropy.table import Table

import lsst.pex.config as pexConfig
import lsst.pipe.base as pipeBase
from lsst.utils.timer import timeMethod

from .breakDown import break_down
from .buildHistory import make_experiment_split, split_training_history
from .errors import DatasetError, InsufficientTrainingDataError
from .experiment import RankingExperimentTask
from .explanationSimilarity import cosine_similarity, normalize_contributions
from .lambdaMart import global_importance, rank_build

NOT_EXECUTED = "not executed"


class BuildTimelineConfig(pexConfig.Config):
    experiment = pexConfig.ConfigurableField(
        target=RankingExperimentTask,
        doc="Per-build training and explanation.",
    )
    retrain_stride = pexConfig.Field[int](
        default=10,
        doc="Retrain after every this many builds.",
        check=lambda x: x >= 1,
    )
    window = pexConfig.Field[int](
        default=None,
        optional=True,
        doc="Train on at most this many of the latest builds (None: all preceding builds).",
        check=lambda x: x >= 2,
    )
    top_n = pexConfig.Field[int](
        default=10,
        doc="Number of most frequently executed tests in trajectories.",
        check=lambda x: x >= 1,
    )
    trajectory_source = pexConfig.ChoiceField[str](
        default="labels",
        doc="Positions shown in trajectories.",
        allowed={
            "labels": "Ideal positions from verdicts and execution times.",
            "models": "Positions predicted by a model trained for each build.",
        },
    )


@dataclass(frozen=True)
class TrajectoryCell:
    test_id: str
    build_id: int
    position: int | None
    length: int

    @property
    def executed(self):
        return self.position is not None

    @property
    def relative_position(self):
        return None if self.position is None else self.position/self.length

    @property
    def status(self):
        return "executed" if self.executed else NOT_EXECUTED


@dataclass(frozen=True)
class TrajectoryTable:
    """Relative positions of frequently executed tests across builds."""

    test_ids: tuple[str, ...]
    build_ids: tuple[int, ...]
    source: str
    cells: tuple[TrajectoryCell, ...]

    def cell(self, testId, buildId):
        return self.cells[self.test_ids.index(testId)*len(self.build_ids) + self.build_ids.index(buildId)]

    def toTable(self):
        """Long form, one row per test and build."""
        return Table({
            "test_id": np.array([c.test_id for c in self.cells], dtype=str),
            "build_id": np.array([c.build_id for c in self.cells], dtype=np.int64),
            "status": np.array([c.status for c in self.cells], dtype=str),
            "position": np.array([c.position or 0 for c in self.cells], dtype=np.int64),
            "length": np.array([c.length for c in self.cells], dtype=np.int64),
            "relative_position": np.array([np.nan if c.position is None else c.relative_position
                                           for c in self.cells], dtype=np.float64),
        })


@dataclass(frozen=True)
class TimelinePoint:
    build_id: int
    num_training_builds: int
    importance: object


@dataclass(frozen=True)
class ImportanceTimeline:
    """Global importance at successive retraining points."""

    points: tuple[TimelinePoint, ...]

    def __post_init__(self):
        ids = [point.build_id for point in self.points]
        if any(a >= b for a, b in zip(ids, ids[1:])):
            raise DatasetError(f"Retraining points must increase, got {ids}")

    @property
    def top_features(self):
        return tuple(point.importance.top for point in self.points)

    def toTable(self):
        """Long form, one row per retraining point and feature used."""
        rows = [(point.build_id, point.num_training_builds, rank, name, count,
                 point.importance.normalized[name])
                for point in self.points
                for rank, (name, count) in enumerate(point.importance.counts.items(), start=1)]
        return Table(rows=rows or None,
                     names=("build_id", "num_training_builds", "rank", "feature", "count", "share"),
                     dtype=(np.int64, np.int64, np.int64, str, np.int64, np.float64))


@dataclass(frozen=True)
class DriftPoint:
    build_id: int
    verdict: str
    explanation: object
    similarity_to_previous: float | None
    degenerate: bool


@dataclass(frozen=True)
class DriftSeries:
    """Explanations of one test in successive builds."""

    test_id: str
    points: tuple[DriftPoint, ...]

    @property
    def similarities(self):
        return [point.similarity_to_previous for point in self.points[1:]]

    def toTable(self):
        return Table({
            "build_id": np.array([p.build_id for p in self.points], dtype=np.int64),
            "verdict": np.array([p.verdict for p in self.points], dtype=str),
            "prediction": np.array([p.explanation.prediction for p in self.points], dtype=np.float64),
            "baseline": np.array([p.explanation.baseline for p in self.points], dtype=np.float64),
            "top_feature": np.array([p.explanation.steps[0].feature for p in self.points], dtype=str),
            "similarity_to_previous": np.array([np.nan if p.similarity_to_previous is None
                                                else p.similarity_to_previous for p in self.points],
                                               dtype=np.float64),
            "degenerate": np.array([p.degenerate for p in self.points], dtype=bool),
        })

    def toDict(self):
        return {"test_id": self.test_id,
                "points": [{"build_id": p.build_id, "verdict": p.verdict,
                            "similarity_to_previous": p.similarity_to_previous, "degenerate": p.degenerate,
                            "explanation": p.explanation.toDict()} for p in self.points]}


class BuildTimelineTask(pipeBase.Task):
    """Follow rankings, global importance and explanations across builds."""
    ConfigClass = BuildTimelineConfig
    _DefaultName = "buildTimeline"

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        self.makeSubtask("experiment")

    def frequentTests(self, dataset, topN):
        """The ``topN`` most executed tests, ties by test id."""
        counts = Counter(t for group in dataset.builds for t in group.test_ids)
        if topN > len(counts):
            self.log.warning("Only %d distinct tests; showing all instead of %d", len(counts), topN)
            topN = len(counts)
        return sorted(counts, key=lambda t: (-counts[t], t))[:topN]

    @timeMethod
    def rankTrajectory(self, dataset, source=None, topN=None):
        """Positions of the most frequently executed tests in every build.

        Parameters
        ----------
        dataset : `Dataset`
            Build history.
        source : `str`, optional
            ``"labels"`` for ideal positions, ``"models"`` for positions
            predicted by a model trained for each build; builds too early
            to train for are left out in that mode.
        topN : `int`, optional
            Number of tests; defaults to ``top_n``.

        Returns
        -------
        table : `TrajectoryTable`
        """
        source = source or self.config.trajectory_source
        if source not in ("labels", "models"):
            raise ValueError(f"Unknown trajectory source {source!r}")
        experiment = self.experiment
        labelled = experiment.label(dataset)
        testIds = self.frequentTests(labelled, topN or self.config.top_n)

        columns = []
        for group in labelled.builds:
            if source == "labels":
                positions = dict(zip(group.test_ids, group.rank_labels))
            else:
                try:
                    split = make_experiment_split(labelled, group.build_id)
                except InsufficientTrainingDataError as e:
                    self.log.debug("No model for build %d: %s", group.build_id, e)
                    continue
                positions = rank_build(experiment.train.run(split).model, split.test).positions()
            columns.append((group.build_id, len(group), positions))

        cells = tuple(TrajectoryCell(test_id=t, build_id=buildId, position=positions.get(t), length=length)
                      for t in testIds for buildId, length, positions in columns)
        return TrajectoryTable(test_ids=tuple(testIds), build_ids=tuple(c[0] for c in columns),
                               source=source, cells=cells)

    def retrainingPoints(self, numBuilds, stride):
        if stride > numBuilds:
            self.log.warning("Stride %d exceeds the %d builds; retraining once", stride, numBuilds)
            stride = numBuilds
        return list(range(stride, numBuilds + 1, stride))

    @timeMethod
    def importanceTimeline(self, dataset, stride=None):
        """Global importance of models retrained every ``stride`` builds.

        At retraining point ``t`` a model is trained on the first ``t``
        builds (or the latest ``window`` of them), with the last fifth held
        out for validation.
        """
        stride = stride or self.config.retrain_stride
        if stride < 1:
            raise ValueError(f"Retraining stride must be at least 1, not {stride}")
        labelled = self.experiment.label(dataset)
        points = []
        for t in self.retrainingPoints(len(labelled), stride):
            history = labelled.builds[:t]
            if self.config.window is not None:
                history = history[-self.config.window:]
            train, validation = split_training_history(history)
            if not train:
                self.log.warning("Skipping retraining at build %d: only %d build(s) of history",
                                 history[-1].build_id, len(history))
                continue
            model = self.experiment.train.fit(labelled.schema, train, validation).model
            points.append(TimelinePoint(build_id=history[-1].build_id, num_training_builds=len(history),
                                        importance=global_importance(model)))
        return ImportanceTimeline(points=tuple(points))

    @timeMethod
    def explanationDrift(self, dataset, testId, builds=None):
        """Explain ``testId`` in every build where it ran and a model can be
        trained, and compare consecutive explanations.

        Parameters
        ----------
        dataset : `Dataset`
            Build history.
        testId : `str`
            Test to follow.
        builds : sequence of `int`, optional
            Restrict to these build ids.

        Returns
        -------
        series : `DriftSeries`
        """
        experiment = self.experiment
        labelled = experiment.label(dataset)
        executed = [i for i, group in enumerate(labelled.builds) if group.contains(testId)]
        if not executed:
            raise DatasetError(f"Test {testId!r} was never executed")
        if builds is not None:
            wanted = set(builds)
            executed = [i for i in executed if labelled.builds[i].build_id in wanted]
        trainable = [i for i in executed if len(split_training_history(labelled.builds[:i])[0]) > 0]
        if len(trainable) < 2:
            raise DatasetError(f"Test {testId!r} ran in {len(trainable)} build(s) with enough history; "
                               "need at least 2 to follow its explanation")

        points = []
        previous = None
        for i in trainable:
            buildId = labelled.builds[i].build_id
            split = make_experiment_split(labelled, buildId)
            model = experiment.train.run(split).model
            record = split.test.record(testId)
            explanation = break_down(model, experiment.makeBackground(split), record.features,
                                     testId=testId, buildId=buildId,
                                     tolerance=experiment.explain.config.additivity_tolerance)
            vector = normalize_contributions(explanation)
            similarity = None
            degenerate = vector.degenerate
            if previous is not None:
                result = cosine_similarity(previous, vector)
                similarity = result.similarity
                degenerate = degenerate or result.degenerate
            points.append(DriftPoint(build_id=buildId, verdict=record.verdict.value, explanation=explanation,
                                     similarity_to_previous=similarity, degenerate=degenerate))
            previous = vector
        self.log.info("Followed test %r through %d builds", testId, len(points))
        return DriftSeries(test_id=testId, points=tuple(points))


def rank_trajectory(dataset, source="labels", topN=10, config=None):
    """See `BuildTimelineTask.rankTrajectory`."""
    return BuildTimelineTask(config=config).rankTrajectory(dataset, source, topN)


def importance_timeline(dataset, stride, config=None):
    """See `BuildTimelineTask.importanceTimeline`."""
    return BuildTimelineTask(config=config).importanceTimeline(dataset, stride)


def explanation_drift(dataset, testId, config=None, builds=None):
    """See `BuildTimelineTask.explanationDrift`."""
    return BuildTimelineTask(config=config).explanationDrift(dataset, testId, builds)
