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

__all__ = ["TrainingConfig", "LambdaMartTask", "LtrModel", "EvalPoint", "RankingEntry", "Ranking",
           "GlobalImportance", "train", "predict", "rank_build", "rank_order", "global_importance",
           "MODEL_FORMAT_VERSION"]

import hashlib
import json
import os
from collections import Counter
from dataclasses import dataclass

import numpy as np
from astropy.table import Table

import lsst.pex.config as pexConfig
import lsst.pipe.base as pipeBase
from lsst.utils.timer import timeMethod

from .buildHistory import FeatureSchema
from .errors import DatasetError, InvariantViolationError, ModelFormatError
from .rankingMetrics import compute_lambdas, ndcg
from .regressionTree import RegressionTree, fit_tree

MODEL_FORMAT_VERSION = 1


class TrainingConfig(pexConfig.Config):
    num_iterations = pexConfig.Field[int](
        default=100,
        doc="Number of boosting iterations (trees).",
        check=lambda x: x >= 1,
    )
    learning_rate = pexConfig.Field[float](
        default=0.1,
        doc="Shrinkage applied to every tree.",
        check=lambda x: 0.0 < x <= 1.0,
    )
    num_leaves = pexConfig.Field[int](
        default=31,
        doc="Maximum number of leaves per tree.",
        check=lambda x: x >= 2,
    )
    min_data_in_leaf = pexConfig.Field[int](
        default=20,
        doc="Minimum number of records in a leaf.",
        check=lambda x: x >= 1,
    )
    sigma = pexConfig.Field[float](
        default=1.0,
        doc="Slope of the pairwise logistic in the LambdaRank gradients.",
        check=lambda x: x > 0,
    )
    eval_every = pexConfig.Field[int](
        default=10,
        doc="Record the validation NDCG every this many iterations.",
        check=lambda x: x >= 1,
    )
    ndcg_truncation = pexConfig.Field[int](
        default=None,
        optional=True,
        doc="Truncation of NDCG in training and evaluation; None for the full ranking.",
        check=lambda x: x >= 1,
    )
    seed = pexConfig.Field[int](
        default=0,
        doc="Seed for every random choice of an experiment. Training itself is deterministic.",
    )


@dataclass(frozen=True)
class EvalPoint:
    """Mean validation NDCG after ``iteration`` trees."""
    iteration: int
    ndcg: float


@dataclass(frozen=True)
class RankingEntry:
    test_id: str
    score: float
    position: int
    execution_time: float


@dataclass(frozen=True)
class Ranking:
    """Predicted order of the tests of one build."""

    build_id: int
    entries: tuple[RankingEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if [entry.position for entry in self.entries] != list(range(1, len(self.entries) + 1)):
            raise InvariantViolationError(f"Ranking of build {self.build_id} has non-consecutive positions")
        if any(a.score < b.score for a, b in zip(self.entries, self.entries[1:])):
            raise InvariantViolationError(f"Ranking of build {self.build_id} has increasing scores")

    def __len__(self):
        return len(self.entries)

    @property
    def test_ids(self):
        return tuple(entry.test_id for entry in self.entries)

    def positions(self):
        """Mapping of test id to position."""
        return {entry.test_id: entry.position for entry in self.entries}

    def entry(self, testId):
        for entry in self.entries:
            if entry.test_id == testId:
                return entry
        raise DatasetError(f"Test {testId!r} is not in the ranking of build {self.build_id}")


@dataclass(frozen=True)
class GlobalImportance:
    """Split counts per feature, most used first.

    Features never used for a split are omitted.
    """

    counts: dict
    normalized: dict

    @property
    def total(self):
        return sum(self.counts.values())

    @property
    def top(self):
        """Most frequently used feature, or `None` for a model without splits."""
        return next(iter(self.counts), None)

    def toTable(self):
        names = list(self.counts)
        return Table({"feature": np.array(names, dtype=str),
                      "count": np.array([self.counts[name] for name in names], dtype=np.int64),
                      "share": np.array([self.normalized[name] for name in names], dtype=np.float64)})


class LtrModel:
    """Boosted regression tree ranker.

    Parameters
    ----------
    trees : sequence of `RegressionTree`
        Trees in boosting order.
    learningRate : `float`
        Shrinkage applied to every tree.
    schema : `FeatureSchema`
        Features the trees split on.
    config : `dict`
        Training configuration, as from `TrainingConfig.toDict`.
    history : sequence of `EvalPoint`
        Validation NDCG recorded during training.
    bestIteration : `int`, optional
        Number of trees used for prediction; defaults to all.
    """

    def __init__(self, trees, learningRate, schema, config=None, history=(), bestIteration=None):
        self.trees = tuple(trees)
        self.learningRate = float(learningRate)
        self.schema = schema
        self.config = dict(config or {})
        self.history = tuple(history)
        self.bestIteration = len(self.trees) if bestIteration is None else int(bestIteration)
        if not 0 <= self.bestIteration <= len(self.trees):
            raise ModelFormatError(f"Best iteration {self.bestIteration} outside 0..{len(self.trees)}")
        for tree in self.trees:
            tree.checkFeatures(schema.size)

    @property
    def activeTrees(self):
        return self.trees[:self.bestIteration]

    def predictBatch(self, features):
        """Predict the relevance of every row of ``features``."""
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if features.shape[1] != self.schema.size:
            raise ValueError(f"Expected {self.schema.size} features, got {features.shape[1]}")
        scores = np.zeros(features.shape[0])
        for tree in self.activeTrees:
            scores += self.learningRate*tree.predict(features)
        return scores

    def predict(self, features):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 1:
            raise ValueError(f"Expected one feature vector, got shape {features.shape}")
        return float(self.predictBatch(features[np.newaxis, :])[0])

    def toDict(self):
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "schema": list(self.schema.names),
            "schema_hash": self.schema.digest,
            "config": self.config,
            "learning_rate": self.learningRate,
            "trees": [tree.toDict() for tree in self.trees],
            "history": [{"iteration": point.iteration, "ndcg": point.ndcg} for point in self.history],
            "best_iteration": self.bestIteration,
        }

    def toJson(self):
        return json.dumps(self.toDict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def fromDict(cls, data):
        """Rebuild a model, validating its format version and schema hash."""
        try:
            version = data["format_version"]
            if version != MODEL_FORMAT_VERSION:
                raise ModelFormatError(f"Unsupported model format version {version!r}; "
                                       f"expected {MODEL_FORMAT_VERSION}")
            schema = FeatureSchema(tuple(data["schema"]))
            if data["schema_hash"] != schema.digest:
                raise ModelFormatError("Model schema hash does not match its feature names")
            trees = [RegressionTree.fromDict(tree) for tree in data["trees"]]
            history = [EvalPoint(int(point["iteration"]), float(point["ndcg"])) for point in data["history"]]
            return cls(trees, data["learning_rate"], schema, data["config"], history, data["best_iteration"])
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ModelFormatError):
                raise
            raise ModelFormatError(f"Malformed model: {e}") from e

    @classmethod
    def fromJson(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ModelFormatError(f"Model is not valid JSON: {e}") from e
        return cls.fromDict(data)

    def writeJson(self, path):
        try:
            with open(path, "w") as f:
                f.write(self.toJson())
        except OSError as e:
            raise OSError(e.errno, f"Unable to write model to {os.fspath(path)}: {e.strerror}") from e

    @classmethod
    def readJson(cls, path):
        try:
            with open(path) as f:
                text = f.read()
        except OSError as e:
            raise ModelFormatError(f"Cannot read model {os.fspath(path)}: {e.strerror}") from e
        return cls.fromJson(text)

    def checkSchema(self, schema):
        if schema.names != self.schema.names:
            raise DatasetError("Model and data feature schemas differ")


def rank_order(scores, executionTimes, testIds):
    """Indices sorting by descending score, then ascending execution time,
    then test id.
    """
    return sorted(range(len(testIds)), key=lambda i: (-scores[i], executionTimes[i], testIds[i]))


def predict(model, features):
    """Predict the relevance of one feature vector."""
    return model.predict(features)


def rank_build(model, group):
    """Rank the tests of a build by predicted relevance.

    Parameters
    ----------
    model : `LtrModel`
        Trained model.
    group : `BuildGroup`
        Build whose records are ranked.

    Returns
    -------
    ranking : `Ranking`
    """
    if len(group) == 0:
        raise DatasetError(f"Cannot rank empty build {group.build_id}")
    if group.features.shape[1] != model.schema.size:
        raise DatasetError(f"Build {group.build_id} has {group.features.shape[1]} features; "
                           f"the model expects {model.schema.size}")
    scores = model.predictBatch(group.features)
    order = rank_order(scores, group.execution_times, group.test_ids)
    entries = [RankingEntry(test_id=group.test_ids[i], score=float(scores[i]), position=position,
                            execution_time=float(group.execution_times[i]))
               for position, i in enumerate(order, start=1)]
    return Ranking(build_id=group.build_id, entries=tuple(entries))


def global_importance(model):
    """Count how often each feature is used for a split.

    Only the trees used for prediction are counted. Features are ordered by
    descending count, ties in schema order.
    """
    counter = Counter()
    for tree in model.activeTrees:
        counter.update(tree.splitFeatures.tolist())
    total = sum(counter.values())
    order = sorted(counter, key=lambda j: (-counter[j], j))
    counts = {model.schema.names[j]: counter[j] for j in order}
    normalized = {name: count/total for name, count in counts.items()}
    return GlobalImportance(counts=counts, normalized=normalized)


def _stack(groups):
    if not groups:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64), []
    features = np.vstack([group.features for group in groups])
    grades = np.concatenate([np.asarray(group.relevance_grades, dtype=np.int64) for group in groups])
    bounds = np.cumsum([0] + [len(group) for group in groups])
    return features, grades, [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


class LambdaMartTask(pipeBase.Task):
    """Train a LambdaMART ranker, one query group per build.

    Every iteration computes LambdaRank gradients per training build from
    the current scores, fits one regression tree to all training records
    and adds it with the learning rate. Every ``eval_every`` iterations the
    mean NDCG over the validation builds is recorded; the model predicts
    with the trees up to the best recorded iteration, or with all of them
    when there are no validation builds.
    """
    ConfigClass = TrainingConfig
    _DefaultName = "lambdaMart"

    @timeMethod
    def run(self, split):
        """Train on the training and validation partitions of ``split``.

        Returns
        -------
        result : `lsst.pipe.base.Struct`
            ``model``
                The trained `LtrModel`.
            ``validationNdcg``
                Validation NDCG at the best iteration, or `None`.
            ``trainNdcg``
                Mean training NDCG of the returned model.
        """
        return self.fit(split.schema, split.train, split.validation)

    def fit(self, schema, train, validation=()):
        config = self.config
        train = tuple(train)
        validation = tuple(validation)
        if not train:
            raise DatasetError("Cannot train on an empty training partition")
        for group in train + validation:
            if group.relevance_grades is None:
                raise DatasetError(f"Build {group.build_id} has no relevance grades")
            if len(group) and group.features.shape[1] != schema.size:
                raise DatasetError(f"Build {group.build_id} has {group.features.shape[1]} features; "
                                   f"the schema has {schema.size}")
        features, grades, queries = _stack(train)
        valGroups = [group for group in validation if len(group)]
        valFeatures, valGrades, valQueries = _stack(valGroups)

        scores = np.zeros(grades.size)
        valScores = np.zeros(valGrades.size)
        trees = []
        history = []
        for iteration in range(1, config.num_iterations + 1):
            gradients = np.zeros_like(scores)
            hessians = np.zeros_like(scores)
            for query in queries:
                gradients[query], hessians[query] = compute_lambdas(scores[query], grades[query],
                                                                    config.sigma, config.ndcg_truncation)
            tree = fit_tree(features, gradients, hessians, config)
            trees.append(tree)
            scores += config.learning_rate*tree.predict(features)
            if valGroups:
                valScores += config.learning_rate*tree.predict(valFeatures)
            if valGroups and iteration % config.eval_every == 0:
                value = self._meanNdcg(valGroups, valScores, valGrades, valQueries)
                history.append(EvalPoint(iteration, value))
                self.log.debug("Iteration %d: validation NDCG %.6f", iteration, value)

        if history:
            best = max(range(len(history)), key=lambda i: (history[i].ndcg, -i))
            bestIteration = history[best].iteration
            validationNdcg = history[best].ndcg
        else:
            bestIteration = config.num_iterations
            validationNdcg = None

        model = LtrModel(trees, config.learning_rate, schema, config.toDict(), history, bestIteration)
        trainNdcg = self._meanNdcg(train, model.predictBatch(features), grades, queries)
        self.log.info("Trained %d trees on %d builds (%d records); best iteration %d, "
                      "validation NDCG %s, training NDCG %.4f",
                      len(trees), len(train), grades.size, bestIteration,
                      "n/a" if validationNdcg is None else f"{validationNdcg:.4f}", trainNdcg)
        return pipeBase.Struct(model=model, validationNdcg=validationNdcg, trainNdcg=trainNdcg)

    def _meanNdcg(self, groups, scores, grades, queries):
        """Mean NDCG of ``groups`` ranked by ``scores``; 1 with no groups."""
        if not groups:
            return 1.0
        values = []
        for group, query in zip(groups, queries):
            order = rank_order(scores[query], group.execution_times, group.test_ids)
            values.append(ndcg(grades[query][order], self.config.ndcg_truncation))
        return float(np.mean(values))


def train(split, config=None):
    """Train a model on ``split``; see `LambdaMartTask`."""
    return LambdaMartTask(config=config).run(split).model
