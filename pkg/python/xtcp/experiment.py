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

__all__ = ["RankingExperimentConfig", "RankingExperimentTask", "ExperimentReport", "run_experiment",
           "sweep_builds", "ranking_table", "SWEEP_COLUMNS"]

import itertools
import multiprocessing
from dataclasses import dataclass

import numpy as np
from astropy.table import Table, vstack

import lsst.pex.config as pexConfig
import lsst.pipe.base as pipeBase
from lsst.utils.timer import timeMethod

from .breakDown import BreakDownTask, contrastive_diff
from .buildHistory import GRADING_MODES, label_dataset, make_experiment_split
from .configLoader import configDigest
from .errors import InvariantViolationError
from .explanationSimilarity import pairwise_similarity
from .lambdaMart import LambdaMartTask, global_importance, rank_build
from .rankingMetrics import median_rank_error, ndcg

SWEEP_COLUMNS = ("build_id", "validation_ndcg", "test_ndcg", "median_rank_error", "all_failed_on_top",
                 "num_tests", "num_failed")


class RankingExperimentConfig(pexConfig.Config):
    train = pexConfig.ConfigurableField(
        target=LambdaMartTask,
        doc="Ranker training.",
    )
    explain = pexConfig.ConfigurableField(
        target=BreakDownTask,
        doc="Local explanations.",
    )
    grading = pexConfig.ChoiceField[str](
        default="binary",
        doc="Relevance grades fed to the ranker.",
        allowed={
            "binary": "1 for failed tests, 0 for passed ones.",
            "graded": "num_grades levels by ideal position.",
        },
    )
    num_grades = pexConfig.Field[int](
        default=4,
        doc="Number of relevance levels in graded mode.",
        check=lambda x: x >= 2,
    )
    top_k = pexConfig.Field[int](
        default=3,
        doc="Number of top-ranked tests to explain.",
        check=lambda x: x >= 1,
    )
    explain_tests = pexConfig.ListField[str](
        default=[],
        doc="Further tests to explain when present in the target build.",
    )
    min_history = pexConfig.Field[int](
        default=5,
        doc="Builds that must precede a failed build for it to enter a sweep.",
        check=lambda x: x >= 2,
    )
    n_processes = pexConfig.Field[int](
        default=1,
        doc="Number of processes for sweeps.",
        check=lambda x: x >= 1,
    )

    def validate(self):
        super().validate()
        if self.grading not in GRADING_MODES:
            raise pexConfig.FieldValidationError(RankingExperimentConfig.grading, self,
                                                 f"Unknown grading {self.grading!r}")


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    """Everything learned from one train-rank-explain experiment."""

    target_build: int
    config_digest: str
    ranking: object
    true_positions: dict
    verdicts: dict
    training_builds: tuple
    validation_builds: tuple
    history: tuple
    best_iteration: int
    validation_ndcg: float | None
    train_ndcg: float | None
    test_ndcg: float
    median_rank_error: float
    all_failed_on_top: bool
    importance: object
    explanations: tuple
    similarity: object
    diffs: tuple

    def __post_init__(self):
        known = set(self.true_positions)
        referenced = set(self.ranking.test_ids) | {e.test_id for e in self.explanations}
        referenced |= set(self.similarity.test_ids)
        referenced |= {t for d in self.diffs for t in (d.test_id_a, d.test_id_b)}
        if not referenced <= known:
            raise InvariantViolationError(f"Report of build {self.target_build} references unknown tests "
                                          f"{sorted(referenced - known)}")

    def rankingTable(self):
        return ranking_table(self.ranking, self.verdicts, self.true_positions)

    def diffsTable(self):
        tables = [diff.toTable() for diff in self.diffs]
        if not tables:
            return Table(names=("test_id_a", "test_id_b", "feature", "contribution_a", "contribution_b",
                                "delta"), dtype=(str, str, str, float, float, float))
        return vstack(tables)

    def summary(self):
        """Scalar results and provenance."""
        return {
            "target_build": self.target_build,
            "config_digest": self.config_digest,
            "training_builds": list(self.training_builds),
            "validation_builds": list(self.validation_builds),
            "best_iteration": self.best_iteration,
            "validation_ndcg": self.validation_ndcg,
            "train_ndcg": self.train_ndcg,
            "test_ndcg": self.test_ndcg,
            "median_rank_error": self.median_rank_error,
            "all_failed_on_top": self.all_failed_on_top,
            "history": [{"iteration": p.iteration, "ndcg": p.ndcg} for p in self.history],
            "explained_tests": [e.test_id for e in self.explanations],
            "background": dict(self.explanations[0].background) if self.explanations else {},
            "explanation_variant": self.explanations[0].variant if self.explanations else None,
            "similarity_normalization": self.similarity.normalization,
        }

    def toDict(self):
        """Every section, for a single JSON document."""
        data = self.summary()
        data["ranking"] = [{"position": e.position, "test_id": e.test_id, "score": e.score,
                            "execution_time": e.execution_time, "verdict": self.verdicts[e.test_id],
                            "true_position": self.true_positions[e.test_id]}
                           for e in self.ranking.entries]
        data["importance"] = {"counts": dict(self.importance.counts),
                              "normalized": dict(self.importance.normalized)}
        data["explanations"] = [e.toDict() for e in self.explanations]
        data["similarity"] = self.similarity.toDict()
        data["diffs"] = [{"test_id_a": d.test_id_a, "test_id_b": d.test_id_b,
                          "entries": [{"feature": x.feature, "contribution_a": x.contribution_a,
                                       "contribution_b": x.contribution_b, "delta": x.delta}
                                      for x in d.entries]}
                         for d in self.diffs]
        return data


def ranking_table(ranking, verdicts, truePositions):
    """Ranking as a table, with the verdict and ideal position of every test."""
    entries = ranking.entries
    return Table({
        "position": np.array([e.position for e in entries], dtype=np.int64),
        "test_id": np.array([e.test_id for e in entries], dtype=str),
        "score": np.array([e.score for e in entries], dtype=np.float64),
        "execution_time": np.array([e.execution_time for e in entries], dtype=np.float64),
        "verdict": np.array([verdicts[e.test_id] for e in entries], dtype=str),
        "true_position": np.array([truePositions[e.test_id] for e in entries], dtype=np.int64),
    })


def _allFailedOnTop(ranking, group):
    failed = {record.test_id for record in group.records if record.failed}
    return bool(failed) and set(ranking.test_ids[:len(failed)]) == failed


def _evaluateBuild(config, dataset, buildId):
    return RankingExperimentTask(config=config).evaluateBuild(dataset, buildId)


class RankingExperimentTask(pipeBase.Task):
    """Train a ranker for one build, evaluate it and explain its ranking.

    The model is trained on the builds preceding the target build, with the
    last fifth of them held out for validation. The target build is then
    ranked, the ranking scored against the ideal one, and selected tests
    are explained, compared and contrasted.
    """
    ConfigClass = RankingExperimentConfig
    _DefaultName = "rankingExperiment"

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        self.makeSubtask("train")
        self.makeSubtask("explain")

    @property
    def seed(self):
        return self.config.train.seed

    def label(self, dataset):
        return label_dataset(dataset, self.config.grading, self.config.num_grades)

    def prepare(self, dataset, targetBuild):
        """Label ``dataset`` and split it around ``targetBuild``."""
        split = make_experiment_split(self.label(dataset), targetBuild)
        self.log.info("Build %d: %d training and %d validation builds, %d tests to rank",
                      targetBuild, len(split.train), len(split.validation), len(split.test))
        return split

    def makeBackground(self, split):
        return self.explain.makeBackground(split.history, self.seed)

    def selectTests(self, ranking, group):
        """Tests explained by default.

        The top ``top_k`` positions, the highest-ranked passed test not
        already chosen, the last position and any ``explain_tests`` present
        in the build; in ranking order.
        """
        chosen = list(ranking.test_ids[:self.config.top_k])
        for testId in ranking.test_ids:
            if testId not in chosen and not group.record(testId).failed:
                chosen.append(testId)
                break
        chosen.append(ranking.test_ids[-1])
        chosen.extend(t for t in self.config.explain_tests if group.contains(t))
        positions = ranking.positions()
        return sorted(dict.fromkeys(chosen), key=lambda t: positions[t])

    def evaluate(self, model, split):
        """Rank the test build and score the ranking."""
        group = split.test
        ranking = rank_build(model, group)
        truePositions = dict(zip(group.test_ids, group.rank_labels))
        grades = dict(zip(group.test_ids, group.relevance_grades))
        testNdcg = ndcg([grades[t] for t in ranking.test_ids], self.config.train.ndcg_truncation)
        verdicts = {record.test_id: record.verdict.value for record in group.records}
        return pipeBase.Struct(ranking=ranking, truePositions=truePositions, verdicts=verdicts,
                               testNdcg=testNdcg, medianRankError=median_rank_error(ranking, truePositions),
                               allFailedOnTop=_allFailedOnTop(ranking, group))

    @timeMethod
    def run(self, dataset, targetBuild, model=None):
        """Run an experiment on one build.

        Parameters
        ----------
        dataset : `Dataset`
            Build history; labelled here.
        targetBuild : `int`
            Build to rank and explain.
        model : `LtrModel`, optional
            Trained model to use instead of training one.

        Returns
        -------
        result : `lsst.pipe.base.Struct`
            ``report``
                The `ExperimentReport`.
            ``model``
                The model used.
        """
        split = self.prepare(dataset, targetBuild)
        if model is None:
            trained = self.train.run(split)
            model, validationNdcg, trainNdcg = trained.model, trained.validationNdcg, trained.trainNdcg
        else:
            model.checkSchema(split.schema)
            validationNdcg = max((p.ndcg for p in model.history), default=None)
            trainNdcg = None
        evaluation = self.evaluate(model, split)
        ranking = evaluation.ranking
        group = split.test

        testIds = self.selectTests(ranking, group)
        explanations = self.explain.run(model, group, self.makeBackground(split), testIds).explanations
        byTest = {e.test_id: e for e in explanations}
        similarity = pairwise_similarity(byTest, ranking, testIds)

        diffs = []
        top = ranking.test_ids[0]
        firstPassed = next((t for t in testIds if not group.record(t).failed), None)
        for other in dict.fromkeys([firstPassed, ranking.test_ids[-1]]):
            if other is not None and other != top:
                diffs.append(contrastive_diff(byTest[top], byTest[other]))

        report = ExperimentReport(
            target_build=targetBuild,
            config_digest=configDigest(self.config),
            ranking=ranking,
            true_positions=evaluation.truePositions,
            verdicts=evaluation.verdicts,
            training_builds=tuple(g.build_id for g in split.train),
            validation_builds=tuple(g.build_id for g in split.validation),
            history=model.history,
            best_iteration=model.bestIteration,
            validation_ndcg=validationNdcg,
            train_ndcg=trainNdcg,
            test_ndcg=evaluation.testNdcg,
            median_rank_error=evaluation.medianRankError,
            all_failed_on_top=evaluation.allFailedOnTop,
            importance=global_importance(model),
            explanations=tuple(explanations),
            similarity=similarity,
            diffs=tuple(diffs),
        )
        self.log.info("Build %d: test NDCG %.4f, median rank error %g, %d failed on top: %s",
                      targetBuild, report.test_ndcg, report.median_rank_error, group.num_failed,
                      report.all_failed_on_top)
        return pipeBase.Struct(report=report, model=model)

    def evaluateBuild(self, labelled, buildId):
        """Train for and score one build of a labelled dataset, as a sweep row."""
        split = make_experiment_split(labelled, buildId)
        trained = self.train.run(split)
        evaluation = self.evaluate(trained.model, split)
        return {
            "build_id": buildId,
            "validation_ndcg": np.nan if trained.validationNdcg is None else trained.validationNdcg,
            "test_ndcg": evaluation.testNdcg,
            "median_rank_error": evaluation.medianRankError,
            "all_failed_on_top": evaluation.allFailedOnTop,
            "num_tests": len(split.test),
            "num_failed": split.test.num_failed,
        }

    def eligibleBuilds(self, labelled):
        """Failed builds with at least ``min_history`` predecessors."""
        eligible = []
        for index, group in enumerate(labelled.builds):
            if not group.has_failures:
                continue
            if index < self.config.min_history:
                self.log.debug("Skipping build %d: %d predecessor build(s), need %d",
                               group.build_id, index, self.config.min_history)
                continue
            eligible.append(group.build_id)
        return eligible

    @timeMethod
    def sweep(self, dataset):
        """Run an experiment for every eligible failed build.

        Returns
        -------
        result : `lsst.pipe.base.Struct`
            ``table``
                `astropy.table.Table` with one row per build, sorted by
                descending validation NDCG.
            ``rows``
                The rows as dicts, in the same order.
        """
        labelled = self.label(dataset)
        eligible = self.eligibleBuilds(labelled)
        if not eligible:
            self.log.warning("No failed build has %d or more predecessors; the sweep is empty",
                             self.config.min_history)
            rows = []
        elif self.config.n_processes > 1:
            with multiprocessing.Pool(self.config.n_processes) as pool:
                rows = pool.starmap(_evaluateBuild, zip(itertools.repeat(self.config),
                                                        itertools.repeat(labelled), eligible))
        else:
            rows = [self.evaluateBuild(labelled, buildId) for buildId in eligible]

        rows.sort(key=lambda row: (np.isnan(row["validation_ndcg"]), -np.nan_to_num(row["validation_ndcg"]),
                                   row["build_id"]))
        table = Table(rows=[[row[c] for c in SWEEP_COLUMNS] for row in rows] or None,
                      names=SWEEP_COLUMNS,
                      dtype=(np.int64, np.float64, np.float64, np.float64, bool, np.int64, np.int64))
        self.log.info("Swept %d of %d builds", len(rows), len(labelled))
        return pipeBase.Struct(table=table, rows=rows)


def run_experiment(dataset, targetBuild, config=None):
    """Run one experiment; see `RankingExperimentTask.run`."""
    return RankingExperimentTask(config=config).run(dataset, targetBuild).report


def sweep_builds(dataset, config=None):
    """Sweep every eligible failed build; see `RankingExperimentTask.sweep`."""
    return RankingExperimentTask(config=config).sweep(dataset).table
