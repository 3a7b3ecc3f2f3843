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

import dataclasses
import filecmp
import json
import os
import tempfile
import unittest

import numpy as np

import lsst.utils.tests

from xtcp import (Dataset, FeatureSchema, InvariantViolationError, RankingExperimentTask, configDigest,
                  emit_report, generate_synthetic, run_experiment, sweep_builds)
from xtcp.testUtils import makeFastExperimentConfig, makeRecord, makeSyntheticConfig


def failedBuildAfter(dataset, index):
    """First failed build with at least ``index`` predecessors."""
    return next(b for b in dataset.metadata["failed_builds"] if dataset.buildIndex(b) >= index)


def listFiles(root):
    return sorted(os.path.relpath(os.path.join(dirpath, name), root)
                  for dirpath, _, names in os.walk(root) for name in names)


class ExperimentTestCase(lsst.utils.tests.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.dataset = generate_synthetic(makeSyntheticConfig())
        cls.config = makeFastExperimentConfig()
        cls.target = failedBuildAfter(cls.dataset, 10)
        cls.result = RankingExperimentTask(config=cls.config).run(cls.dataset, cls.target)
        cls.report = cls.result.report

    def testReport(self):
        report = self.report
        group = self.dataset.getBuild(self.target)
        self.assertEqual(report.target_build, self.target)
        self.assertEqual(len(report.ranking), len(group))
        self.assertEqual(set(report.true_positions), set(group.test_ids))
        self.assertEqual(report.config_digest, configDigest(self.config))
        index = self.dataset.buildIndex(self.target)
        self.assertEqual(report.training_builds + report.validation_builds, self.dataset.build_ids[:index])
        self.assertGreaterEqual(report.test_ndcg, 0.9)
        self.assertEqual(report.importance.top, "f0")
        self.assertIsNotNone(report.train_ndcg)

    def testExplainedTests(self):
        report = self.report
        group = self.dataset.getBuild(self.target)
        ranking = report.ranking
        explained = [e.test_id for e in report.explanations]
        self.assertEqual(explained[:3], list(ranking.test_ids[:3]))
        self.assertEqual(explained[-1], ranking.test_ids[-1])
        firstPassed = next(t for t in ranking.test_ids[3:] if not group.record(t).failed)
        self.assertIn(firstPassed, explained)
        self.assertLessEqual(len(explained), 5)
        self.assertEqual(report.similarity.test_ids, tuple(explained))
        for explanation in report.explanations:
            total = explanation.baseline + sum(step.contribution for step in explanation.steps)
            self.assertAlmostEqual(total, explanation.prediction, delta=1e-9)

    def testDiffs(self):
        report = self.report
        top = report.ranking.test_ids[0]
        self.assertGreaterEqual(len(report.diffs), 1)
        for diff in report.diffs:
            self.assertEqual(diff.test_id_a, top)
        last = report.diffs[-1]
        self.assertEqual(last.test_id_b, report.ranking.test_ids[-1])
        self.assertEqual(last.entries[0].feature, "f0")

    def testGivenModel(self):
        task = RankingExperimentTask(config=self.config)
        report = task.run(self.dataset, self.target, model=self.result.model).report
        self.assertIsNone(report.train_ndcg)
        self.assertEqual(report.ranking, self.report.ranking)
        self.assertEqual(report.explanations, self.report.explanations)

    def testUnknownTestRejected(self):
        with self.assertRaises(InvariantViolationError):
            dataclasses.replace(self.report, true_positions={"nobody": 1})

    def testEmitDeterminism(self):
        again = run_experiment(self.dataset, self.target, makeFastExperimentConfig())
        with tempfile.TemporaryDirectory() as tmpdir:
            first = os.path.join(tmpdir, "first")
            second = os.path.join(tmpdir, "second")
            emit_report(self.report, first)
            emit_report(again, second)
            files = listFiles(first)
            self.assertEqual(files, listFiles(second))
            for name in ("ranking.csv", "importance.csv", "similarity.csv", "summary.json", "diffs.csv",
                         "explanations.csv"):
                self.assertIn(name, files)
            explanationFiles = [name for name in files if name.startswith("explanations" + os.sep)]
            self.assertEqual(len(explanationFiles), len(self.report.explanations))
            match, mismatch, errors = filecmp.cmpfiles(first, second, files, shallow=False)
            self.assertEqual((mismatch, errors), ([], []))
            with open(os.path.join(first, "similarity.csv")) as f:
                header = f.readline().strip().split(",")
            self.assertEqual(header, ["test_id"] + list(self.report.similarity.test_ids))

    def testJsonFormat(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            emit_report(self.report, tmpdir, format="json")
            self.assertEqual(listFiles(tmpdir), ["summary.json"])
            with open(os.path.join(tmpdir, "summary.json")) as f:
                data = json.load(f)
        for key in ("ranking", "importance", "explanations", "similarity", "diffs", "config_digest"):
            self.assertIn(key, data)
        self.assertEqual(len(data["ranking"]), len(self.report.ranking))
        with self.assertRaises(ValueError):
            emit_report(self.report, ".", format="xml")

    def testReportsShareDirectory(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            fresh = os.path.join(tmpdir, "fresh")
            shared = os.path.join(tmpdir, "shared")
            emit_report(self.report, fresh)
            emit_report(self.report, shared)
            emit_report(self.report, shared, format="json")
            self.assertEqual(listFiles(shared), ["summary.json"])
            emit_report(self.report, shared)
            self.assertEqual(listFiles(shared), listFiles(fresh))

    def testOutputPathError(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            blocker = os.path.join(tmpdir, "blocker")
            with open(blocker, "w") as f:
                f.write("not a directory\n")
            with self.assertRaises(OSError) as cm:
                emit_report(self.report, os.path.join(blocker, "report"))
            self.assertIn("blocker", str(cm.exception))


class SweepTestCase(lsst.utils.tests.TestCase):

    def testRowCount(self):
        dataset = generate_synthetic(makeSyntheticConfig(m=16, n=12, p=3, failure_rate=0.5, seed=2))
        config = makeFastExperimentConfig(numIterations=10)
        table = sweep_builds(dataset, config)
        eligible = [b for b in dataset.metadata["failed_builds"] if dataset.buildIndex(b) >= 5]
        self.assertEqual(len(table), len(eligible))
        self.assertEqual(sorted(table["build_id"]), eligible)
        ndcgs = list(table["validation_ndcg"])
        self.assertEqual(ndcgs, sorted(ndcgs, reverse=True))

        config.n_processes = 2
        parallel = sweep_builds(dataset, config)
        self.assertEqual(list(parallel["build_id"]), list(table["build_id"]))
        self.assertFloatsEqual(np.array(parallel["test_ndcg"]), np.array(table["test_ndcg"]))

    def testNoFailedBuilds(self):
        schema = FeatureSchema(("f0",))
        records = [makeRecord(f"t{j}", features=[float(j)], buildId=b) for b in range(1, 9) for j in range(4)]
        table = sweep_builds(Dataset.fromRecords(schema, records))
        self.assertEqual(len(table), 0)
        self.assertIn("validation_ndcg", table.colnames)


class PlantedSignalTestCase(lsst.utils.tests.TestCase):

    def testLastBuildsNdcg(self):
        dataset = generate_synthetic(makeSyntheticConfig(m=50, n=40, p=10, failure_rate=0.4))
        task = RankingExperimentTask(config=makeFastExperimentConfig())
        values = []
        for buildId in dataset.build_ids[-10:]:
            split = task.prepare(dataset, buildId)
            evaluation = task.evaluate(task.train.run(split).model, split)
            values.append(evaluation.testNdcg)
        self.assertEqual(len(values), 10)
        self.assertGreaterEqual(np.mean(values), 0.9)

    def testFinalBuildRankError(self):
        """A last-execution-time feature and graded relevance put the
        final build close to its ideal order.
        """
        dataset = generate_synthetic(makeSyntheticConfig(m=50, n=40, p=10, exec_time_feature=1,
                                                         exec_time_jitter=0.02))
        config = makeFastExperimentConfig(numIterations=100, grading="graded", num_grades=20)
        task = RankingExperimentTask(config=config)
        split = task.prepare(dataset, dataset.build_ids[-1])
        evaluation = task.evaluate(task.train.run(split).model, split)
        self.assertEqual(len(evaluation.ranking), 40)
        self.assertLessEqual(evaluation.medianRankError, 2.0)


class SimilarityPatternTestCase(lsst.utils.tests.TestCase):

    def testRankProximity(self):
        """Explanations of top-ranked tests resemble each other more than
        they resemble the bottom-ranked one.
        """
        config = makeFastExperimentConfig(numIterations=20)
        config.train.num_leaves = 8
        successes = 0
        for seed in range(20):
            dataset = generate_synthetic(makeSyntheticConfig(m=30, n=20, p=5, seed=seed, failure_rate=0.6,
                                                             test_failure_rate=0.3))
            report = run_experiment(dataset, failedBuildAfter(dataset, 10), config)
            ranking = report.ranking.test_ids
            similarity = report.similarity
            top = [similarity[ranking[i], ranking[j]] for i, j in ((0, 1), (0, 2), (1, 2))]
            if np.mean(top) > similarity[ranking[0], ranking[-1]]:
                successes += 1
        self.assertGreaterEqual(successes, 18)


class TestMemory(lsst.utils.tests.MemoryTestCase):
    pass


def setup_module(module):
    lsst.utils.tests.init()


if __name__ == "__main__":
    lsst.utils.tests.init()
    unittest.main()
