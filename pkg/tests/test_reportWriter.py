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

import json
import os
import tempfile
import unittest

from astropy.table import Table

import lsst.utils.tests

from xtcp import Explanation, ExplanationStep, explanationFiles, writeOutputs

ExplanationOutputs = ("explanations", "explanations.csv")


def listFiles(root):
    return sorted(os.path.relpath(os.path.join(dirpath, name), root)
                  for dirpath, _, names in os.walk(root) for name in names)


def makeExplanation(testId):
    return Explanation(test_id=testId, build_id=1, baseline=0.0,
                       steps=[ExplanationStep(feature="f0", value=1.0, contribution=0.5)],
                       prediction=0.5, feature_names=("f0",))


class WriteOutputsTestCase(lsst.utils.tests.TestCase):

    def testRewriteRemovesEarlierOutputs(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            with open(os.path.join(tmpdir, "dataset.csv"), "w") as f:
                f.write("unrelated\n")
            writeOutputs(tmpdir, {os.path.join("explanations", "t001.json"): {"test_id": "t001"},
                                  "explanations.csv": Table({"test_id": ["t001"]})},
                         owned=ExplanationOutputs)
            written = writeOutputs(tmpdir, {os.path.join("explanations", "t002.json"): {"test_id": "t002"}},
                                   owned=ExplanationOutputs)
            self.assertEqual(written, [os.path.join(os.path.abspath(tmpdir), "explanations", "t002.json")])
            self.assertEqual(sorted(os.listdir(os.path.join(tmpdir, "explanations"))), ["t002.json"])
            self.assertEqual(listFiles(tmpdir), ["dataset.csv", os.path.join("explanations", "t002.json")])

    def testFailedWriteKeepsEarlierOutputs(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            writeOutputs(tmpdir, {"drift.json": {"test_id": "a"}}, owned=("drift.csv", "drift.json"))
            with self.assertRaises(TypeError):
                writeOutputs(tmpdir, {"drift.json": {"test_id": object()}}, owned=("drift.csv", "drift.json"))
            self.assertEqual(listFiles(tmpdir), ["drift.json"])
            with open(os.path.join(tmpdir, "drift.json")) as f:
                self.assertEqual(json.load(f), {"test_id": "a"})


class ExplanationFilesTestCase(lsst.utils.tests.TestCase):

    def testDistinctNames(self):
        files = explanationFiles([makeExplanation(t) for t in ("Test[1]", "Test_1_", "b/c", "b_c")])
        self.assertEqual(list(files), [os.path.join("explanations", name) for name in
                                       ("Test_1_.json", "Test_1_-2.json", "b_c.json", "b_c-2.json")])
        self.assertEqual([data["test_id"] for data in files.values()], ["Test[1]", "Test_1_", "b/c", "b_c"])

    def testCollidingTestsAllWritten(self):
        explanations = [makeExplanation(t) for t in ("Test[1]", "Test_1_")]
        with tempfile.TemporaryDirectory() as tmpdir:
            writeOutputs(tmpdir, explanationFiles(explanations), owned=ExplanationOutputs)
            testIds = set()
            for name in os.listdir(os.path.join(tmpdir, "explanations")):
                with open(os.path.join(tmpdir, "explanations", name)) as f:
                    testIds.add(json.load(f)["test_id"])
        self.assertEqual(testIds, {"Test[1]", "Test_1_"})


class TestMemory(lsst.utils.tests.MemoryTestCase):
    pass


def setup_module(module):
    lsst.utils.tests.init()


if __name__ == "__main__":
    lsst.utils.tests.init()
    unittest.main()
