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
import shutil
import tempfile
import unittest
import unittest.mock

import lsst.utils.tests

from xtcp import InvariantViolationError, LtrModel, parse_csv
from xtcp.cli import EXIT_DATA, EXIT_INVARIANT, EXIT_OK, EXIT_USAGE, build_argparser, main

TestDir = os.path.dirname(__file__)
DataPath = os.path.join(TestDir, "data", "buildHistory.csv")


class CommandLineTestCase(lsst.utils.tests.TestCase):
    """Test the xtcp subcommands through main()."""

    @classmethod
    def setUpClass(cls):
        cls.tmpdir = tempfile.mkdtemp()
        cls.synthConfig = cls.writeText("synth.cfg", "m=12\nn=8\np=3\nfailure_rate=0.7\n")
        cls.fastConfig = cls.writeText("fast.cfg", "# small and quick\nnum_iterations=6\neval_every=3\n"
                                                   "max_background=40\nnum_leaves=4\nmin_data_in_leaf=2\n")
        cls.dataDir = os.path.join(cls.tmpdir, "synth")
        if main(["synth", "--config", cls.synthConfig, "--seed", "5", "--out", cls.dataDir]) != EXIT_OK:
            raise RuntimeError("Could not generate the test dataset")
        cls.data = os.path.join(cls.dataDir, "dataset.csv")
        cls.build = "12"

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmpdir, ignore_errors=True)

    @classmethod
    def writeText(cls, name, text):
        path = os.path.join(cls.tmpdir, name)
        with open(path, "w") as f:
            f.write(text)
        return path

    def outDir(self, name):
        return os.path.join(self.tmpdir, self.id().rsplit(".", 1)[-1], name)

    def xtcp(self, *args):
        return main([str(arg) for arg in args])

    def testSynth(self):
        with open(os.path.join(self.dataDir, "metadata.json")) as f:
            metadata = json.load(f)
        self.assertEqual(metadata["seed"], 5)
        dataset = parse_csv(self.data)
        self.assertEqual(len(dataset), 12)
        self.assertEqual(dataset.num_records, 96)

    def testIngest(self):
        out = self.outDir("ingest")
        self.assertEqual(self.xtcp("ingest", "--data", DataPath, "--out", out), EXIT_OK)
        canonical = parse_csv(os.path.join(out, "dataset.csv"))
        self.assertEqual(canonical.build_ids, (7, 12, 20))
        self.assertEqual(canonical.num_records, 8)

    def testIngestConfigAppliesToEveryCommand(self):
        data = self.writeText("custom.csv", "id;case;outcome;secs;age\n"
                                            "7;a;OK;1;1\n7;b;KO;2;2\n"
                                            "12;a;KO;1;1\n12;b;OK;2;2\n")
        ingestConfig = self.writeText("ingest.cfg", "delimiter=;\nbuild_column=id\ntest_column=case\n"
                                                    "verdict_column=outcome\nexec_time_column=secs\n"
                                                    "failed_tokens=ko\npassed_tokens=ok\n")
        out = self.outDir("trajectory")
        self.assertEqual(self.xtcp("trajectory", "--data", data, "--out", out), EXIT_DATA)
        self.assertEqual(self.xtcp("trajectory", "--data", data, "--ingest-config", ingestConfig,
                                   "--format", "json", "--out", out), EXIT_OK)
        with open(os.path.join(out, "trajectory.json")) as f:
            rows = json.load(f)
        self.assertEqual(sorted({row["build_id"] for row in rows}), [7, 12])
        positions = {(row["test_id"], row["build_id"]): row["position"] for row in rows}
        self.assertEqual(positions[("b", 7)], 1)
        self.assertEqual(positions[("a", 12)], 1)

        out = self.outDir("ingest")
        self.assertEqual(self.xtcp("ingest", "--data", data, "--ingest-config", ingestConfig, "--out", out),
                         EXIT_OK)
        self.assertEqual(parse_csv(os.path.join(out, "dataset.csv")).build_ids, (7, 12))
        badConfig = self.writeText("badIngest.cfg", "failed_tokens=pass\n")
        self.assertEqual(self.xtcp("trajectory", "--data", data, "--ingest-config", badConfig), EXIT_USAGE)

    def testOutputsReplacedOnRerun(self):
        out = self.outDir("explain")
        common = ("--data", self.data, "--build", self.build, "--config", self.fastConfig, "--out", out)
        self.assertEqual(self.xtcp("explain", *common, "--test", "t001"), EXIT_OK)
        self.assertEqual(self.xtcp("explain", *common, "--test", "t003", "--format", "json"), EXIT_OK)
        self.assertEqual(os.listdir(os.path.join(out, "explanations")), ["t003.json"])
        self.assertFalse(os.path.exists(os.path.join(out, "explanations.csv")))

    def testTrainRankExplainSimilarity(self):
        out = self.outDir("train")
        self.assertEqual(self.xtcp("train", "--data", self.data, "--build", self.build, "--config",
                                   self.fastConfig, "--num-iterations", 4, "--out", out), EXIT_OK)
        modelPath = os.path.join(out, "model.json")
        self.assertEqual(len(LtrModel.readJson(modelPath).trees), 4)

        common = ("--data", self.data, "--build", self.build, "--config", self.fastConfig,
                  "--model", modelPath)
        rankOut = self.outDir("rank")
        self.assertEqual(self.xtcp("rank", *common, "--out", rankOut, "--format", "json"), EXIT_OK)
        with open(os.path.join(rankOut, "ranking.json")) as f:
            rows = json.load(f)
        self.assertEqual([row["position"] for row in rows], list(range(1, 9)))

        explainOut = self.outDir("explain")
        self.assertEqual(self.xtcp("explain", *common, "--test", "t001", "--test", "t003", "--out",
                                   explainOut), EXIT_OK)
        self.assertEqual(sorted(os.listdir(os.path.join(explainOut, "explanations"))),
                         ["t001.json", "t003.json"])
        self.assertTrue(os.path.exists(os.path.join(explainOut, "explanations.csv")))

        similarityOut = self.outDir("similarity")
        self.assertEqual(self.xtcp("similarity", *common, "--out", similarityOut), EXIT_OK)
        with open(os.path.join(similarityOut, "similarity.json")) as f:
            matrix = json.load(f)
        self.assertEqual(matrix["normalization"], "l1-abs-sum")
        self.assertTrue(os.path.exists(os.path.join(similarityOut, "similarity.csv")))

    def testExperimentAndSweep(self):
        out = self.outDir("experiment")
        self.assertEqual(self.xtcp("experiment", "--data", self.data, "--build", self.build, "--config",
                                   self.fastConfig, "--out", out), EXIT_OK)
        for name in ("ranking.csv", "importance.csv", "similarity.csv", "summary.json"):
            self.assertTrue(os.path.exists(os.path.join(out, name)), name)
        with open(os.path.join(out, "summary.json")) as f:
            self.assertEqual(json.load(f)["target_build"], 12)

        out = self.outDir("sweep")
        self.assertEqual(self.xtcp("sweep", "--data", self.data, "--config", self.fastConfig, "--out", out),
                         EXIT_OK)
        self.assertTrue(os.path.exists(os.path.join(out, "sweep.csv")))

    def testTimelineCommands(self):
        out = self.outDir("trajectory")
        self.assertEqual(self.xtcp("trajectory", "--data", self.data, "--top-n", 3, "--out", out), EXIT_OK)
        self.assertTrue(os.path.exists(os.path.join(out, "trajectory.csv")))

        out = self.outDir("timeline")
        self.assertEqual(self.xtcp("timeline", "--data", self.data, "--config", self.fastConfig,
                                   "--stride", 6, "--out", out, "--format", "json"), EXIT_OK)
        with open(os.path.join(out, "timeline.json")) as f:
            self.assertTrue(all(row["build_id"] in (6, 12) for row in json.load(f)))

        out = self.outDir("drift")
        self.assertEqual(self.xtcp("drift", "--data", self.data, "--config", self.fastConfig,
                                   "--test", "t000",
                                   "--builds", 10, 11, 12, "--out", out), EXIT_OK)
        with open(os.path.join(out, "drift.json")) as f:
            self.assertEqual([p["build_id"] for p in json.load(f)["points"]], [10, 11, 12])

    def testUsageErrors(self):
        self.assertEqual(self.xtcp(), EXIT_USAGE)
        self.assertEqual(self.xtcp("fly"), EXIT_USAGE)
        self.assertEqual(self.xtcp("train", "--data", self.data), EXIT_USAGE)
        self.assertEqual(self.xtcp("rank", "--build", self.build), EXIT_USAGE)
        self.assertEqual(self.xtcp("sweep", "--data", self.data, "--format", "xml"), EXIT_USAGE)
        badConfig = self.writeText("bad.cfg", "no_such_option=1\n")
        self.assertEqual(self.xtcp("sweep", "--data", self.data, "--config", badConfig), EXIT_USAGE)
        self.assertEqual(self.xtcp("timeline", "--data", self.data, "--window", 1), EXIT_USAGE)
        self.assertEqual(self.xtcp("--help"), EXIT_OK)

    def testDataErrors(self):
        out = self.outDir("errors")
        missing = os.path.join(self.tmpdir, "missing.csv")
        self.assertEqual(self.xtcp("ingest", "--data", missing, "--out", out), EXIT_DATA)
        malformed = self.writeText("malformed.csv", "build,test,verdict,exec_time,f\n1,a,passed,1\n")
        self.assertEqual(self.xtcp("ingest", "--data", malformed, "--out", out), EXIT_DATA)
        self.assertEqual(self.xtcp("train", "--data", self.data, "--build", 2, "--out", out), EXIT_DATA)
        self.assertEqual(self.xtcp("train", "--data", self.data, "--build", 99, "--out", out), EXIT_DATA)
        badModel = self.writeText("model.json", "{}")
        self.assertEqual(self.xtcp("rank", "--data", self.data, "--build", self.build, "--model", badModel,
                                   "--out", out), EXIT_DATA)
        self.assertEqual(self.xtcp("drift", "--data", self.data, "--test", "nobody", "--out", out), EXIT_DATA)

    def testInvariantViolation(self):
        with unittest.mock.patch("xtcp.cli.run_command", side_effect=InvariantViolationError("broken")):
            self.assertEqual(self.xtcp("sweep", "--data", self.data), EXIT_INVARIANT)

    def testParser(self):
        args = build_argparser().parse_args(["drift", "--test", "t1", "--builds", "3", "4"])
        self.assertEqual(args.builds, [3, 4])
        self.assertEqual(args.format, "csv")
        self.assertEqual(args.out, ".")


class TestMemory(lsst.utils.tests.MemoryTestCase):
    pass


def setup_module(module):
    lsst.utils.tests.init()


if __name__ == "__main__":
    lsst.utils.tests.init()
    unittest.main()
