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

import unittest

import numpy as np

import lsst.utils.tests

from xtcp import EPSILON, LEAF, RegressionTree, TrainingConfig, fit_tree
from xtcp.testUtils import makeRandomModel, makeStump


def makeConfig(numLeaves=31, minDataInLeaf=1):
    config = TrainingConfig()
    config.num_leaves = numLeaves
    config.min_data_in_leaf = minDataInLeaf
    return config


def walk(tree, x):
    """Follow one feature vector from the root to its leaf."""
    node = 0
    while tree.feature[node] != LEAF:
        node = tree.left[node] if x[tree.feature[node]] <= tree.threshold[node] else tree.right[node]
    return tree.value[node]


class FitTreeTestCase(lsst.utils.tests.TestCase):

    def testZeroGradients(self):
        rng = np.random.default_rng(1)
        tree = fit_tree(rng.normal(size=(50, 3)), np.zeros(50), np.ones(50), makeConfig())
        self.assertEqual(tree.numNodes, 1)
        self.assertEqual(tree.value[0], 0.0)

    def testPerfectSeparation(self):
        features = np.array([[0.0, 5.0], [0.0, 3.0], [1.0, 4.0], [1.0, 6.0]])
        tree = fit_tree(features, [1.0, 1.0, -1.0, -1.0], np.ones(4), makeConfig())
        self.assertEqual(tree.numNodes, 3)
        self.assertEqual(tree.feature[0], 0)
        self.assertEqual(tree.threshold[0], 0.5)
        self.assertFloatsAlmostEqual(tree.value[tree.left[0]], 1.0, atol=1e-9, rtol=0)
        self.assertFloatsAlmostEqual(tree.value[tree.right[0]], -1.0, atol=1e-9, rtol=0)
        self.assertFloatsEqual(tree.predict(features), tree.value[[1, 1, 2, 2]])

    def testConstantFeatures(self):
        gradients = np.array([0.5, -2.0, 1.0, 3.0])
        hessians = np.array([0.25, 0.5, 1.0, 0.1])
        tree = fit_tree(np.ones((4, 2)), gradients, hessians, makeConfig())
        self.assertEqual(tree.numNodes, 1)
        self.assertEqual(tree.value[0], gradients.sum()/(hessians.sum() + EPSILON))

    def testTieGoesToLowestFeature(self):
        x = np.arange(6, dtype=float)
        tree = fit_tree(np.column_stack([x, x, x]), [1, 1, 1, -1, -1, -1], np.ones(6), makeConfig())
        self.assertEqual(tree.feature[0], 0)
        self.assertEqual(tree.threshold[0], 2.5)

    def testMinDataInLeaf(self):
        rng = np.random.default_rng(2)
        features = rng.normal(size=(100, 4))
        gradients = np.sign(features[:, 0]) + 0.1*rng.normal(size=100)
        tree = fit_tree(features[:9], gradients[:9], np.ones(9), makeConfig(minDataInLeaf=5))
        self.assertEqual(tree.numNodes, 1)

        tree = fit_tree(features, gradients, np.ones(100), makeConfig(numLeaves=6, minDataInLeaf=7))
        self.assertLessEqual(tree.numLeaves, 6)
        self.assertGreater(tree.numLeaves, 1)
        self.assertEqual(tree.feature[0], 0)
        leaves, counts = np.unique(tree.apply(features), return_counts=True)
        self.assertTrue(np.all(tree.feature[leaves] == LEAF))
        self.assertTrue(np.all(counts >= 7))

    def testErrors(self):
        with self.assertRaises(ValueError):
            fit_tree(np.zeros((3, 2)), np.zeros(2), np.ones(3), makeConfig())
        with self.assertRaises(ValueError):
            fit_tree(np.zeros((0, 2)), np.zeros(0), np.zeros(0), makeConfig())


class RegressionTreeTestCase(lsst.utils.tests.TestCase):

    def testPredictMatchesWalk(self):
        rng = np.random.default_rng(3)
        model = makeRandomModel(rng, 5, 20)
        features = rng.normal(size=(200, 5))
        for tree in model.trees:
            expected = np.array([walk(tree, x) for x in features])
            self.assertFloatsEqual(tree.predict(features), expected)

    def testStump(self):
        tree = makeStump(1, 0.0, -2.0, 3.0)
        self.assertEqual(tree.numLeaves, 2)
        self.assertEqual(tree.splitFeatures.tolist(), [1])
        self.assertFloatsEqual(tree.predict([[5.0, 0.0], [5.0, 0.1]]), np.array([-2.0, 3.0]))
        tree.checkFeatures(2)
        with self.assertRaises(ValueError):
            tree.checkFeatures(1)

    def testDictRoundTrip(self):
        tree = makeRandomModel(np.random.default_rng(4), 3, 1, maxDepth=5).trees[0]
        copy = RegressionTree.fromDict(tree.toDict())
        for name in ("feature", "threshold", "left", "right", "value"):
            self.assertTrue(np.array_equal(getattr(copy, name), getattr(tree, name)))

    def testMalformed(self):
        with self.assertRaises(ValueError):
            RegressionTree(feature=[], threshold=[], left=[], right=[], value=[])
        with self.assertRaises(ValueError):
            RegressionTree(feature=[0, LEAF], threshold=[0.0, 0.0], left=[1, LEAF], right=[2, LEAF],
                           value=[0.0, 1.0])
        with self.assertRaises(ValueError):
            RegressionTree(feature=[LEAF, 0, LEAF], threshold=[0.0, 0.0, 0.0], left=[LEAF, 0, LEAF],
                           right=[LEAF, 2, LEAF], value=[0.0, 1.0, 2.0])
        with self.assertRaises(ValueError):
            RegressionTree(feature=[0, LEAF, LEAF], threshold=[0.0], left=[1, LEAF, LEAF],
                           right=[2, LEAF, LEAF], value=[0.0, 1.0, 2.0])
        tree = RegressionTree.leaf(2.5)
        self.assertEqual(tree.predict(np.zeros((3, 4))).tolist(), [2.5, 2.5, 2.5])
        with self.assertRaises(ValueError):
            tree.value[0] = 1.0


class TestMemory(lsst.utils.tests.MemoryTestCase):
    pass


def setup_module(module):
    lsst.utils.tests.init()


if __name__ == "__main__":
    lsst.utils.tests.init()
    unittest.main()
