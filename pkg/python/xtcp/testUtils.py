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

__all__ = ["makeRecord", "makeGroup", "makeStump", "makeAdditiveModel", "makeRandomModel",
           "makeSyntheticConfig", "makeFastExperimentConfig"]

import numpy as np

from .buildHistory import BuildGroup, FeatureSchema, TestCaseRecord, Verdict
from .experiment import RankingExperimentConfig
from .lambdaMart import LtrModel
from .regressionTree import LEAF, RegressionTree
from .syntheticBuilds import SyntheticBuildsConfig


def makeRecord(testId, failed=False, time=1.0, features=(0.0,), buildId=1):
    """Make a `TestCaseRecord` with terse arguments."""
    return TestCaseRecord(build_id=buildId, test_id=testId,
                          verdict=Verdict.FAILED if failed else Verdict.PASSED,
                          execution_time=time, features=tuple(features))


def makeGroup(records, buildId=1, timeIndex=0):
    return BuildGroup(build_id=buildId, time_index=timeIndex, records=tuple(records))


def makeStump(feature, threshold, leftValue, rightValue):
    """Tree with a single split."""
    return RegressionTree(feature=[feature, LEAF, LEAF], threshold=[threshold, 0.0, 0.0],
                          left=[1, LEAF, LEAF], right=[2, LEAF, LEAF], value=[0.0, leftValue, rightValue])


def makeAdditiveModel(rng, numFeatures, numTrees, learningRate=1.0):
    """Model whose trees each split on a single feature.

    Parameters
    ----------
    rng : `numpy.random.Generator`
        Random number generator.
    numFeatures : `int`
        Number of features.
    numTrees : `int`
        Number of single-split trees.
    learningRate : `float`, optional
        Shrinkage of every tree.

    Returns
    -------
    model : `LtrModel`
    """
    schema = FeatureSchema(tuple(f"f{j}" for j in range(numFeatures)))
    trees = [makeStump(int(rng.integers(numFeatures)), float(rng.normal()), float(rng.normal()),
                       float(rng.normal())) for _ in range(numTrees)]
    return LtrModel(trees, learningRate, schema)


def _randomTree(rng, numFeatures, maxDepth):
    feature, threshold, left, right, value = [], [], [], [], []

    def grow(depth):
        node = len(feature)
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(rng.normal()))
        if depth < maxDepth and rng.random() < 0.7:
            feature[node] = int(rng.integers(numFeatures))
            threshold[node] = float(rng.normal())
            left[node] = grow(depth + 1)
            right[node] = grow(depth + 1)
        return node

    grow(0)
    return RegressionTree(feature=feature, threshold=threshold, left=left, right=right, value=value)


def makeRandomModel(rng, numFeatures, numTrees, maxDepth=4, learningRate=0.1):
    """Model of random trees, with interactions between features."""
    schema = FeatureSchema(tuple(f"f{j}" for j in range(numFeatures)))
    trees = [_randomTree(rng, numFeatures, maxDepth) for _ in range(numTrees)]
    return LtrModel(trees, learningRate, schema)


def makeSyntheticConfig(m=50, n=40, p=10, seed=7, **kwargs):
    """Generator config for a planted signal on feature 0."""
    config = SyntheticBuildsConfig()
    config.m = m
    config.n = n
    config.p = p
    config.seed = seed
    for name, value in kwargs.items():
        setattr(config, name, value)
    return config


def makeFastExperimentConfig(numIterations=30, evalEvery=10, maxBackground=200, **kwargs):
    """Experiment config with fewer trees and a smaller background."""
    config = RankingExperimentConfig()
    config.train.num_iterations = numIterations
    config.train.eval_every = evalEvery
    config.explain.max_background = maxBackground
    for name, value in kwargs.items():
        setattr(config, name, value)
    return config
