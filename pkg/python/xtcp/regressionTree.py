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

"""Newton-boosting regression trees stored as flat node arrays.
"""

__all__ = ["RegressionTree", "fit_tree", "LEAF", "EPSILON"]

from dataclasses import dataclass

import numpy as np

LEAF = -1
EPSILON = 1e-10


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Binary regression tree in array form.

    Node 0 is the root. For an internal node ``i`` records with
    ``x[feature[i]] <= threshold[i]`` go to ``left[i]``, the others to
    ``right[i]``. Leaves have ``feature == LEAF`` and predict ``value``.
    Internal nodes keep the value they had as leaves.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        for name, dtype in (("feature", np.int64), ("threshold", np.float64), ("left", np.int64),
                            ("right", np.int64), ("value", np.float64)):
            array = np.array(getattr(self, name), dtype=dtype).reshape(-1)
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        size = self.feature.size
        if size == 0:
            raise ValueError("A tree needs at least one node")
        if any(getattr(self, name).size != size for name in ("threshold", "left", "right", "value")):
            raise ValueError("Tree node arrays differ in length")
        internal = self.feature != LEAF
        children = np.concatenate([self.left[internal], self.right[internal]])
        if np.any(self.feature[internal] < 0) or np.any(children <= 0) or np.any(children >= size) \
                or np.unique(children).size != children.size or children.size != size - 1:
            raise ValueError("Tree node arrays do not form a binary tree rooted at node 0")
        parents = np.flatnonzero(internal)
        if np.any(self.left[parents] <= parents) or np.any(self.right[parents] <= parents):
            raise ValueError("Tree children must follow their parent node")

    @classmethod
    def leaf(cls, value):
        """Single-leaf tree predicting ``value``."""
        return cls(feature=[LEAF], threshold=[0.0], left=[LEAF], right=[LEAF], value=[value])

    @property
    def numNodes(self):
        return int(self.feature.size)

    @property
    def numLeaves(self):
        return int(np.count_nonzero(self.feature == LEAF))

    @property
    def splitFeatures(self):
        """Feature index of every internal node, in node order."""
        return self.feature[self.feature != LEAF]

    def checkFeatures(self, numFeatures):
        if self.splitFeatures.size and self.splitFeatures.max() >= numFeatures:
            raise ValueError(f"Tree splits on feature {self.splitFeatures.max()} but only "
                             f"{numFeatures} features exist")

    def apply(self, features):
        """Leaf index reached by every row of ``features``."""
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        nodes = np.zeros(features.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[nodes] != LEAF)
        while active.size:
            current = nodes[active]
            goLeft = features[active, self.feature[current]] <= self.threshold[current]
            nodes[active] = np.where(goLeft, self.left[current], self.right[current])
            active = active[self.feature[nodes[active]] != LEAF]
        return nodes

    def predict(self, features):
        """Leaf value for every row of ``features``."""
        return self.value[self.apply(features)]

    def toDict(self):
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(), "value": self.value.tolist()}

    @classmethod
    def fromDict(cls, data):
        return cls(**{name: data[name] for name in ("feature", "threshold", "left", "right", "value")})


class _TreeBuilder:
    """Grow one tree best-first on Newton gains."""

    def __init__(self, features, gradients, hessians, numLeaves, minDataInLeaf):
        self.features = features
        self.gradients = gradients
        self.hessians = hessians
        self.numLeaves = numLeaves
        self.minDataInLeaf = minDataInLeaf
        self.nodes = []

    def addNode(self, indices):
        value = self.gradients[indices].sum()/(self.hessians[indices].sum() + EPSILON)
        self.nodes.append([LEAF, 0.0, LEAF, LEAF, float(value)])
        return len(self.nodes) - 1

    def findSplit(self, indices):
        """Return ``(gain, feature, threshold)`` of the best split, or `None`.

        Ties go to the lowest feature, then the lowest threshold.
        """
        count = indices.size
        if count < 2*self.minDataInLeaf:
            return None
        g = self.gradients[indices]
        if not np.any(g):
            return None
        h = self.hessians[indices]
        gTotal = g.sum()
        hTotal = h.sum()
        parent = gTotal*gTotal/(hTotal + EPSILON)
        # Split after sorted position i puts i + 1 records on the left.
        candidates = np.arange(self.minDataInLeaf - 1, count - self.minDataInLeaf)
        best = None
        for j in range(self.features.shape[1]):
            x = self.features[indices, j]
            order = np.argsort(x, kind="stable")
            xSorted = x[order]
            valid = candidates[xSorted[candidates] < xSorted[candidates + 1]]
            if valid.size == 0:
                continue
            gLeft = np.cumsum(g[order])[valid]
            hLeft = np.cumsum(h[order])[valid]
            gRight = gTotal - gLeft
            hRight = hTotal - hLeft
            gains = gLeft*gLeft/(hLeft + EPSILON) + gRight*gRight/(hRight + EPSILON) - parent
            b = int(np.argmax(gains))
            if gains[b] > 0 and (best is None or gains[b] > best[0]):
                lower = xSorted[valid[b]]
                upper = xSorted[valid[b] + 1]
                threshold = 0.5*(lower + upper)
                if not lower <= threshold < upper:
                    threshold = lower
                best = (float(gains[b]), j, float(threshold))
        return best

    def build(self):
        root = np.arange(self.features.shape[0])
        self.addNode(root)
        members = {0: root}
        splits = {0: self.findSplit(root)}
        leaves = 1
        while leaves < self.numLeaves:
            open_ = [(split[0], node) for node, split in splits.items() if split is not None]
            if not open_:
                break
            bestGain = max(gain for gain, _ in open_)
            node = min(node for gain, node in open_ if gain == bestGain)
            _, feature, threshold = splits.pop(node)
            indices = members.pop(node)
            goLeft = self.features[indices, feature] <= threshold
            leftIndices = indices[goLeft]
            rightIndices = indices[~goLeft]
            left = self.addNode(leftIndices)
            right = self.addNode(rightIndices)
            self.nodes[node][:4] = [feature, threshold, left, right]
            members[left] = leftIndices
            members[right] = rightIndices
            splits[left] = self.findSplit(leftIndices)
            splits[right] = self.findSplit(rightIndices)
            leaves += 1
        columns = list(zip(*self.nodes))
        return RegressionTree(feature=columns[0], threshold=columns[1], left=columns[2], right=columns[3],
                              value=columns[4])


def fit_tree(features, gradients, hessians, config):
    """Fit one regression tree to Newton boosting statistics.

    Leaves are grown best-first: the leaf whose best split has the largest
    gain ``GL**2/(HL+eps) + GR**2/(HR+eps) - G**2/(H+eps)`` is split next,
    over exact thresholds halfway between consecutive distinct values.
    Growth stops at ``config.num_leaves`` leaves or when no split with
    positive gain leaves ``config.min_data_in_leaf`` records on each side.
    Each leaf predicts ``sum(g)/(sum(h) + eps)``.

    Parameters
    ----------
    features : array-like, shape ``(n, p)``
        Training features.
    gradients, hessians : array-like, shape ``(n,)``
        Per-record first and second derivatives; gradients point uphill.
    config : `TrainingConfig`
        Provides ``num_leaves`` and ``min_data_in_leaf``.

    Returns
    -------
    tree : `RegressionTree`
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    gradients = np.asarray(gradients, dtype=np.float64)
    hessians = np.asarray(hessians, dtype=np.float64)
    n = features.shape[0]
    if n < 1:
        raise ValueError("Cannot fit a tree to no records")
    if gradients.shape != (n,) or hessians.shape != (n,):
        raise ValueError(f"Expected {n} gradients and hessians, got {gradients.size} and {hessians.size}")
    return _TreeBuilder(features, gradients, hessians, config.num_leaves, config.min_data_in_leaf).build()
