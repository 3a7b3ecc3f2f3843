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

"""Per-build test case datasets: records, labelling, grading and splitting.
"""

__all__ = ["Verdict", "FeatureSchema", "TestCaseRecord", "BuildGroup", "Dataset", "ExperimentSplit",
           "GRADING_MODES", "assign_rank_labels", "grade_relevance", "label_dataset",
           "split_training_history", "make_experiment_split"]

import enum
import hashlib
import math
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import DatasetError, InsufficientTrainingDataError

GRADING_MODES = ("binary", "graded")

# Validation carve-out, as a fraction of the builds preceding the test build.
VALIDATION_NUMERATOR = 1
VALIDATION_DENOMINATOR = 5


class Verdict(enum.Enum):
    """Outcome of one test case in one build."""
    FAILED = "failed"
    PASSED = "passed"


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered, unique names of the numeric features of a dataset.

    Parameters
    ----------
    names : `tuple` [`str`]
        Feature identifiers, in column order.
    """

    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(str(name) for name in self.names)
        object.__setattr__(self, "names", names)
        if not names:
            raise DatasetError("A feature schema needs at least one feature.")
        if any(not name.strip() for name in names):
            raise DatasetError("Feature names must be non-empty.")
        if len(set(names)) != len(names):
            duplicates = sorted({name for name in names if names.count(name) > 1})
            raise DatasetError(f"Duplicate feature names: {duplicates}")

    def __len__(self):
        return len(self.names)

    @property
    def size(self):
        """Number of features, ``p``."""
        return len(self.names)

    def index(self, name):
        """Return the column index of the named feature."""
        try:
            return self.names.index(name)
        except ValueError:
            raise DatasetError(f"Unknown feature {name!r}") from None

    @cached_property
    def digest(self):
        """SHA-256 of the ordered feature names."""
        return hashlib.sha256("\n".join(self.names).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TestCaseRecord:
    """One execution of a test case in one build.

    ``missing`` lists the feature indices whose values were imputed on
    ingestion.
    """
    __test__ = False

    build_id: int
    test_id: str
    verdict: Verdict
    execution_time: float
    features: tuple[float, ...]
    missing: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(float(value) for value in self.features))
        object.__setattr__(self, "execution_time", float(self.execution_time))
        if not isinstance(self.verdict, Verdict):
            object.__setattr__(self, "verdict", Verdict(self.verdict))
        if not math.isfinite(self.execution_time) or self.execution_time < 0:
            raise DatasetError(f"Test {self.test_id!r} in build {self.build_id}: execution time must be "
                               f"finite and non-negative, not {self.execution_time}")
        if not all(math.isfinite(value) for value in self.features):
            raise DatasetError(f"Test {self.test_id!r} in build {self.build_id}: non-finite feature value")

    @property
    def failed(self):
        return self.verdict is Verdict.FAILED


@dataclass(frozen=True)
class BuildGroup:
    """All test case records of one build, with optional derived labels.

    Parameters
    ----------
    build_id : `int`
        Ordinal build identifier.
    time_index : `int`
        Position of the build in chronological order (0-based).
    records : `tuple` [`TestCaseRecord`]
        Records of the build.
    rank_labels : `tuple` [`int`], optional
        Ideal position of every record, 1 being the most relevant.
    relevance_grades : `tuple` [`int`], optional
        Relevance grade of every record; higher ranks earlier.
    """

    build_id: int
    time_index: int
    records: tuple[TestCaseRecord, ...]
    rank_labels: tuple[int, ...] | None = None
    relevance_grades: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        for record in self.records:
            if record.build_id != self.build_id:
                raise DatasetError(f"Record {record.test_id!r} belongs to build {record.build_id}, "
                                   f"not {self.build_id}")
        testIds = [record.test_id for record in self.records]
        if len(set(testIds)) != len(testIds):
            duplicates = sorted({t for t in testIds if testIds.count(t) > 1})
            raise DatasetError(f"Build {self.build_id} has duplicate test ids: {duplicates}")
        n = len(self.records)
        if self.rank_labels is not None:
            labels = tuple(int(label) for label in self.rank_labels)
            object.__setattr__(self, "rank_labels", labels)
            if sorted(labels) != list(range(1, n + 1)):
                raise DatasetError(f"Rank labels of build {self.build_id} are not a permutation of 1..{n}")
        if self.relevance_grades is not None:
            grades = tuple(int(grade) for grade in self.relevance_grades)
            object.__setattr__(self, "relevance_grades", grades)
            if len(grades) != n or any(grade < 0 for grade in grades):
                raise DatasetError(f"Relevance grades of build {self.build_id} must be {n} "
                                   "non-negative integers")
            if self.rank_labels is not None:
                byPosition = [grade for _, grade in sorted(zip(self.rank_labels, grades))]
                if any(a < b for a, b in zip(byPosition, byPosition[1:])):
                    raise DatasetError(f"Relevance grades of build {self.build_id} increase with "
                                       "rank position")

    def __len__(self):
        return len(self.records)

    @cached_property
    def features(self):
        """Feature matrix, shape ``(n, p)``."""
        matrix = np.array([record.features for record in self.records], dtype=np.float64)
        if matrix.ndim != 2:
            matrix = matrix.reshape(len(self.records), 0 if not self.records else -1)
        matrix.setflags(write=False)
        return matrix

    @cached_property
    def test_ids(self):
        return tuple(record.test_id for record in self.records)

    @cached_property
    def execution_times(self):
        times = np.array([record.execution_time for record in self.records], dtype=np.float64)
        times.setflags(write=False)
        return times

    @cached_property
    def failed(self):
        """Boolean array flagging the failed records."""
        mask = np.array([record.failed for record in self.records], dtype=bool)
        mask.setflags(write=False)
        return mask

    @property
    def num_failed(self):
        return int(self.failed.sum())

    @property
    def has_failures(self):
        return self.num_failed > 0

    def record(self, testId):
        """Return the record of ``testId``."""
        for record in self.records:
            if record.test_id == testId:
                return record
        raise DatasetError(f"Test {testId!r} was not executed in build {self.build_id}")

    def contains(self, testId):
        return testId in self.test_ids


@dataclass(frozen=True)
class Dataset:
    """Chronologically ordered builds sharing one feature schema.

    ``metadata`` carries free-form provenance (for example the ground truth
    of a synthetic dataset) and does not take part in comparisons.
    """

    schema: FeatureSchema
    builds: tuple[BuildGroup, ...]
    metadata: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "builds", tuple(self.builds))
        if not self.builds:
            raise DatasetError("A dataset needs at least one build.")
        for i, group in enumerate(self.builds):
            if group.time_index != i:
                raise DatasetError(f"Build {group.build_id} has time index {group.time_index}, expected {i}")
            if i > 0 and group.build_id <= self.builds[i - 1].build_id:
                raise DatasetError("Build ids must be strictly increasing in chronological order; "
                                   f"{group.build_id} follows {self.builds[i - 1].build_id}")
            for record in group.records:
                if len(record.features) != self.schema.size:
                    raise DatasetError(f"Test {record.test_id!r} in build {group.build_id} has "
                                       f"{len(record.features)} features; the schema has {self.schema.size}")

    @classmethod
    def fromRecords(cls, schema, records, metadata=None):
        """Group records by build into a chronologically ordered dataset.

        Parameters
        ----------
        schema : `FeatureSchema`
            Feature schema of the records.
        records : iterable of `TestCaseRecord`
            Records in any build order; the order within a build is kept.
        metadata : `dict`, optional
            Provenance to attach to the dataset.

        Returns
        -------
        dataset : `Dataset`
        """
        byBuild = {}
        for record in records:
            byBuild.setdefault(record.build_id, []).append(record)
        builds = [BuildGroup(build_id=buildId, time_index=i, records=tuple(byBuild[buildId]))
                  for i, buildId in enumerate(sorted(byBuild))]
        return cls(schema=schema, builds=tuple(builds), metadata=dict(metadata or {}))

    def __len__(self):
        return len(self.builds)

    @property
    def build_ids(self):
        return tuple(group.build_id for group in self.builds)

    @property
    def num_records(self):
        return sum(len(group) for group in self.builds)

    def buildIndex(self, buildId):
        """Return the chronological index of ``buildId``."""
        for i, group in enumerate(self.builds):
            if group.build_id == buildId:
                return i
        raise DatasetError(f"Build {buildId} is not in the dataset")

    def getBuild(self, buildId):
        return self.builds[self.buildIndex(buildId)]

    def withBuilds(self, builds):
        """Return a copy of this dataset with ``builds`` replaced."""
        return replace(self, builds=tuple(builds))


@dataclass(frozen=True)
class ExperimentSplit:
    """Hold-out partition of a dataset around one test build."""

    schema: FeatureSchema
    train: tuple[BuildGroup, ...]
    validation: tuple[BuildGroup, ...]
    test: BuildGroup

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "validation", tuple(self.validation))
        seen = set()
        for group in self.train + self.validation:
            if group.time_index >= self.test.time_index:
                raise DatasetError(f"Build {group.build_id} does not precede test build {self.test.build_id}")
            if group.build_id in seen:
                raise DatasetError(f"Build {group.build_id} appears twice in the split")
            seen.add(group.build_id)

    @property
    def history(self):
        """All builds preceding the test build, training then validation."""
        return self.train + self.validation


def assign_rank_labels(group):
    """Label the records of a build with their ideal positions.

    Failed tests come before passed ones; within a verdict, shorter
    execution times come first and remaining ties are broken by test id.

    Parameters
    ----------
    group : `BuildGroup`
        Build to label.

    Returns
    -------
    labelled : `BuildGroup`
        Copy of ``group`` with ``rank_labels`` set and grades cleared.

    Raises
    ------
    DatasetError
        Raised if the build has no records.
    """
    if len(group) == 0:
        raise DatasetError(f"Cannot label empty build {group.build_id}")
    order = sorted(range(len(group)),
                   key=lambda i: (not group.records[i].failed,
                                  group.records[i].execution_time,
                                  group.records[i].test_id))
    labels = [0]*len(group)
    for position, i in enumerate(order, start=1):
        labels[i] = position
    return replace(group, rank_labels=tuple(labels), relevance_grades=None)


def grade_relevance(group, mode="binary", numGrades=4):
    """Derive integer relevance grades from verdicts or rank labels.

    Parameters
    ----------
    group : `BuildGroup`
        Labelled build.
    mode : `str`
        ``"binary"``: 1 for failed tests, 0 otherwise. ``"graded"``:
        ``floor((n - position) * numGrades / n)`` clamped to
        ``[0, numGrades - 1]``.
    numGrades : `int`
        Number of grades in graded mode; at least 2.

    Returns
    -------
    graded : `BuildGroup`
        Copy of ``group`` with ``relevance_grades`` set.
    """
    if mode not in GRADING_MODES:
        raise ValueError(f"Unknown grading mode {mode!r}; expected one of {GRADING_MODES}")
    if group.rank_labels is None:
        raise DatasetError(f"Build {group.build_id} has no rank labels; call assign_rank_labels first")
    if mode == "binary":
        grades = tuple(1 if record.failed else 0 for record in group.records)
    else:
        if numGrades < 2:
            raise ValueError(f"Graded relevance needs at least 2 grades, not {numGrades}")
        n = len(group)
        grades = tuple(min(numGrades - 1, max(0, ((n - position)*numGrades)//n))
                       for position in group.rank_labels)
    return replace(group, relevance_grades=grades)


def label_dataset(dataset, mode="binary", numGrades=4):
    """Assign rank labels and relevance grades to every build."""
    return dataset.withBuilds(grade_relevance(assign_rank_labels(group), mode, numGrades)
                              for group in dataset.builds)


def split_training_history(builds):
    """Split chronologically ordered builds into training and validation.

    The validation partition is the chronologically last
    ``ceil(len(builds) / 5)`` builds.

    Returns
    -------
    train, validation : `tuple` [`BuildGroup`]
    """
    builds = tuple(builds)
    k = len(builds)
    numValidation = -(-k*VALIDATION_NUMERATOR//VALIDATION_DENOMINATOR)
    return builds[:k - numValidation], builds[k - numValidation:]


def make_experiment_split(dataset, targetBuild):
    """Hold out ``targetBuild`` for testing and train on its predecessors.

    Parameters
    ----------
    dataset : `Dataset`
        The dataset.
    targetBuild : `int`
        Id of the build to test on.

    Returns
    -------
    split : `ExperimentSplit`

    Raises
    ------
    DatasetError
        Raised if ``targetBuild`` is not in the dataset.
    InsufficientTrainingDataError
        Raised if fewer than two builds precede ``targetBuild``, which would
        leave the training partition empty after the validation carve-out.
    """
    index = dataset.buildIndex(targetBuild)
    train, validation = split_training_history(dataset.builds[:index])
    if not train:
        raise InsufficientTrainingDataError(buildId=targetBuild, numPredecessors=index, required=2)
    return ExperimentSplit(schema=dataset.schema, train=train, validation=validation,
                           test=dataset.builds[index])
