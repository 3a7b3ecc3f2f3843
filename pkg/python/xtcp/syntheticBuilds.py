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

__all__ = ["SyntheticBuildsConfig", "generate_synthetic"]

import logging

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from lsst.pex.config import Config, Field, FieldValidationError, ListField

from .buildHistory import Dataset, FeatureSchema, TestCaseRecord, Verdict

_LOG = logging.getLogger(__name__)


class SyntheticBuildsConfig(Config):
    """Configuration for generating a build history with a planted signal"""
    m = Field[int](
        default=50,
        doc="Number of builds.",
        check=lambda x: x >= 1,
    )
    n = Field[int](
        default=40,
        doc="Number of test cases in the suite.",
        check=lambda x: x >= 1,
    )
    p = Field[int](
        default=10,
        doc="Number of features.",
        check=lambda x: x >= 1,
    )
    failure_rate = Field[float](
        default=0.4,
        doc="Probability that a build has failing tests; in (0, 1).",
    )
    signal_features = ListField[int](
        default=[0],
        doc="Indices of the features that drive test failures.",
    )
    seed = Field[int](
        default=7,
        doc="Random number generator seed.",
    )
    signal_strength = Field[float](
        default=8.0,
        doc="Slope of the failure probability in the signal score; larger is more deterministic.",
        check=lambda x: x > 0,
    )
    test_failure_rate = Field[float](
        default=0.1,
        doc="Approximate fraction of the executed tests failing in a failed build; in (0, 1).",
    )
    execution_rate = Field[float](
        default=1.0,
        doc="Probability that a test is executed in a build; in (0, 1].",
    )
    mean_exec_time = Field[float](
        default=10.0,
        doc="Mean execution time of a test, in seconds.",
        check=lambda x: x > 0,
    )
    shift_build = Field[int](
        default=None,
        optional=True,
        doc="1-based build index from which shift_signal_features drive failures (None: no shift).",
        check=lambda x: x >= 1,
    )
    shift_signal_features = ListField[int](
        default=[1],
        doc="Signal features in effect from shift_build on.",
    )
    exec_time_feature = Field[int](
        default=None,
        optional=True,
        doc="Feature replaced by the test's execution time in the previous build it ran in "
            "(None: all features are random).",
    )
    exec_time_jitter = Field[float](
        default=0.1,
        doc="Log-normal sigma of the build-to-build variation of a test's execution time.",
        check=lambda x: x >= 0,
    )

    def validate(self):
        super().validate()
        if not 0.0 < self.failure_rate < 1.0:
            raise FieldValidationError(SyntheticBuildsConfig.failure_rate, self,
                                       f"failure_rate must be in (0, 1), not {self.failure_rate}")
        if not 0.0 < self.test_failure_rate < 1.0:
            raise FieldValidationError(SyntheticBuildsConfig.test_failure_rate, self,
                                       f"test_failure_rate must be in (0, 1), not {self.test_failure_rate}")
        if not 0.0 < self.execution_rate <= 1.0:
            raise FieldValidationError(SyntheticBuildsConfig.execution_rate, self,
                                       f"execution_rate must be in (0, 1], not {self.execution_rate}")
        for name in ("signal_features", "shift_signal_features"):
            indices = list(getattr(self, name))
            if not indices or len(set(indices)) != len(indices) or \
                    any(not 0 <= i < self.p for i in indices):
                raise FieldValidationError(getattr(SyntheticBuildsConfig, name), self,
                                           f"{name} must be distinct indices in [0, {self.p}), not {indices}")
        timeFeature = self.exec_time_feature
        if timeFeature is not None and (not 0 <= timeFeature < self.p or timeFeature in self.signal_features
                                        or timeFeature in self.shift_signal_features):
            raise FieldValidationError(SyntheticBuildsConfig.exec_time_feature, self,
                                       f"exec_time_feature must be a non-signal index in [0, {self.p}), "
                                       f"not {timeFeature}")


def generate_synthetic(config, seed=None):
    """Generate a build history in which failures follow planted features.

    Every build draws fresh standard normal features for each test. A build
    fails with probability ``failure_rate``; in a failed build each executed
    test fails with probability
    ``expit(signal_strength * (z - q))``, where ``z`` is the normalized sum
    of the signal features and ``q`` the normal quantile that makes roughly
    ``test_failure_rate`` of the tests fail. A failed build always has at
    least one failing test, the executed test with the largest ``z``.

    If ``exec_time_feature`` is set, that feature instead holds the test's
    execution time in the previous build it ran in, its base time before
    the first.

    Parameters
    ----------
    config : `SyntheticBuildsConfig`
        Generator configuration.
    seed : `int`, optional
        Random number generator seed; overrides ``config.seed``.

    Returns
    -------
    dataset : `Dataset`
        The generated history. Its metadata records the seed, the signal
        features, the shift and the ids of the failed builds.
    """
    config.validate()
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    schema = FeatureSchema(tuple(f"f{j}" for j in range(config.p)))
    testIds = [f"t{j:03d}" for j in range(config.n)]
    threshold = norm.ppf(1.0 - config.test_failure_rate)
    baseTimes = 0.1 + rng.exponential(config.mean_exec_time, size=config.n)
    lastTimes = baseTimes.copy()

    records = []
    failedBuilds = []
    for buildId in range(1, config.m + 1):
        buildFails = rng.random() < config.failure_rate
        executed = rng.random(config.n) < config.execution_rate
        if not executed.any():
            executed[rng.integers(config.n)] = True
        features = rng.standard_normal((config.n, config.p))
        times = baseTimes*rng.lognormal(0.0, config.exec_time_jitter, size=config.n)
        if config.exec_time_feature is not None:
            features[:, config.exec_time_feature] = lastTimes
        lastTimes[executed] = times[executed]
        draws = rng.random(config.n)

        if config.shift_build is not None and buildId >= config.shift_build:
            signal = list(config.shift_signal_features)
        else:
            signal = list(config.signal_features)
        score = features[:, signal].sum(axis=1)/np.sqrt(len(signal))

        fails = np.zeros(config.n, dtype=bool)
        if buildFails:
            fails = executed & (draws < expit(config.signal_strength*(score - threshold)))
            if not fails.any():
                fails[np.flatnonzero(executed)[np.argmax(score[executed])]] = True
            failedBuilds.append(buildId)

        for j in np.flatnonzero(executed):
            records.append(TestCaseRecord(build_id=buildId, test_id=testIds[j],
                                          verdict=Verdict.FAILED if fails[j] else Verdict.PASSED,
                                          execution_time=float(times[j]),
                                          features=tuple(features[j].tolist())))

    _LOG.debug("Generated %d records in %d builds (%d failed) with seed %d",
               len(records), config.m, len(failedBuilds), seed)
    metadata = {
        "generator": "synthetic",
        "seed": int(seed),
        "signal_features": [schema.names[i] for i in config.signal_features],
        "shift_build": config.shift_build,
        "shift_signal_features": [schema.names[i] for i in config.shift_signal_features],
        "exec_time_feature": (None if config.exec_time_feature is None
                              else schema.names[config.exec_time_feature]),
        "failed_builds": failedBuilds,
    }
    return Dataset.fromRecords(schema, records, metadata=metadata)
