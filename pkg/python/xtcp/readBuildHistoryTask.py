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

__all__ = ["ReadBuildHistoryConfig", "ReadBuildHistoryTask", "parse_csv", "emit_csv", "REQUIRED_COLUMNS"]

import csv
import io
import os

import numpy as np
import pandas as pd

import lsst.pex.config as pexConfig
import lsst.pipe.base as pipeBase

from .buildHistory import Dataset, FeatureSchema, TestCaseRecord, Verdict
from .errors import DatasetError, DatasetParseError

REQUIRED_COLUMNS = ("build", "test", "verdict", "exec_time")


class ReadBuildHistoryConfig(pexConfig.Config):
    build_column = pexConfig.Field[str](
        default="build",
        doc="Name of the column holding the ordinal build id.",
    )
    test_column = pexConfig.Field[str](
        default="test",
        doc="Name of the column holding the test case id.",
    )
    verdict_column = pexConfig.Field[str](
        default="verdict",
        doc="Name of the column holding the test verdict.",
    )
    exec_time_column = pexConfig.Field[str](
        default="exec_time",
        doc="Name of the column holding the execution time in seconds.",
    )
    delimiter = pexConfig.Field[str](
        default=",",
        doc="Field delimiter of the input file.",
        check=lambda x: len(x) == 1,
    )
    missing_policy = pexConfig.ChoiceField[str](
        default="impute",
        doc="How to handle empty or non-numeric feature values.",
        allowed={
            "impute": "Replace with impute_value and flag the record.",
            "reject": "Fail with the offending line number.",
        },
    )
    impute_value = pexConfig.Field[float](
        default=0.0,
        doc="Value substituted for missing feature values when missing_policy is 'impute'.",
    )
    failed_tokens = pexConfig.ListField[str](
        default=["failed", "fail", "f"],
        doc="Verdict tokens meaning 'failed' (case-insensitive).",
    )
    passed_tokens = pexConfig.ListField[str](
        default=["passed", "pass", "p"],
        doc="Verdict tokens meaning 'passed' (case-insensitive).",
    )

    def validate(self):
        super().validate()
        columns = [self.build_column, self.test_column, self.verdict_column, self.exec_time_column]
        if len(set(columns)) != len(columns):
            raise pexConfig.FieldValidationError(ReadBuildHistoryConfig.build_column, self,
                                                 f"Column names must be distinct: {columns}")
        failed = {token.lower() for token in self.failed_tokens}
        passed = {token.lower() for token in self.passed_tokens}
        if not failed or not passed:
            raise pexConfig.FieldValidationError(ReadBuildHistoryConfig.failed_tokens, self,
                                                 "Both verdict token lists must be non-empty")
        if failed & passed:
            raise pexConfig.FieldValidationError(ReadBuildHistoryConfig.failed_tokens, self,
                                                 f"Tokens {sorted(failed & passed)} mean both verdicts")


class ReadBuildHistoryTask(pipeBase.Task):
    """Read a build history from a delimited text file, and write the
    canonical form back.

    The input has one row per test case execution. Besides the build, test,
    verdict and execution time columns every column is a numeric feature, in
    header order.
    """
    _DefaultName = "readBuildHistory"
    ConfigClass = ReadBuildHistoryConfig

    def run(self, source, sourceName=None):
        """Read a build history.

        Parameters
        ----------
        source : `str`, `os.PathLike`, `bytes` or binary file-like
            File to read, or its contents.
        sourceName : `str`, optional
            Name used in error messages; defaults to the path.

        Returns
        -------
        dataset : `Dataset`
        """
        self.config.validate()
        if isinstance(source, (str, os.PathLike)):
            sourceName = sourceName or os.fspath(source)
            try:
                with open(source, "rb") as f:
                    data = f.read()
            except OSError as e:
                raise DatasetError(f"Cannot read build history {sourceName}: {e.strerror}") from e
        elif isinstance(source, bytes):
            data = source
        else:
            data = source.read()
        sourceName = sourceName or "<stream>"
        try:
            text = data.decode("utf-8-sig")
        except UnicodeDecodeError as e:
            raise DatasetParseError(f"input is not UTF-8 ({e.reason})", source=sourceName) from e

        dataset = self.parse(text, sourceName)
        self.log.info("Read %d records in %d builds with %d features from %s",
                      dataset.num_records, len(dataset), dataset.schema.size, sourceName)
        return dataset

    def parse(self, text, sourceName="<stream>"):
        """Parse decoded CSV text into a `Dataset`."""
        config = self.config
        reader = csv.reader(io.StringIO(text, newline=""), delimiter=config.delimiter)
        try:
            header = [name.strip() for name in next(reader)]
        except StopIteration:
            raise DatasetParseError("empty input, expected a header row", lineNumber=1,
                                    source=sourceName) from None
        except csv.Error as e:
            raise DatasetParseError(str(e), lineNumber=1, source=sourceName) from e

        columns = (config.build_column, config.test_column, config.verdict_column, config.exec_time_column)
        missingColumns = [name for name in columns if name not in header]
        if missingColumns:
            raise DatasetParseError(f"header lacks required column(s) {missingColumns}", lineNumber=1,
                                    source=sourceName)
        if len(set(header)) != len(header):
            raise DatasetParseError("header has duplicate column names", lineNumber=1, source=sourceName)
        featureNames = [name for name in header if name not in columns]
        if not featureNames:
            raise DatasetParseError("header has no feature columns", lineNumber=1, source=sourceName)

        rows = []
        lineNumbers = []
        try:
            for row in reader:
                if not row:
                    continue
                if len(row) != len(header):
                    raise DatasetParseError(f"expected {len(header)} fields, found {len(row)}",
                                            lineNumber=reader.line_num, source=sourceName)
                rows.append(row)
                lineNumbers.append(reader.line_num)
        except csv.Error as e:
            raise DatasetParseError(str(e), lineNumber=reader.line_num, source=sourceName) from e
        if not rows:
            raise DatasetParseError("no records after the header", lineNumber=2, source=sourceName)

        frame = pd.DataFrame(rows, columns=header, dtype=str)
        frame.index = pd.Index(lineNumbers, name="line")

        buildIds = self._parseBuildIds(frame[config.build_column], sourceName)
        verdicts = self._parseVerdicts(frame[config.verdict_column], sourceName)
        execTimes = self._parseExecTimes(frame[config.exec_time_column], sourceName)
        testIds = frame[config.test_column].str.strip()
        emptyIds = testIds == ""
        if emptyIds.any():
            raise DatasetParseError("empty test id", lineNumber=int(testIds.index[emptyIds.argmax()]),
                                    source=sourceName)

        features = frame[featureNames].apply(lambda column: pd.to_numeric(column.str.strip(),
                                                                          errors="coerce"))
        values = features.to_numpy(dtype=np.float64)
        missing = ~np.isfinite(values)
        if missing.any():
            if config.missing_policy == "reject":
                row, col = np.argwhere(missing)[0]
                value = frame[featureNames[col]].iloc[row]
                raise DatasetParseError(f"missing or non-numeric value {value!r} "
                                        f"in feature column {featureNames[col]!r}",
                                        lineNumber=int(frame.index[row]), source=sourceName)
            values = np.where(missing, config.impute_value, values)
            self.log.warning("Imputed %d missing feature value(s) in %d record(s) of %s with %g",
                             int(missing.sum()), int(missing.any(axis=1).sum()), sourceName,
                             config.impute_value)

        records = []
        seen = {}
        for i, lineNumber in enumerate(frame.index):
            key = (int(buildIds[i]), testIds.iloc[i])
            if key in seen:
                raise DatasetParseError(f"test {key[1]!r} appears twice in build {key[0]} "
                                        f"(first on line {seen[key]})", lineNumber=int(lineNumber),
                                        source=sourceName)
            seen[key] = int(lineNumber)
            records.append(TestCaseRecord(build_id=key[0], test_id=key[1], verdict=verdicts[i],
                                          execution_time=float(execTimes[i]),
                                          features=tuple(values[i].tolist()),
                                          missing=tuple(np.flatnonzero(missing[i]).tolist())))
        return Dataset.fromRecords(FeatureSchema(tuple(featureNames)), records,
                                   metadata={"source": sourceName})

    def _parseBuildIds(self, column, sourceName):
        numbers = pd.to_numeric(column.str.strip(), errors="coerce").to_numpy(dtype=np.float64)
        bad = ~np.isfinite(numbers) | (numbers != np.round(numbers))
        if bad.any():
            i = int(bad.argmax())
            raise DatasetParseError(f"build id {column.iloc[i]!r} is not an integer",
                                    lineNumber=int(column.index[i]), source=sourceName)
        return numbers.astype(np.int64)

    def _parseVerdicts(self, column, sourceName):
        tokens = {token.lower(): Verdict.FAILED for token in self.config.failed_tokens}
        tokens.update({token.lower(): Verdict.PASSED for token in self.config.passed_tokens})
        verdicts = column.str.strip().str.lower().map(tokens)
        unknown = verdicts.isna().to_numpy()
        if unknown.any():
            i = int(unknown.argmax())
            raise DatasetParseError(f"unknown verdict {column.iloc[i]!r}",
                                    lineNumber=int(column.index[i]), source=sourceName)
        return verdicts.tolist()

    def _parseExecTimes(self, column, sourceName):
        times = pd.to_numeric(column.str.strip(), errors="coerce").to_numpy(dtype=np.float64)
        bad = ~np.isfinite(times) | (times < 0)
        if bad.any():
            i = int(bad.argmax())
            raise DatasetParseError(f"execution time {column.iloc[i]!r} is not a non-negative number",
                                    lineNumber=int(column.index[i]), source=sourceName)
        return times

    def write(self, dataset, destination=None):
        """Write ``dataset`` in canonical form.

        The canonical form uses the configured column names, a comma
        separator, builds in chronological order and floats written with
        17 significant digits, so reading it back reproduces the dataset.
        Imputed feature values are written as empty fields; reading them
        back with the same ``impute_value`` restores both the value and the
        ``missing`` flag.

        Parameters
        ----------
        dataset : `Dataset`
            Dataset to write.
        destination : `str`, `os.PathLike` or text file-like, optional
            Where to write; if `None` the text is returned.

        Returns
        -------
        text : `str` or `None`
            The canonical CSV when ``destination`` is `None`.
        """
        config = self.config
        records = [record for group in dataset.builds for record in group.records]
        frame = pd.DataFrame({
            config.build_column: pd.Series([r.build_id for r in records], dtype=np.int64),
            config.test_column: [r.test_id for r in records],
            config.verdict_column: [r.verdict.value for r in records],
            config.exec_time_column: pd.Series([r.execution_time for r in records], dtype=np.float64),
        })
        values = np.array([r.features for r in records], dtype=np.float64).reshape(
            len(records), dataset.schema.size)
        for i, record in enumerate(records):
            values[i, list(record.missing)] = np.nan
        features = pd.DataFrame(values, columns=list(dataset.schema.names))
        frame = pd.concat([frame, features], axis=1)
        if isinstance(destination, (str, os.PathLike)):
            try:
                frame.to_csv(destination, index=False, float_format="%.17g", lineterminator="\n")
            except OSError as e:
                raise OSError(e.errno, f"Unable to write dataset to {os.fspath(destination)}: "
                              f"{e.strerror}") from e
            return None
        text = frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")
        if destination is None:
            return text
        destination.write(text)
        return None


def parse_csv(source, config=None):
    """Read a build history CSV; see `ReadBuildHistoryTask.run`."""
    return ReadBuildHistoryTask(config=config).run(source)


def emit_csv(dataset, destination=None, config=None):
    """Write ``dataset`` as canonical CSV; see `ReadBuildHistoryTask.write`."""
    return ReadBuildHistoryTask(config=config).write(dataset, destination)
