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

__all__ = ["emit_report", "writeOutputs", "tableRows", "explanationFileName", "explanationFiles",
           "REPORT_FORMATS", "REPORT_FILES"]

import json
import logging
import os
import re
import shutil
import tempfile

import numpy as np
from astropy.table import vstack

_LOG = logging.getLogger(__name__)

REPORT_FORMATS = ("csv", "json")

# Every name a report may write into its directory, in either format.
REPORT_FILES = ("ranking.csv", "importance.csv", "similarity.csv", "similarity.json", "diffs.csv",
                "summary.json", "explanations.csv", "explanations")


def explanationFileName(testId):
    """File name of the explanation of ``testId``; unsafe characters become ``_``."""
    return re.sub(r"[^A-Za-z0-9._-]", "_", testId) + ".json"


def explanationFiles(explanations):
    """Map explanations to distinct paths under ``explanations/``.

    Test ids that sanitize to the same name get ``-2``, ``-3``, ...
    appended in order of appearance.

    Returns
    -------
    files : `dict` [`str`, `dict`]
        Relative path to the JSON content of each explanation.
    """
    files = {}
    for explanation in explanations:
        stem = explanationFileName(explanation.test_id)[:-len(".json")]
        name = f"{stem}.json"
        count = 1
        while os.path.join("explanations", name) in files:
            count += 1
            name = f"{stem}-{count}.json"
        files[os.path.join("explanations", name)] = explanation.toDict()
    return files


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def tableRows(table):
    """Rows of an astropy table as JSON-ready dicts."""
    return [{name: _plain(row[name]) for name in table.colnames} for row in table]


def _writeJson(data, path):
    with open(path, "w") as f:
        json.dump(_plain(data), f, sort_keys=True, indent=2)
        f.write("\n")


def _writeTable(table, path):
    table.write(path, format="ascii.csv", overwrite=True)


def _wrap(e, path):
    return OSError(e.errno, f"Unable to write {path}: {e.strerror}")


def writeOutputs(outDir, files, owned=()):
    """Write a set of files into ``outDir``, all or nothing.

    Files are first written into a staging directory inside ``outDir``.
    Existing entries named in ``files`` or ``owned`` are then moved aside
    and the new files moved into place with `os.replace`, so output left
    by an earlier run of the same command does not survive. On failure the
    earlier entries are restored.

    Parameters
    ----------
    outDir : `str` or `os.PathLike`
        Destination directory; created if needed.
    files : `dict`
        Relative path to content: an `astropy.table.Table` (written as
        CSV) or a JSON-ready object.
    owned : iterable of `str`, optional
        Further relative paths, files or directories, that belong to this
        set of outputs and are removed when not rewritten.

    Returns
    -------
    paths : `list` [`str`]
        Written paths, sorted.
    """
    outDir = os.path.abspath(os.fspath(outDir))
    try:
        os.makedirs(outDir, exist_ok=True)
        staging = tempfile.mkdtemp(prefix=".xtcp-", dir=outDir)
    except OSError as e:
        raise OSError(e.errno, f"Unable to prepare output directory {outDir}: {e.strerror}") from e
    fresh = os.path.join(staging, "new")
    old = os.path.join(staging, "old")
    moved = []
    written = []
    try:
        for name, content in sorted(files.items()):
            path = os.path.join(fresh, name)
            try:
                os.makedirs(os.path.dirname(path), exist_ok=True)
                if hasattr(content, "colnames"):
                    _writeTable(content, path)
                else:
                    _writeJson(content, path)
            except OSError as e:
                raise _wrap(e, os.path.join(outDir, name)) from e
        for name in sorted(set(owned) | set(files)):
            current = os.path.join(outDir, name)
            if not os.path.lexists(current):
                continue
            try:
                os.makedirs(os.path.dirname(os.path.join(old, name)), exist_ok=True)
                os.replace(current, os.path.join(old, name))
            except OSError as e:
                raise _wrap(e, current) from e
            moved.append(name)
        for name in sorted(files):
            destination = os.path.join(outDir, name)
            try:
                os.makedirs(os.path.dirname(destination), exist_ok=True)
                os.replace(os.path.join(fresh, name), destination)
            except OSError as e:
                raise _wrap(e, destination) from e
            written.append(destination)
    except OSError:
        for destination in reversed(written):
            try:
                os.remove(destination)
            except OSError:
                pass
        for name in reversed(moved):
            try:
                os.replace(os.path.join(old, name), os.path.join(outDir, name))
            except OSError:
                _LOG.warning("Unable to restore %s", os.path.join(outDir, name))
        raise
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    if moved:
        _LOG.debug("Replaced %d earlier output(s) in %s", len(moved), outDir)
    _LOG.info("Wrote %d file(s) to %s", len(written), outDir)
    return written


def emit_report(report, outDir, format="csv"):
    """Write an `ExperimentReport`.

    The ``csv`` bundle holds ``ranking.csv``, ``importance.csv``,
    ``explanations/<test>.json``, ``explanations.csv``, ``similarity.csv``,
    ``similarity.json``, ``diffs.csv`` and ``summary.json``. The ``json``
    format writes everything into ``summary.json``. Report files left in
    ``outDir`` by an earlier report are removed.

    Returns
    -------
    paths : `list` [`str`]
        Written paths.
    """
    if format not in REPORT_FORMATS:
        raise ValueError(f"Unknown report format {format!r}; expected one of {REPORT_FORMATS}")
    if format == "json":
        return writeOutputs(outDir, {"summary.json": report.toDict()}, owned=REPORT_FILES)
    files = {
        "ranking.csv": report.rankingTable(),
        "importance.csv": report.importance.toTable(),
        "similarity.csv": report.similarity.toTable(),
        "similarity.json": report.similarity.toDict(),
        "diffs.csv": report.diffsTable(),
        "summary.json": report.summary(),
    }
    files.update(explanationFiles(report.explanations))
    if report.explanations:
        files["explanations.csv"] = vstack([e.toTable() for e in report.explanations])
    return writeOutputs(outDir, files, owned=REPORT_FILES)
