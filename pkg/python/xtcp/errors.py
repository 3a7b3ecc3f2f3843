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

"""Exceptions raised by the xtcp package."""

__all__ = ["XtcpError", "DatasetError", "DatasetParseError", "InsufficientTrainingDataError",
           "ModelFormatError", "ExplanationError", "InvariantViolationError"]

from lsst.pipe.base import AlgorithmError


class XtcpError(Exception):
    """Base class for errors raised by this package."""
    pass


class DatasetError(XtcpError, ValueError):
    """Raised when a build history dataset is malformed or inconsistent."""
    pass


class DatasetParseError(DatasetError):
    """Raised when a build history file cannot be parsed.

    Parameters
    ----------
    message : `str`
        Description of the problem.
    lineNumber : `int`, optional
        1-based line number in the source file, if known.
    source : `str`, optional
        Name of the file or stream being parsed.
    """
    def __init__(self, message, *, lineNumber=None, source=None):
        prefix = ""
        if source is not None:
            prefix += f"{source}: "
        if lineNumber is not None:
            prefix += f"line {lineNumber}: "
        super().__init__(prefix + message)
        self.lineNumber = lineNumber
        self.source = source


class InsufficientTrainingDataError(AlgorithmError):
    """Raised if a model cannot be trained because too few builds precede
    the target build.

    Parameters
    ----------
    buildId : `int`
        The build that was to be predicted.
    numPredecessors : `int`
        Number of builds available before ``buildId``.
    required : `int`
        Number of predecessor builds required.
    """
    def __init__(self, *, buildId, numPredecessors, required):
        super().__init__(f"Insufficient training builds for build {buildId}: "
                         f"{numPredecessors} predecessor(s), but require at least {required}.")
        self.buildId = buildId
        self.numPredecessors = numPredecessors
        self.required = required

    @property
    def metadata(self):
        return {"buildId": self.buildId,
                "numPredecessors": self.numPredecessors,
                "required": self.required,
                }


class ModelFormatError(XtcpError, ValueError):
    """Raised when a persisted model cannot be loaded."""
    pass


class ExplanationError(XtcpError, ValueError):
    """Raised when explanations cannot be computed or compared."""
    pass


class InvariantViolationError(XtcpError, RuntimeError):
    """Raised when an internal post-condition does not hold."""
    pass
