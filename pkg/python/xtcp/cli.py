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

"""Train learning-to-rank test prioritisation models on build histories and
explain their rankings.

Every subcommand reads a build history CSV (``--data``) unless it creates
one, and writes its results into ``--out``. Exit status is 0 on success,
1 for usage or configuration errors, 2 for data errors and 3 when an
internal consistency check fails.
"""

__all__ = ["build_argparser", "run_command", "main", "UsageError", "EXIT_OK", "EXIT_USAGE", "EXIT_DATA",
           "EXIT_INVARIANT"]

import argparse
import logging
import os
import sys

from astropy.table import vstack

import lsst.pex.config as pexConfig
from lsst.pipe.base import AlgorithmError

from .buildTimeline import BuildTimelineConfig, BuildTimelineTask
from .configLoader import loadConfigFile
from .errors import DatasetError, ExplanationError, InvariantViolationError, ModelFormatError
from .experiment import RankingExperimentConfig, RankingExperimentTask, ranking_table
from .explanationSimilarity import pairwise_similarity
from .lambdaMart import LtrModel
from .readBuildHistoryTask import ReadBuildHistoryConfig, ReadBuildHistoryTask
from .reportWriter import REPORT_FORMATS, emit_report, explanationFiles, tableRows, writeOutputs
from .syntheticBuilds import SyntheticBuildsConfig, generate_synthetic

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INVARIANT = 3

_LOG = logging.getLogger("xtcp.cli")

_EXPERIMENT_COMMANDS = ("train", "rank", "explain", "similarity", "experiment", "sweep")
_TIMELINE_COMMANDS = ("trajectory", "timeline", "drift")
_BUILD_COMMANDS = ("train", "rank", "explain", "similarity", "experiment")


class UsageError(Exception):
    """Raised for invalid command-line input detected after parsing."""
    pass


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_argparser():
    """Construct an argument parser for the ``xtcp`` script.

    Returns
    -------
    argparser : `argparse.ArgumentParser`
        The argument parser that defines the ``xtcp`` command-line interface.
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", help="Build history CSV to read.")
    common.add_argument("--build", type=int, help="Target build id.")
    common.add_argument("--config", help="Configuration overrides: a pex_config .py file or key=value lines.")
    common.add_argument("--ingest-config",
                        help="Build history reading overrides, applied wherever --data is read.")
    common.add_argument("--seed", type=int, help="Seed for every random choice.")
    common.add_argument("--out", default=".", help="Directory to write results to.")
    common.add_argument("--format", choices=REPORT_FORMATS, default="csv", help="Output format.")
    common.add_argument("--log-level", default="INFO",
                        choices=("DEBUG", "INFO", "WARNING", "ERROR"), help="Logging threshold.")

    parser = _ArgumentParser(
        prog="xtcp",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)
    subparsers.add_parser("ingest", parents=[common], help="Validate and canonicalize a build history.")
    subparsers.add_parser("synth", parents=[common], help="Generate a synthetic build history.")
    train = subparsers.add_parser("train", parents=[common], help="Train a ranker for a build.")
    train.add_argument("--num-iterations", type=int, help="Override the number of boosting iterations.")
    rank = subparsers.add_parser("rank", parents=[common], help="Rank the tests of a build.")
    explain = subparsers.add_parser("explain", parents=[common], help="Explain tests of a build.")
    similarity = subparsers.add_parser("similarity", parents=[common],
                                       help="Compare explanations of tests of a build.")
    for sub in (rank, explain, similarity):
        sub.add_argument("--model", help="Trained model.json to use instead of training.")
    for sub in (explain, similarity):
        sub.add_argument("--test", action="append", default=[],
                         help="Test to explain; repeatable. Defaults to the standard selection.")
    experiment = subparsers.add_parser("experiment", parents=[common],
                                       help="Train, rank, explain and compare for a build.")
    experiment.add_argument("--model", help="Trained model.json to use instead of training.")
    subparsers.add_parser("sweep", parents=[common], help="Evaluate every eligible failed build.")
    trajectory = subparsers.add_parser("trajectory", parents=[common],
                                       help="Relative positions of frequent tests across builds.")
    trajectory.add_argument("--source", choices=("labels", "models"), help="Positions to show.")
    trajectory.add_argument("--top-n", type=int, help="Number of tests.")
    timeline = subparsers.add_parser("timeline", parents=[common],
                                     help="Global importance of periodically retrained models.")
    timeline.add_argument("--stride", type=int, help="Retrain every this many builds.")
    timeline.add_argument("--window", type=int, help="Train on at most this many latest builds.")
    drift = subparsers.add_parser("drift", parents=[common], help="Explanations of one test across builds.")
    drift.add_argument("--test", required=True, help="Test to follow.")
    drift.add_argument("--builds", type=int, nargs="+", help="Restrict to these build ids.")
    return parser


def _makeIngestConfig(args):
    config = ReadBuildHistoryConfig()
    try:
        if args.ingest_config:
            loadConfigFile(config, args.ingest_config)
        config.validate()
    except (ValueError, TypeError, AttributeError, pexConfig.FieldValidationError) as e:
        raise UsageError(f"invalid ingestion configuration: {e}") from e
    return config


def _makeConfig(args):
    if args.command == "ingest":
        config = _makeIngestConfig(args)
    elif args.command == "synth":
        config = SyntheticBuildsConfig()
    elif args.command in _EXPERIMENT_COMMANDS:
        config = RankingExperimentConfig()
    else:
        config = BuildTimelineConfig()
    try:
        if args.config:
            loadConfigFile(config, args.config)
        experiment = config if isinstance(config, RankingExperimentConfig) else \
            getattr(config, "experiment", None)
        if args.seed is not None:
            if isinstance(config, SyntheticBuildsConfig):
                config.seed = args.seed
            elif experiment is not None:
                experiment.train.seed = args.seed
        if getattr(args, "num_iterations", None) is not None:
            config.train.num_iterations = args.num_iterations
        if getattr(args, "stride", None) is not None:
            config.retrain_stride = args.stride
        if getattr(args, "window", None) is not None:
            config.window = args.window
        if getattr(args, "top_n", None) is not None:
            config.top_n = args.top_n
        if getattr(args, "source", None) is not None:
            config.trajectory_source = args.source
        config.validate()
    except (ValueError, TypeError, AttributeError, pexConfig.FieldValidationError) as e:
        raise UsageError(f"invalid configuration: {e}") from e
    return config


def _writeTable(outDir, stem, table, fmt):
    files = {f"{stem}.json": tableRows(table)} if fmt == "json" else {f"{stem}.csv": table}
    writeOutputs(outDir, files, owned=(f"{stem}.csv", f"{stem}.json"))


def _readData(args):
    if not args.data:
        raise UsageError(f"{args.command} requires --data")
    return ReadBuildHistoryTask(config=_makeIngestConfig(args)).run(args.data)


def _loadModel(args):
    return LtrModel.readJson(args.model) if getattr(args, "model", None) else None


def _runIngest(args, config):
    if not args.data:
        raise UsageError("ingest requires --data")
    reader = ReadBuildHistoryTask(config=config)
    dataset = reader.run(args.data)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "dataset.csv")
    reader.write(dataset, path)
    _LOG.info("Wrote canonical dataset to %s", path)


def _runSynth(args, config):
    dataset = generate_synthetic(config)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "dataset.csv")
    ReadBuildHistoryTask().write(dataset, path)
    writeOutputs(args.out, {"metadata.json": dict(dataset.metadata)})
    _LOG.info("Wrote %d records in %d builds to %s", dataset.num_records, len(dataset), path)


def _runExperimentCommand(args, config):
    if args.command in _BUILD_COMMANDS and args.build is None:
        raise UsageError(f"{args.command} requires --build")
    dataset = _readData(args)
    task = RankingExperimentTask(config=config)
    if args.command == "sweep":
        result = task.sweep(dataset)
        _writeTable(args.out, "sweep", result.table, args.format)
        return
    if args.command == "experiment":
        report = task.run(dataset, args.build, model=_loadModel(args)).report
        emit_report(report, args.out, args.format)
        return

    split = task.prepare(dataset, args.build)
    model = _loadModel(args)
    if model is None:
        model = task.train.run(split).model
    else:
        model.checkSchema(split.schema)
    if args.command == "train":
        os.makedirs(args.out, exist_ok=True)
        model.writeJson(os.path.join(args.out, "model.json"))
        return

    evaluation = task.evaluate(model, split)
    ranking = evaluation.ranking
    if args.command == "rank":
        table = ranking_table(ranking, evaluation.verdicts, evaluation.truePositions)
        _writeTable(args.out, "ranking", table, args.format)
        return

    testIds = args.test or task.selectTests(ranking, split.test)
    explanations = task.explain.run(model, split.test, task.makeBackground(split), testIds).explanations
    if args.command == "explain":
        files = explanationFiles(explanations)
        if args.format == "csv":
            files["explanations.csv"] = vstack([e.toTable() for e in explanations])
        writeOutputs(args.out, files, owned=("explanations", "explanations.csv"))
        return

    matrix = pairwise_similarity(explanations, ranking, testIds)
    files = {"similarity.json": matrix.toDict()}
    if args.format == "csv":
        files["similarity.csv"] = matrix.toTable()
    writeOutputs(args.out, files, owned=("similarity.csv", "similarity.json"))


def _runTimelineCommand(args, config):
    dataset = _readData(args)
    task = BuildTimelineTask(config=config)
    if args.command == "trajectory":
        table = task.rankTrajectory(dataset).toTable()
        _writeTable(args.out, "trajectory", table, args.format)
    elif args.command == "timeline":
        table = task.importanceTimeline(dataset).toTable()
        _writeTable(args.out, "timeline", table, args.format)
    else:
        series = task.explanationDrift(dataset, args.test, args.builds)
        files = {"drift.json": series.toDict()}
        if args.format == "csv":
            files["drift.csv"] = series.toTable()
        writeOutputs(args.out, files, owned=("drift.csv", "drift.json"))


def run_command(args):
    """Run the subcommand selected by parsed ``args``.

    Raises
    ------
    UsageError
        Raised for invalid options or configuration.
    """
    config = _makeConfig(args)
    if args.command == "ingest":
        _runIngest(args, config)
    elif args.command == "synth":
        _runSynth(args, config)
    elif args.command in _EXPERIMENT_COMMANDS:
        _runExperimentCommand(args, config)
    else:
        _runTimelineCommand(args, config)


def main(argv=None):
    """Entry point of the ``xtcp`` script; returns the exit status."""
    parser = build_argparser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    logging.basicConfig(level=getattr(logging, args.log_level), format="{name} {levelname}: {message}",
                        style="{")
    try:
        run_command(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        _LOG.error("%s", e)
        return EXIT_USAGE
    except InvariantViolationError as e:
        _LOG.error("Internal consistency check failed: %s", e)
        return EXIT_INVARIANT
    except (DatasetError, ModelFormatError, ExplanationError, AlgorithmError, OSError) as e:
        _LOG.error("%s", e)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
