"""Command line front end.

    spectrumshare run <scenario.json> [--out FILE] [--format csv|jsonl]
                     [--transport inproc|tcp] [--seed N]
    spectrumshare detect <capture.iqs> --n-prb N --mu M [--margin-db X]
    spectrumshare proto-dump <hexfile>

Exit status: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from . import e3
from .capture import CaptureError
from .dapp import DetectorParams, detect_capture
from .grid import make_grid
from .metrics import export_metrics
from .scenario import ScenarioError, TransportSpec, load_scenario
from .sim import TransportError, run


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this artifact reserves 2 for
    runtime failures, so remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spectrumshare", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_run = sub.add_parser("run", help="run a scenario and export metrics")
    p_run.add_argument("scenario", help="scenario JSON file")
    p_run.add_argument("--out", default=None, help="output file (default metrics.<format>)")
    p_run.add_argument("--format", choices=["csv", "jsonl"], default="csv")
    p_run.add_argument("--transport", choices=["inproc", "tcp"], default=None,
                       help="override the scenario's transport")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the scenario's noise seed")

    p_det = sub.add_parser("detect", help="offline detection over an IQS1 capture")
    p_det.add_argument("capture", help="IQS1 capture file")
    p_det.add_argument("--n-prb", type=int, required=True)
    p_det.add_argument("--mu", type=int, required=True)
    p_det.add_argument("--margin-db", type=float, default=6.0)

    p_dump = sub.add_parser("proto-dump", help="decode and pretty-print E3 frames")
    p_dump.add_argument("hexfile", help="text file of hex-encoded frames")
    return parser


def _cmd_run(args) -> int:
    with open(args.scenario, "r", encoding="utf-8") as fh:
        scenario = load_scenario(fh.read())
    if args.seed is not None:
        scenario = replace(
            scenario, noise=replace(scenario.noise, seed=args.seed)
        )
    if args.transport is not None:
        port = scenario.transport.port if scenario.transport.kind == "tcp" else 0
        scenario = replace(
            scenario,
            transport=TransportSpec(kind=args.transport, port=port),
        )
    out_path = args.out or f"metrics.{args.format}"
    try:
        log = run(scenario)
    except TransportError as exc:
        if exc.partial_log is not None and exc.partial_log.records:
            with open(out_path, "wb") as fh:
                fh.write(export_metrics(exc.partial_log, args.format))
            print(f"partial metrics flushed to {out_path}", file=sys.stderr)
        raise
    with open(out_path, "wb") as fh:
        fh.write(export_metrics(log, args.format))
    print(
        f"{out_path}: {len(log.records)} slots, "
        f"{len(log.iq_reports)} I/Q reports",
        file=sys.stderr,
    )
    return 0


def _cmd_detect(args) -> int:
    grid = make_grid(args.mu, args.n_prb)
    params = DetectorParams(margin_db=args.margin_db)
    for report in detect_capture(args.capture, grid, params):
        sys.stdout.write(json.dumps(report, separators=(",", ":")) + "\n")
    return 0


def _format_message(msg) -> str:
    if isinstance(msg, e3.SetupRequest):
        return (
            f"SetupRequest ran={msg.ran_id} n_prb={msg.n_prb} "
            f"fft={msg.fft_size} mu={msg.mu}"
        )
    if isinstance(msg, e3.SetupResponse):
        return f"SetupResponse accepted={str(msg.accepted).lower()}"
    if isinstance(msg, e3.Subscribe):
        return f"Subscribe stream={msg.stream_id} period={msg.period_frames}"
    if isinstance(msg, e3.SubscribeAck):
        return f"SubscribeAck stream={msg.stream_id}"
    if isinstance(msg, e3.IqReport):
        return (
            f"IqReport frame={msg.frame} slot={msg.slot} symbol={msg.symbol} "
            f"n_samples={msg.n_samples}"
        )
    if isinstance(msg, e3.ControlAction):
        barred = [int(p) for p in np.nonzero(msg.barred_mask())[0]]
        return f"ControlAction frame={msg.frame} n_prb={msg.n_prb} barred={barred}"
    if isinstance(msg, e3.ErrorMsg):
        return f"Error code={msg.code}"
    return repr(msg)


def _cmd_proto_dump(args) -> int:
    with open(args.hexfile, "r", encoding="utf-8") as fh:
        text = "".join(fh.read().split())
    try:
        frames = bytes.fromhex(text)
    except ValueError as exc:
        raise ValueError(f"{args.hexfile}: not valid hex: {exc}")
    pos = 0
    while pos < len(frames):
        try:
            msg, consumed = e3.decode(frames, pos)
        except e3.NeedMoreBytes:
            raise ValueError(
                f"{args.hexfile}: truncated frame at byte offset {pos}"
            )
        print(_format_message(msg))
        pos += consumed
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return int(code) if code else 0
    handlers = {
        "run": _cmd_run,
        "detect": _cmd_detect,
        "proto-dump": _cmd_proto_dump,
    }
    try:
        return handlers[args.command](args)
    except (ScenarioError, CaptureError, e3.DecodeError, TransportError,
            ValueError, OSError, RuntimeError) as exc:
        print(f"spectrumshare: error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
