"""Command line: validate, run, matrix and an interactive REPL.

Exit codes: 0 success, 1 config/scenario/domain error, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import os
import re
import sys

from .grammar import normalize
from .home import ConfigError, load_config_file
from .sim import (Scenario, Simulation, cell_config, load_scenario_file, parse_grid, run, run_matrix,
                  trace_ndjson)

LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
REPL_LINE = re.compile(r"^@([\w-]+)\s*:\s*(.+)$")

REPL_HELP = """\
@room: utterance     speak in a room (e.g. "@living-room: turn off the bedroom light")
:wait MS             advance virtual time
:down ID / :up ID    fail or restore a device
:state [ID]          show device state
:report              print the JSON report so far
:quit                leave"""


def _setup_logging():
    level = LOG_LEVELS.get(os.environ.get("HEARTHMESH_LOG", "quiet").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hearthmesh", description="Offline voice-controlled smart-home simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, formats=("json", "csv", "trace")):
        sp.add_argument("--seed", type=int, default=None, help="run seed (default: the config's seed)")
        sp.add_argument("--format", choices=formats, default="json")
        sp.add_argument("--out", default=None, help="output path (default: stdout)")
        sp.add_argument("--mode", choices=("peer", "broker"), default=None)
        sp.add_argument("--approach", choices=("coexist", "unified"), default=None)

    v = sub.add_parser("validate", help="check a home config")
    v.add_argument("config")

    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("config")
    r.add_argument("scenario")
    common(r)

    m = sub.add_parser("matrix", help="run a scenario over a parameter grid")
    m.add_argument("config")
    m.add_argument("scenario", nargs="?", default=None,
                   help="scenario file (default: built-in ring scenario; needs node-count in the grid)")
    m.add_argument("--grid", action="append", required=True, metavar="KEY=V1,V2",
                   help="grid axis: node-count, offered-load, mode or approach (repeatable)")
    common(m, formats=("json", "csv"))

    q = sub.add_parser("repl", help="type utterances against a live simulation")
    q.add_argument("config")
    q.add_argument("--seed", type=int, default=None)
    q.add_argument("--mode", choices=("peer", "broker"), default=None)
    q.add_argument("--approach", choices=("coexist", "unified"), default=None)
    q.add_argument("--intensity", type=float, default=65.0, help="speaker intensity at 1 m")
    return p


def _overrides(cfg, args):
    point = {k: v for k, v in (("mode", args.mode), ("approach", args.approach)) if v}
    return cell_config(cfg, point) if point else cfg


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_validate(args) -> int:
    cfg = load_config_file(args.config)
    modules = sum(len(s.modules) for s in cfg.subsystems)
    print(f"{cfg.name}: OK")
    print(f"  {len(cfg.subsystems)} subsystems, {modules} modules, {len(cfg.devices)} devices, "
          f"{len(cfg.links)} links, {len(cfg.gateways)} gateways")
    for s in cfg.subsystems:
        print(f"  {s.name}: {', '.join(d.id for d in s.devices) or '-'}")
    listeners = [d.id for d in cfg.devices if d.has_kws]
    print(f"  KWS listeners: {', '.join(listeners) or '-'}")
    print(f"  messaging: {cfg.messaging.mode} (broker: {cfg.broker_id() or '-'})")
    return 0


def cmd_run(args) -> int:
    cfg = _overrides(load_config_file(args.config), args)
    sc = load_scenario_file(args.scenario)
    rep, trace = run(cfg, sc, args.seed)
    if args.format == "json":
        _emit(rep.to_json(), args.out)
    elif args.format == "csv":
        _emit(rep.to_csv(), args.out)
    else:
        _emit(trace_ndjson(trace), args.out)
    logging.getLogger("hearthmesh").info("%d interactions, outcomes %s", len(rep.interactions),
                                         rep.aggregates["by_outcome"])
    return 0


def cmd_matrix(args) -> int:
    cfg = load_config_file(args.config)
    try:
        grid = parse_grid(args.grid)
    except ValueError as exc:
        print(f"hearthmesh matrix: error: {exc}", file=sys.stderr)
        return 2
    if args.mode and "mode" not in grid:
        grid["mode"] = [args.mode]
    if args.approach and "approach" not in grid:
        grid["approach"] = [args.approach]
    sc = load_scenario_file(args.scenario) if args.scenario else None
    if sc is None and "node-count" not in grid:
        print("hearthmesh matrix: error: a scenario is required unless the grid sets node-count", file=sys.stderr)
        return 2
    result = run_matrix(cfg, {"scenario": sc}, grid, args.seed)
    _emit(result.to_json() if args.format == "json" else result.to_csv(), args.out)
    failed = [c for c in result.cells if c["error"]]
    for c in failed:
        print(f"cell {c['point']}: {c['error']}", file=sys.stderr)
    return 1 if failed else 0


def format_record(rec: dict, sim: Simulation) -> str:
    lat = "-" if rec["latency_ms"] is None else f"{rec['latency_ms']:.1f} ms"
    vr = (rec["voice_response"] or {}).get("kind", "-")
    head = (f"#{rec['id']} t={rec['at_ms']:g} {rec['kind'] or '-'} listener={rec['listener'] or '-'} "
            f"targets=[{', '.join(rec['targets'])}] outcome={rec['outcome']} latency={lat} "
            f"hops={rec['hop_count']} messages={rec['messages']['sent']} voice={vr}")
    lines = [head]
    if rec["reason"]:
        lines.append(f"  reason: {rec['reason']}")
    for t in rec["targets"]:
        state = " ".join(f"{k}={v}" for k, v in sorted(sim.appliances[t].state.items()))
        lines.append(f"  {t}: {state}")
    return "\n".join(lines)


def _wake_prefix(cfg, text: str) -> str:
    """Prefix the home's wake word unless the line already contains one."""
    words = sorted({w for v in cfg.vocabularies.values() for w in v.wake_words})
    toks = " ".join(normalize(text))
    if not words or any(f" {w} " in f" {toks} " for w in words):
        return text
    return f"{words[0]} {text}"


def repl(sim: Simulation, stdin, stdout, intensity: float = 65.0) -> int:
    interactive = hasattr(stdin, "isatty") and stdin.isatty()
    cfg = sim.cfg
    errors = 0
    if interactive:
        print(f"hearthmesh repl on {cfg.name}; rooms: {', '.join(cfg.room_names)}; :help for commands", file=stdout)
    while True:
        if interactive:
            stdout.write(f"[{sim.now:g} ms]> ")
            stdout.flush()
        line = stdin.readline()
        if not line:
            break
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line in (":quit", ":q", ":exit"):
            break
        if line == ":help":
            print(REPL_HELP, file=stdout)
            continue
        if line.startswith(":"):
            cmd, _, arg = line[1:].partition(" ")
            arg = arg.strip()
            if cmd == "wait":
                try:
                    sim.advance_to(sim.now + float(arg))
                except ValueError:
                    print("usage: :wait MS", file=stdout)
                    errors += 1
                continue
            if cmd in ("down", "up"):
                if arg not in cfg.device_index:
                    print(f"unknown device {arg!r}", file=stdout)
                    errors += 1
                    continue
                sim._push(sim.now, "fault", 1, node=arg, state=cmd)
                sim.run_until_quiet()
                print(f"{arg} is {cmd}", file=stdout)
                continue
            if cmd == "state":
                for d, app in sorted(sim.appliances.items()):
                    if not arg or d == arg:
                        print(f"{d}: " + " ".join(f"{k}={v}" for k, v in sorted(app.state.items())), file=stdout)
                continue
            if cmd == "report":
                stdout.write(sim.report().to_json())
                continue
            print(f"unknown command {line!r}; :help lists commands", file=stdout)
            errors += 1
            continue
        m = REPL_LINE.match(line)
        if not m:
            print("expected '@room: utterance'", file=stdout)
            errors += 1
            continue
        room, text = m.group(1), m.group(2)
        if room not in cfg.room_names:
            print(f"unknown room {room!r}; rooms: {', '.join(cfg.room_names)}", file=stdout)
            errors += 1
            continue
        sim.say(_wake_prefix(cfg, text), room=room, intensity=intensity, speaker=f"repl@{room}")
        for rec in sim.run_until_quiet():
            print(format_record(rec, sim), file=stdout)
    return 0


def cmd_repl(args) -> int:
    cfg = _overrides(load_config_file(args.config), args)
    sim = Simulation(cfg, args.seed)
    return repl(sim, sys.stdin, sys.stdout, args.intensity)


COMMANDS = {"validate": cmd_validate, "run": cmd_run, "matrix": cmd_matrix, "repl": cmd_repl}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"hearthmesh {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"hearthmesh {args.command}: error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
