"""Command line entry point: ``edsa solve|price|rate|trade|simulate``.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 validation error.
Failures print one JSON object ``{"error": <category>, "message": ...}`` on
stderr. Every output file is written atomically and gets a
``<file>.manifest.json`` sidecar.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional, Sequence

from .artifacts import ManifestWriter
from .ledger import Genesis, Ledger, LedgerError, make_tx, read_log
from .model import ModelError, load_scenario
from .pricing import PriceLedger, PriceRecord, PricingError
from .reputation import RatingEvent, ReputationBook, ReputationConfig, ReputationError
from .signing import device_hash
from .solver import ExactLimits, LimitError, report_csv, report_to_dict, solve_exact, solve_greedy

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VALIDATION = 0, 1, 2, 3
STARTED: Optional[float] = None


class ValidationFailure(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _read(path: str, what: str) -> bytes:
    p = Path(path)
    if not p.is_file():
        raise ValidationFailure("missing-input", f"{what} file not found: {path}")
    return p.read_bytes()


def _json(data: bytes, path: str):
    try:
        return json.loads(data)
    except json.JSONDecodeError as exc:
        raise ValidationFailure("bad-input", f"{path}: invalid JSON ({exc})") from exc


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# -- solve -----------------------------------------------------------------

def cmd_solve(args, argv) -> int:
    raw = _read(args.scenario, "scenario")
    scenario = load_scenario(args.scenario)
    if args.method == "greedy":
        report = solve_greedy(scenario, resort=args.resort)
    else:
        limits = ExactLimits(args.max_demands, args.max_devices, args.timeout)
        report = solve_exact(scenario, limits)
    text = _dump(report_to_dict(report))
    if args.out:
        out = ManifestWriter(argv, raw, scenario.seed, STARTED)
        out.write(args.out, text)
        out.write(Path(args.out).with_suffix(".csv"), report_csv(report))
        out.close()
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- price -----------------------------------------------------------------

def _window(text: str):
    try:
        start, end = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("window must be 'start,end'")
    return start, end


def cmd_price(args, argv) -> int:
    ledger = PriceLedger(args.ledger)
    if args.price_cmd == "record":
        pos = ledger.record_price(PriceRecord(args.time, args.type, args.price, args.qs, args.rs))
        print(json.dumps({"position": pos}))
        return EXIT_OK
    q = ledger.quote(args.type, args.window, args.qs, args.rs, args.beta, args.fee)
    text = _dump(asdict(q))
    if args.out:
        out = ManifestWriter(argv, Path(args.ledger).read_bytes(), None, STARTED)
        out.write(args.out, text)
        out.close()
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- rate ------------------------------------------------------------------

def cmd_rate(args, argv) -> int:
    store = Path(args.store)
    log_path, snap_path = store / "log.ndjson", store / "snapshot.json"
    book = ReputationBook.load(log_path)
    if args.rate_cmd == "show":
        print(_dump(book.get(args.actor).to_dict()), end="")
        return EXIT_OK
    if args.rate_cmd == "apply":
        raw = _json(_read(args.event, "event"), args.event)
        try:
            event = RatingEvent(**raw)
        except TypeError as exc:
            raise ValidationFailure("bad-input", f"{args.event}: {exc}") from exc
        rec_i, rec_j = book.rate(event)
        result = {"actor_i": rec_i.to_dict(), "actor_j": rec_j.to_dict()}
    else:
        result = book.violation(args.actor, args.time).to_dict()
    store.mkdir(parents=True, exist_ok=True)
    out = ManifestWriter(argv, None, None, STARTED)
    out.write(log_path, "".join(json.dumps(e, sort_keys=True) + "\n" for e in book.log))
    out.write(snap_path, _dump({"config": asdict(book.config), "records": book.state()}))
    out.close()
    print(_dump(result), end="")
    return EXIT_OK


# -- trade -----------------------------------------------------------------

def run_script(script: dict):
    """Execute a transaction script; returns (ledger, per-transaction results)."""
    actors = {a: [device_hash(d) for d in devs] for a, devs in script["actors"].items()}
    genesis, keys = Genesis.for_actors(actors,
                                       settle_timeout=float(script.get("settle_timeout", 3600.0)),
                                       reputation=ReputationConfig(**script.get("reputation", {})))
    ledger = Ledger(genesis)
    results = []
    for n, step in enumerate(script["transactions"]):
        payload = dict(step.get("payload", {}))
        if "device" in payload:
            payload["device_hash"] = device_hash(payload.pop("device"))
        try:
            tx = make_tx(step["kind"], payload, step.get("signers", []), keys, step["time"])
            result = ledger.submit(tx)
            results.append({"step": n, "kind": step["kind"], "accepted": True,
                            "result": _plain(result)})
        except (LedgerError, KeyError, ValueError) as exc:
            category = getattr(exc, "category", "invalid")
            results.append({"step": n, "kind": step.get("kind"), "accepted": False,
                            "error": category, "message": str(exc)})
    return ledger, results


def _plain(obj):
    if obj is None or isinstance(obj, (str, int, float, bool)):
        return obj
    if isinstance(obj, (list, tuple)):
        return [_plain(x) for x in obj]
    if hasattr(obj, "__dataclass_fields__"):
        return {k: _plain(v) for k, v in asdict(obj).items()}
    if hasattr(obj, "value"):
        return obj.value
    return str(obj)


def cmd_trade(args, argv) -> int:
    if args.trade_cmd == "replay":
        _read(args.log, "log")
        ledger = read_log(args.log)
        print(json.dumps({"ok": True, "entries": len(ledger.log), "head": ledger.head,
                          "state_digest": ledger.state_digest()}))
        return EXIT_OK
    raw = _read(args.script, "script")
    script = _json(raw, args.script)
    ledger, results = run_script(script)
    out_dir = Path(args.out_dir)
    out = ManifestWriter(argv, raw, None, STARTED)
    out.write(out_dir / "log.ndjson", "".join(ledger.log_lines()))
    out.write(out_dir / "state.json", _dump({"digest": ledger.state_digest(), "state": ledger.state()}))
    out.write(out_dir / "results.ndjson", "".join(json.dumps(r, sort_keys=True) + "\n" for r in results))
    out.close()
    print(json.dumps({"accepted": sum(r["accepted"] for r in results),
                      "rejected": sum(not r["accepted"] for r in results),
                      "state_digest": ledger.state_digest()}))
    return EXIT_OK


# -- simulate --------------------------------------------------------------

def _sim_config(args):
    from . import sim

    name = args.config
    # the demand sweep needs up to 250 (buyer, type) pairs; its default is the
    # 10-type, 50-buyer preset
    if getattr(args, "sweep", None) == "demands" and name == "default":
        name = "wide"
    if name in sim.PRESETS:
        base, raw = sim.PRESETS[name], json.dumps(sim.PRESETS[name].to_dict(), sort_keys=True).encode()
    else:
        raw = _read(name, "config")
        base = sim.SimConfig.from_dict(_json(raw, name))
    overrides = {k: getattr(args, k) for k in ("iterations", "rng_seed") if getattr(args, k) is not None}
    return replace(base, **overrides), raw


def cmd_simulate(args, argv) -> int:
    from . import sim

    if args.action == "e2e":
        if args.config is None:
            args.config = "default"
        config, raw = _sim_config(args)
        tr = sim.run_end_to_end(config, args.seed)
        text = _dump(tr.to_dict())
        if args.out:
            out = ManifestWriter(argv, raw, args.seed, STARTED)
            out.write(args.out, text)
            out.close()
        else:
            sys.stdout.write(text)
        return EXIT_OK

    if args.sweep is None:
        raise ValidationFailure("usage", "simulate needs --sweep or the e2e action")
    if args.config is None:
        args.config = "default"
    config, raw = _sim_config(args)
    if args.sweep == "demands":
        result = sim.sweep_demands(config, jobs=args.jobs)
    elif args.sweep == "battery":
        result = sim.sweep_battery(replace(config, devices=1), jobs=args.jobs)
    else:
        result = sim.sweep_device_split(config, jobs=args.jobs)
    text = result.to_csv()
    if args.out:
        out = ManifestWriter(argv, raw, config.rng_seed, STARTED)
        out.write(args.out, text)
        out.close()
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edsa", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="select and allocate demands for a scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--method", choices=["greedy", "exact"], default="greedy")
    s.add_argument("--resort", action="store_true",
                   help="greedy: re-sort devices by residual battery before each demand")
    s.add_argument("--max-demands", type=int, default=ExactLimits.max_demands)
    s.add_argument("--max-devices", type=int, default=ExactLimits.max_devices)
    s.add_argument("--timeout", type=float, default=ExactLimits.timeout)
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    pr = sub.add_parser("price", help="price ledger and quotes")
    psub = pr.add_subparsers(dest="price_cmd", required=True)
    rec = psub.add_parser("record")
    rec.add_argument("--ledger", default="prices.ndjson")
    rec.add_argument("--time", type=float, required=True)
    rec.add_argument("--type", type=int, required=True)
    rec.add_argument("--price", type=float, required=True)
    rec.add_argument("--qs", type=float, default=0.0)
    rec.add_argument("--rs", type=float, default=0.0)
    qt = psub.add_parser("quote")
    qt.add_argument("--ledger", default="prices.ndjson")
    qt.add_argument("--type", type=int, required=True)
    qt.add_argument("--window", type=_window, required=True)
    qt.add_argument("--qs", type=float, default=0.0)
    qt.add_argument("--rs", type=float, default=0.0)
    qt.add_argument("--beta", type=float, default=0.0)
    qt.add_argument("--fee", type=float, default=0.0)
    qt.add_argument("--out")
    pr.set_defaults(func=cmd_price)

    r = sub.add_parser("rate", help="reputation store")
    rsub = r.add_subparsers(dest="rate_cmd", required=True)
    ap = rsub.add_parser("apply")
    ap.add_argument("--event", required=True)
    vi = rsub.add_parser("violation")
    vi.add_argument("--actor", required=True)
    vi.add_argument("--time", type=float)
    sh = rsub.add_parser("show")
    sh.add_argument("--actor", required=True)
    for x in (ap, vi, sh):
        x.add_argument("--store", default="reputation")
    r.set_defaults(func=cmd_rate)

    t = sub.add_parser("trade", help="transaction scripts on the trade ledger")
    tsub = t.add_subparsers(dest="trade_cmd", required=True)
    run = tsub.add_parser("run")
    run.add_argument("--script", required=True)
    run.add_argument("--out-dir", default="trade-out")
    rp = tsub.add_parser("replay")
    rp.add_argument("--log", required=True)
    t.set_defaults(func=cmd_trade)

    sm = sub.add_parser("simulate", help="Monte-Carlo sweeps and end-to-end runs")
    sm.add_argument("action", nargs="?", choices=["e2e"])
    sm.add_argument("--sweep", choices=["demands", "battery", "devices"])
    sm.add_argument("--config", help="preset name (default, baseline, wide) or JSON file")
    sm.add_argument("--iterations", type=int)
    sm.add_argument("--rng-seed", dest="rng_seed", type=int)
    sm.add_argument("--seed", type=int, default=0, help="e2e: scenario seed")
    sm.add_argument("--jobs", type=int, default=1)
    sm.add_argument("--out")
    sm.set_defaults(func=cmd_simulate)
    return p


VALIDATION_ERRORS = (ModelError, PricingError, ReputationError, LedgerError, LimitError)


def _fail(code: int, category: str, message: str) -> int:
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    global STARTED
    STARTED = time.monotonic()
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    from .sim import ConfigError

    try:
        return args.func(args, ["edsa", *argv])
    except ValidationFailure as exc:
        return _fail(EXIT_USAGE if exc.category == "usage" else EXIT_VALIDATION,
                     exc.category, str(exc))
    except VALIDATION_ERRORS + (ConfigError,) as exc:
        return _fail(EXIT_VALIDATION, getattr(exc, "category", "validation"), str(exc))
    except Exception as exc:  # noqa: BLE001 - top-level reporter
        return _fail(EXIT_RUNTIME, "runtime", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
