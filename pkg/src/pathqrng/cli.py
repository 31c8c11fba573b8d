"""Command line interface.

Exit codes: 0 success, 2 invalid input or configuration, 3 I/O failure,
4 internal error.  Failures print one ``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

from pydantic import ValidationError

from . import photonics
from .bench import run_benchmarks
from .bitstream import (
    CommitmentMap,
    assign_bits,
    read_bits,
    read_timetags,
    write_bits,
    write_timetags,
)
from .config import PipelineConfig, load_config
from .extractors import EntropyFormula, ExtractorConfig, SizingMode, ToeplitzSeed
from .pipeline import (
    certify_counts,
    certify_simulated,
    certify_stream,
    extract,
    fit_slope,
    power_sweep,
    run_pipeline,
    visibility_sweep,
)
from .stats import autocorrelation, run_battery

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_INTERNAL = 0, 2, 3, 4
KEY_ENV = "QRNG_KEY_FILE"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_grid(text: str) -> list[float]:
    """``"1,2,5"`` or inclusive ``"start:stop:step"``."""
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ValueError(f"bad grid {text!r}: expected start:stop:step with step > 0")
        start, stop, step = parts
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 12) for i in range(max(count, 0))]
    return [float(p) for p in text.split(",") if p.strip()]


def _emit(obj, out: str | None = None):
    text = json.dumps(obj, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _write_csv(rows: list[dict], out: str | None):
    if not rows:
        return
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if out:
            fh.close()


def _config_with_overrides(args) -> PipelineConfig:
    cfg = load_config(getattr(args, "config", None))
    data = cfg.model_dump()
    if getattr(args, "seed", None) is not None:
        data["seeds"]["seed"] = args.seed
    if getattr(args, "duration", None) is not None:
        data["run"]["duration"] = args.duration
    if getattr(args, "visibility", None) is not None:
        data["run"]["visibility"] = args.visibility
    if getattr(args, "visibility_model", None) is not None:
        data["run"]["visibility_model"] = args.visibility_model
    if getattr(args, "topology", None) is not None:
        data["topology"]["kind"] = {"one": "one_bit", "two": "two_bit"}[args.topology]
    if getattr(args, "power", None) is not None:
        data["source"]["pump_power"] = args.power
    return PipelineConfig.model_validate(data)


def cmd_simulate(args) -> int:
    cfg = _config_with_overrides(args)
    run = cfg.run_config()
    stream = photonics.simulate_experiment(run)
    write_timetags(args.out, stream, "csv" if args.format == "csv" else "binary")
    counts = stream.counts()
    _emit({
        "out": str(args.out),
        "records": len(stream),
        "duration_s": run.duration,
        "counts_per_s": {str(ch): float(c) / run.duration for ch, c in enumerate(counts)},
    })
    return EXIT_OK


def cmd_bits(args) -> int:
    stream = read_timetags(args.tags)
    mapping = CommitmentMap.one_bit() if args.commitment == "one" else CommitmentMap.two_bit()
    bits = assign_bits(stream, mapping, args.window)
    write_bits(args.out, bits)
    _emit({"out": str(args.out), "events": len(stream), "bits": bits.bit_length, "width": mapping.width})
    return EXIT_OK


def _load_or_make_key(args) -> ToeplitzSeed:
    key_file = args.key_file or os.environ.get(KEY_ENV)
    if args.generate_key:
        rng = photonics.derive_rng(args.seed, "toeplitz-key") if args.seed is not None else None
        key = ToeplitzSeed.generate(rng)
        if key_file:
            key.save(key_file)
        return key
    if not key_file:
        raise UsageError(f"toeplitz needs --key-file (or ${KEY_ENV}) or --generate-key")
    if not Path(key_file).exists():
        raise UsageError(f"key file {key_file} does not exist; pass --generate-key to create it")
    return ToeplitzSeed.load(key_file)


def cmd_extract(args) -> int:
    bits = read_bits(args.bits)
    key = _load_or_make_key(args) if args.method == "toeplitz" else None
    config = ExtractorConfig(args.n, args.epsilon, SizingMode(args.mode), EntropyFormula(args.entropy_formula))
    out, summary = extract(bits, args.method, config, key, workers=args.workers)
    write_bits(args.out, out)
    summary["out"] = str(args.out)
    _emit(summary)
    return EXIT_OK


def cmd_test(args) -> int:
    report = run_battery(read_bits(args.bits), args.alpha)
    _emit(report.to_dict(), args.out)
    return EXIT_OK


def cmd_autocorr(args) -> int:
    res = autocorrelation(read_bits(args.bits), args.max_lag)
    if args.format == "csv":
        rows = [{"lag": k + 1, "coefficient": float(c)} for k, c in enumerate(res.coefficients)]
        _write_csv(rows, args.out)
    else:
        _emit(res.to_dict(), args.out)
    return EXIT_OK


def cmd_certify(args) -> int:
    if args.counts:
        try:
            c1, c2 = (int(x) for x in args.counts.split(","))
        except ValueError:
            raise UsageError("--counts expects two integers, e.g. 300,100") from None
        report = certify_counts(c1, c2)
    elif args.tags:
        report = certify_stream(read_timetags(args.tags))
    else:
        report = certify_simulated(_config_with_overrides(args))
    _emit(report.to_dict(), args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    if (args.power_grid is None) == (args.visibility_grid is None):
        raise UsageError("give exactly one of --power-grid or --visibility-grid")
    grid = parse_grid(args.power_grid if args.power_grid is not None else args.visibility_grid)
    if not grid:
        raise UsageError("grid is empty")
    if args.power_grid is not None:
        cfg = _config_with_overrides(args)
        rows = power_sweep(cfg, grid, args.curve_duration)
    else:
        if any(not 0.0 <= p <= 1.0 for p in grid):
            raise UsageError("visibility grid values must lie in [0, 1]")
        rows = visibility_sweep(grid)
        if len(rows) >= 2:
            slope, intercept = fit_slope(rows)
            print(json.dumps({"slope": slope, "intercept": intercept}), file=sys.stderr)
    _write_csv(rows, args.out)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _config_with_overrides(args)
    key = None
    key_file = args.key_file or cfg.extractor.key_file or os.environ.get(KEY_ENV)
    if key_file:
        key = ToeplitzSeed.load(key_file)
    hashes = run_pipeline(cfg, args.outdir, key)
    _emit({"outdir": str(args.outdir), "sha256": hashes})
    return EXIT_OK


def cmd_bench(args) -> int:
    _emit(run_benchmarks(args.bits, args.repeats, args.workers), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pathqrng", description="Path-entangled multi-bit QRNG simulator and post-processing.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def sim_options(sp):
        sp.add_argument("--config", help="TOML or JSON pipeline config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--duration", type=float, help="seconds")
        sp.add_argument("--visibility", type=float)
        sp.add_argument("--visibility-model", choices=["depolarizing", "splitting"])
        sp.add_argument("--topology", choices=["one", "two"])
        sp.add_argument("--power", type=float, help="pump power, mW")

    sp = sub.add_parser("simulate", help="simulate detector clicks into a time-tag file")
    sim_options(sp)
    sp.add_argument("--format", choices=["binary", "csv"], default="binary")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("bits", help="commit bits from time tags")
    sp.add_argument("tags")
    sp.add_argument("--commitment", choices=["one", "two"], default="two")
    sp.add_argument("--window", type=float, default=0.0, help="coincidence window, ps (0 = off)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_bits)

    sp = sub.add_parser("extract", help="run the XOR or Toeplitz extractor")
    sp.add_argument("bits")
    sp.add_argument("--method", choices=["xor", "toeplitz"], default="toeplitz")
    sp.add_argument("--mode", choices=["lhl", "paper"], default="lhl")
    sp.add_argument("--epsilon", type=float, default=2.0**-50)
    sp.add_argument("--n", type=int, default=256, help="input block bits")
    sp.add_argument("--entropy-formula", choices=["standard", "paper"], default="standard")
    sp.add_argument("--key-file")
    sp.add_argument("--generate-key", action="store_true")
    sp.add_argument("--seed", type=int, help="derive a generated key from this seed")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("test", help="run the statistical test battery")
    sp.add_argument("bits")
    sp.add_argument("--alpha", type=float, default=0.01)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_test)

    sp = sub.add_parser("autocorr", help="bit autocorrelation coefficients")
    sp.add_argument("bits")
    sp.add_argument("--max-lag", type=int, default=100)
    sp.add_argument("--format", choices=["json", "csv"], default="json")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_autocorr)

    sp = sub.add_parser("certify", help="CHSH / visibility certification report")
    sim_options(sp)
    sp.add_argument("--tags", help="ingest a time-tag file instead of simulating")
    sp.add_argument("--counts", help="two detector totals, e.g. 300,100")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_certify)

    sp = sub.add_parser("sweep", help="saturation or S-vs-visibility tables (CSV)")
    sim_options(sp)
    sp.add_argument("--power-grid", help="mW values: 1,2,5 or start:stop:step")
    sp.add_argument("--visibility-grid", help="P values: 0:1:0.1")
    sp.add_argument("--curve-duration", type=float, default=0.01, help="simulated seconds per power point")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("pipeline", help="simulate -> bits -> extract -> test into one directory")
    sim_options(sp)
    sp.add_argument("--key-file")
    sp.add_argument("--outdir", required=True)
    sp.set_defaults(func=cmd_pipeline)

    sp = sub.add_parser("bench", help="extractor throughput report")
    sp.add_argument("--bits", type=int, default=50_000_000)
    sp.add_argument("--repeats", type=int, default=3)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_bench)
    return p


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        return _fail(EXIT_INVALID, str(exc))
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(x) for x in first["loc"])
        return _fail(EXIT_INVALID, f"invalid configuration: {loc}: {first['msg']}")
    except (ValueError, KeyError) as exc:
        return _fail(EXIT_INVALID, str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))
    except Exception as exc:  # noqa: BLE001
        return _fail(EXIT_INTERNAL, f"internal error: {exc!r}")


if __name__ == "__main__":
    sys.exit(main())
