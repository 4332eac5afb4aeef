"""Command-line front end.

Exit status: 0 on success, 1 on usage or configuration errors, 2 when a
protocol run aborts.
"""

from __future__ import annotations

import argparse
import os
import sys
from fractions import Fraction
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import bench, protocol
from .dpnoise import (calibrate_sigma, cdp_to_dp, cdp_to_dp_tight, epsilon_d,
                      sample_discrete_gaussian_exact)
from .errors import DpDiceError, ProtocolAbort
from .hashing import HashKey
from .mpc import read_party_material, write_party_material
from .sketch import FmSketch, FmsSketch, HllSketch, default_w, fms_estimate, load_sketch
from .transport import TcpChannel, parse_address

DEFAULTS = dict(d=20, c=5, n=1_000_000, m=4096, eps=0.1, delta=1e-12)
EXIT_OK, EXIT_USAGE, EXIT_ABORT = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_like(text: str) -> int:
    """Integers written as 1000000, 1e6 or 1_000_000."""
    try:
        v = float(text.replace("_", ""))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if v != int(v):
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    return int(v)


def _list(conv):
    def parse(text: str):
        try:
            return [conv(t) for t in text.split(",") if t.strip()]
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def _seed(args) -> int:
    env = os.environ.get("DPDICE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"DPDICE_SEED must be an integer, got {env!r}") from None
    return args.seed


# ---------------------------------------------------------------- benches

def _add_bench_args(p, kinds: str, privacy: bool):
    p.add_argument("--kind", type=_list(str), default=kinds.split(","),
                   help="comma list of fms, fm, hll, loglog")
    p.add_argument("--n", type=_list(_int_like), default=[DEFAULTS["n"]], help="true cardinalities")
    p.add_argument("--m", type=_list(_int_like), default=[DEFAULTS["m"]], help="number of arrays")
    p.add_argument("--w", type=int, default=None, help="bits per array (default: ceil(log2(n/m)+6))")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--fm-source", choices=("auto", "hash", "model"), default="auto")
    p.add_argument("--out", type=Path, default=None, help="CSV path (default stdout)")
    if privacy:
        p.add_argument("--eps", type=_list(float), default=[DEFAULTS["eps"]])
        p.add_argument("--delta", type=float, default=DEFAULTS["delta"])


def _run_bench(args, privacy: str, d_values) -> int:
    seed = _seed(args)
    fixed = dict(w=args.w, trials=args.trials, seed=seed, privacy=privacy,
                 fm_source=args.fm_source)
    axes = dict(kind=args.kind, m=args.m, n=args.n)
    if privacy != "none":
        fixed["delta"] = args.delta
        axes["eps"] = args.eps
    if d_values is not None:
        axes["d"] = d_values
    try:
        specs = bench.grid(fixed, **axes)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    results = [bench.run_experiment(s, workers=args.workers) for s in specs]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            bench.write_csv(results, fh)
    else:
        bench.write_csv(results, sys.stdout)
    return EXIT_OK


def cmd_sketch_bench(args) -> int:
    if args.load_sketch:
        sk = load_sketch(args.load_sketch.read_bytes())
        est = sk.estimate()
        print(f"{type(sk).__name__} m={sk.m} w={sk.w} estimate={est.n_hat:.6g} ({est.method.value})")
        return EXIT_OK
    if args.save_sketch:
        spec = bench.ExperimentSpec(kind=args.kind[0], n=args.n[0], m=args.m[0], w=args.w,
                                    trials=1, seed=_seed(args))
        rng = np.random.default_rng(spec.seed)
        key = HashKey.random(rng)
        elems = np.arange(spec.n, dtype=np.uint64) + np.uint64(int(rng.integers(0, 1 << 62)))
        cls = {"fms": FmsSketch, "fm": FmSketch}.get(spec.kind.value, HllSketch)
        sk = cls(spec.m, spec.w, key).update(elems)
        args.save_sketch.write_bytes(sk.to_bytes())
        print(f"wrote {args.save_sketch} ({type(sk).__name__}, n={spec.n}, key={key.hex()})")
        return EXIT_OK
    return _run_bench(args, "none", None)


def cmd_dp_bench(args) -> int:
    return _run_bench(args, "central", None)


def cmd_ddp_bench(args) -> int:
    return _run_bench(args, "distributed", args.d)


def cmd_calibrate(args) -> int:
    print("eps,delta,d,sigma,eps_d,eps_dp,eps_dp_tight")
    for eps in args.eps:
        for d in args.d:
            b = calibrate_sigma(eps, args.delta, d)
            print(f"{eps:g},{args.delta:g},{d},{b.sigma:.6g},{b.eps_cdp:.6g},"
                  f"{cdp_to_dp(b.eps_cdp, args.delta):.6g},"
                  f"{cdp_to_dp_tight(epsilon_d(b.sigma, d), args.delta):.6g}")
    return EXIT_OK


# ---------------------------------------------------------------- protocol

def _demo(args) -> int:
    seed = _seed(args)
    rng = np.random.default_rng(seed)
    cfg = protocol.ProtocolConfig.create(
        args.m, args.w, args.d, args.c, sigma=args.sigma, eps=args.eps, delta=args.delta,
        hash_key=HashKey.random(rng), session_id=rng.bytes(16),
        zero_test_mode=args.zero_test_mode)
    sets = bench.gen_union_partition(args.n, args.d, args.overlap, seed=seed)
    tx = protocol.run_protocol(sets, cfg, "memory" if args.transport == "mem" else "tcp",
                               dealer_seed=seed, noise_seed=seed)
    print(f"parties        : {cfg.d} data holders, {cfg.c} computation parties")
    print(f"true union     : {args.n}")
    print(f"sigma per DH   : {cfg.sigma:.6g}")
    print(tx.summary())
    return EXIT_OK


def _read_elements(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        return np.load(path).astype(np.uint64)
    text = path.read_text().split()
    return np.array([int(t) for t in text], dtype=np.uint64)


def _role(args) -> int:
    if args.config is None or args.id is None:
        raise UsageError("--role needs --config and --id")
    if args.transport != "tcp":
        raise UsageError("--role runs one party per process and needs --transport tcp")
    cfg, addresses = protocol.read_config_file(args.config)
    for item in args.connect or []:
        pid, _, addr = item.partition("=")
        if not pid.isdigit() or not addr:
            raise UsageError(f"--connect expects id=host:port, got {item!r}")
        addresses[int(pid)] = parse_address(addr)
    if args.listen:
        addresses[args.id] = parse_address(args.listen)
    pid = args.id
    is_cp = pid < cfg.c
    if (args.role == "cp") != is_cp or not 0 <= pid < cfg.c + cfg.d:
        raise UsageError(f"party id {pid} is not a {args.role} under c={cfg.c}, d={cfg.d}")
    peers = cfg.peers_of(pid)
    needed = set(p for p in peers if p < pid) | ({pid} if any(p > pid for p in peers) else set())
    missing = sorted(needed - set(addresses))
    if missing:
        raise UsageError(f"no address for parties {missing}")
    ch = TcpChannel(pid, addresses, peers, cfg.session_id, cfg.digest(), timeout=args.timeout)
    try:
        ch.start()
        if is_cp:
            if args.dealer is None:
                raise UsageError("a cp needs --dealer with its material file")
            pm = read_party_material(args.dealer)
            if pm.index != pid:
                raise UsageError(f"material file belongs to CP {pm.index}, not {pid}")
            out = protocol.run_computation_party(cfg, pm, ch)
            value = out.value
            print(f"rounds: {out.rounds}")
        else:
            if args.input is None:
                raise UsageError("a dh needs --input with its element list")
            elems = _read_elements(args.input)
            nrng = np.random.default_rng(None if os.environ.get("DPDICE_SEED") is None
                                         else [_seed(args), pid])
            noise = sample_discrete_gaussian_exact(Fraction(cfg.sigma) ** 2, nrng)
            value = protocol.run_data_holder(cfg, pid, elems, noise, ch)
    finally:
        ch.close()
    est = fms_estimate(protocol.clamp_zero_count(value, cfg), cfg.m, cfg.w)
    print(f"revealed Z+N: {value}")
    print(f"estimate: {est.n_hat:.1f}")
    print(f"bytes sent: {ch.stats.bytes_sent} received: {ch.stats.bytes_received}")
    return EXIT_OK


def cmd_protocol_run(args) -> int:
    if args.demo == (args.role is not None):
        raise UsageError("choose exactly one of --demo or --role")
    return _demo(args) if args.demo else _role(args)


def cmd_dealer_gen(args) -> int:
    cfg, _ = protocol.read_config_file(args.config)
    mat = protocol.offline_prepare(cfg, _seed(args) if args.seed is not None else None)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for pm in mat.parties:
        path = args.out_dir / f"cp{pm.index}.mat"
        write_party_material(pm, path)
        print(f"wrote {path}")
    print("counts: " + ", ".join(f"{k}={v}" for k, v in mat.counts.as_dict().items()))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dpdice", description="FMS sketch experiments and the DP-DICE protocol")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sketch-bench", help="accuracy of sketches without privacy")
    _add_bench_args(s, "fms", privacy=False)
    s.add_argument("--save-sketch", type=Path, help="build one sketch and write it here")
    s.add_argument("--load-sketch", type=Path, help="read a sketch file and print its estimate")
    s.set_defaults(func=cmd_sketch_bench)

    s = sub.add_parser("dp-bench", help="accuracy under a central Gaussian mechanism")
    _add_bench_args(s, "fms,fm,hll", privacy=True)
    s.set_defaults(func=cmd_dp_bench)

    s = sub.add_parser("ddp-bench", help="accuracy under distributed discrete Gaussian noise")
    _add_bench_args(s, "fms,fm,hll", privacy=True)
    s.add_argument("--d", type=_list(int), default=[DEFAULTS["d"]])
    s.set_defaults(func=cmd_ddp_bench)

    s = sub.add_parser("calibrate", help="per-holder noise scale for a privacy target")
    s.add_argument("--eps", type=_list(float), default=[0.1, 0.2, 0.3, 0.4, 0.5])
    s.add_argument("--delta", type=float, default=DEFAULTS["delta"])
    s.add_argument("--d", type=_list(int), default=[DEFAULTS["d"]])
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("protocol-run", help="run the secure protocol")
    s.add_argument("--demo", action="store_true", help="host every party in this process")
    s.add_argument("--role", choices=("dh", "cp"))
    s.add_argument("--id", type=int)
    s.add_argument("--config", type=Path)
    s.add_argument("--dealer", type=Path, help="CP material file from dealer-gen")
    s.add_argument("--input", type=Path, help="DH element file (whitespace ints or .npy)")
    s.add_argument("--listen", help="host:port this party listens on")
    s.add_argument("--connect", type=_list(str), help="comma list of id=host:port")
    s.add_argument("--transport", choices=("mem", "tcp"), default="mem")
    s.add_argument("--d", type=int, default=DEFAULTS["d"])
    s.add_argument("--c", type=int, default=DEFAULTS["c"])
    s.add_argument("--m", type=_int_like, default=DEFAULTS["m"])
    s.add_argument("--w", type=int, default=None)
    s.add_argument("--n", type=_int_like, default=DEFAULTS["n"])
    s.add_argument("--overlap", type=float, default=0.0)
    s.add_argument("--eps", type=float, default=DEFAULTS["eps"])
    s.add_argument("--delta", type=float, default=DEFAULTS["delta"])
    s.add_argument("--sigma", type=float, default=None)
    s.add_argument("--zero-test-mode", choices=("premul", "beaver"), default="premul")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--timeout", type=float, default=120.0)
    s.set_defaults(func=cmd_protocol_run)

    s = sub.add_parser("dealer-gen", help="write per-CP dealer material files")
    s.add_argument("--config", type=Path, required=True)
    s.add_argument("--out-dir", type=Path, required=True)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_dealer_gen)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) == "protocol-run" and args.w is None:
        args.w = default_w(args.n, args.m)
    try:
        return args.func(args)
    except ProtocolAbort as exc:
        print(f"dpdice: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (UsageError, DpDiceError, OSError) as exc:
        print(f"dpdice: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
