"""Command-line interface: ``cranmux {analyze,sweep-servers,sweep-savings,simulate}``.

Exit codes: 0 success, 1 usage or config error, 2 numerical failure,
3 infeasible search.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import SystemConfig, parse_config, per_rrh_allocation, stability_check
from .errors import ConfigError, ConvergenceError, CranmuxError, InfeasibleError, UnstableError
from .latency import (percentile, queuing_time_mixture, system_time_cdf, t2_cdf, total_time_cdf,
                      write_cdf_csv)
from .markov import solve_rrh, write_distribution_csv, write_matrix_csv
from .savings import long_term_min_servers

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_INFEASIBLE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _zeta_name(zeta: float) -> str:
    return f"p{zeta * 100:.10g}"


def _fmt(x) -> str:
    if x is None:
        return "nan"
    return f"{x:.6g}"


def load_system(args) -> SystemConfig:
    """Config file plus ``--set key=value`` overrides (later lines win)."""
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        text += "\n" + item
    return parse_config(text, source=args.config)


def _write_text(text: str, path) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _rows_text(rows, fields, fmt: str) -> str:
    if fmt == "json":
        return json.dumps([{k: r.get(k) for k in fields} for r in rows], indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow(["" if r.get(k) is None else (repr(r[k]) if isinstance(r[k], float) else r[k])
                    for k in fields])
    return buf.getvalue()


def _pool_map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# ------------------------------------------------------------------- analyze

def cmd_analyze(args) -> int:
    cfg = load_system(args)
    c = args.servers if args.servers is not None else cfg.max_servers
    zetas = args.zeta or [0.99]
    rep = stability_check(cfg, c)
    out = [
        f"servers={c} rho_bbu={_fmt(rep.rho_bbu)} "
        f"rho_rrh={','.join(_fmt(r) for r in rep.rho_rrh)} stable={str(rep.stable).lower()}"
    ]
    alloc = per_rrh_allocation(cfg, c)
    worst = {z: 0.0 for z in zetas}
    unstable = False
    for j, lam in enumerate(cfg.arrival_rates):
        line = f"rrh {j}: lambda={_fmt(lam)} servers={alloc[j]}"
        if lam == 0.0:
            line += " mean_occupancy=0 tail_mass=0"
            line += "".join(f" {_zeta_name(z)}(t2)=0" for z in zetas)
            out.append(line)
            continue
        try:
            chain = solve_rrh(cfg, j, servers=alloc[j])
        except UnstableError as exc:
            out.append(line + f" unstable ({exc})")
            unstable = True
            continue
        pi = chain.stationary
        mix = queuing_time_mixture(pi, lam, alloc[j], cfg.service_rate, cfg.frame_duration,
                                   args.weighting)
        line += (f" mean_occupancy={_fmt(pi.mean())}"
                 f" tail_mass={_fmt(pi.probs[-1])} zero_delay={_fmt(mix.atom_weight)}")
        cdf = t2_cdf(mix, cfg.frame_duration)
        for z in zetas:
            p = percentile(cdf, z, cfg.tolerances.percentile_tol)
            worst[z] = max(worst[z], p)
            line += f" {_zeta_name(z)}(t2)={_fmt(p)}"
        out.append(line)
        if j == args.rrh:
            _analyze_exports(args, cfg, chain, mix)
    if not unstable:
        out.append(" ".join(f"{_zeta_name(z)}(t2)={_fmt(worst[z])}" for z in zetas))
    else:
        out.append("unstable: percentiles undefined")
    for tau in args.tau or ():
        for z in zetas:
            # InfeasibleError escapes to main() and maps to exit code 3
            c_min = long_term_min_servers(cfg, tau, z, args.weighting)
            out.append(f"min_servers(tau={_fmt(tau)},zeta={_fmt(z)})={c_min}")
    _write_text("\n".join(out) + "\n", args.out)
    return EXIT_OK


def _analyze_exports(args, cfg, chain, mix):
    if args.matrix_out:
        write_matrix_csv(chain.matrix, args.matrix_out)
    if args.pi_out:
        write_distribution_csv(chain.stationary, args.pi_out)
    if args.cdf_out:
        if args.cdf_kind == "t2":
            cdf = t2_cdf(mix, cfg.frame_duration)
        elif args.cdf_kind == "system":
            cdf = system_time_cdf(mix, cfg.service_rate, cfg.frame_duration)
        else:
            cdf = total_time_cdf(system_time_cdf(mix, cfg.service_rate, cfg.frame_duration),
                                 cfg.frame_duration)
        t_max = args.cdf_max if args.cdf_max is not None else 10.0 * cfg.frame_duration
        write_cdf_csv(cdf, np.linspace(0.0, t_max, args.cdf_points), args.cdf_out)


# ------------------------------------------------------------- sweep-servers

SERVER_FIELDS = ("servers", "lambda", "zeta", "percentile_t2")


def _servers_point(task):
    cfg, c, zetas, weighting = task
    from .latency import queuing_percentiles

    try:
        vals = queuing_percentiles(cfg, c, zetas, weighting).max(axis=0)
        return [float(v) for v in vals]
    except (UnstableError, ConvergenceError, ConfigError):
        return [None] * len(zetas)


def _parse_range(text: str) -> range:
    parts = text.split(":")
    try:
        nums = [int(p) for p in parts]
    except ValueError:
        raise ConfigError(f"bad range {text!r}; expected start:stop[:step]") from None
    if len(nums) not in (2, 3):
        raise ConfigError(f"bad range {text!r}; expected start:stop[:step]")
    step = nums[2] if len(nums) == 3 else 1
    if step <= 0 or nums[1] < nums[0]:
        raise ConfigError("range needs start <= stop and step > 0")
    return range(nums[0], nums[1] + 1, step)


def cmd_sweep_servers(args) -> int:
    base = load_system(args)
    zetas = args.zeta or [0.99]
    curves = args.lambda_per_rrh or [None]
    tasks, keys = [], []
    for lam in curves:
        cfg = base if lam is None else base.with_rates([lam] * base.num_rrh)
        rng = (_parse_range(args.range) if args.range else range(1, cfg.max_servers + 1))
        for c in rng:
            if c > cfg.max_servers:
                break
            tasks.append((cfg, c, tuple(zetas), args.weighting))
            keys.append((c, cfg.total_arrival_rate / cfg.num_rrh))
    results = _pool_map(_servers_point, tasks, args.jobs)
    rows = []
    for (c, lam), vals in zip(keys, results):
        for z, v in zip(zetas, vals):
            rows.append({"servers": c, "lambda": lam, "zeta": z, "percentile_t2": v})
    _write_text(_rows_text(rows, SERVER_FIELDS, args.format), args.out)
    return EXIT_OK


# ------------------------------------------------------------- sweep-savings

SAVINGS_FIELDS = ("rho_bbu", "policy", "tau", "zeta", "frame", "servers", "savings",
                  "upper_bound")


def _savings_point(task):
    from .savings import long_term_savings, short_term_expected_savings
    from .simulator import SHORT_TERM, SimulationConfig, required_servers_by_simulation, simulate

    kind, cfg, rho, tau, zeta, frames, seed = task
    row = {"rho_bbu": rho, "policy": kind, "tau": tau, "zeta": zeta,
           "frame": cfg.frame_duration, "servers": None, "savings": None,
           "upper_bound": 1.0 - cfg.total_arrival_rate / (cfg.max_servers * cfg.mu_f)}
    try:
        if kind == "long_term":
            rep = long_term_savings(cfg, tau, zeta)
            row.update(servers=rep.servers_provisioned, savings=rep.savings)
        elif kind == "short_term":
            row.update(savings=short_term_expected_savings(cfg).savings)
        elif kind == "long_term_sim":
            c = required_servers_by_simulation(cfg, tau, zeta, frames, seed)
            row.update(servers=c, savings=1.0 - c / cfg.max_servers)
        elif kind == "short_term_sim":
            res = simulate(SimulationConfig(cfg, SHORT_TERM, None, frames,
                                            min(1000, frames // 10), seed, record=()))
            row.update(savings=res.empirical_savings)
    except CranmuxError:
        pass
    return row


def _float_list(text: str):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad number list {text!r}") from None


def cmd_sweep_savings(args) -> int:
    base = load_system(args)
    rhos = _float_list(args.rho) if args.rho else [0.2, 0.4, 0.6, 0.8]
    taus = args.tau or [1.0, 10.0]
    zetas = args.zeta or [0.99, 0.999]
    frames_list = args.frame or [base.frame_duration]
    for rho in rhos:
        if not 0.0 <= rho < 1.0:
            raise ConfigError(f"rho_bbu grid points must lie in [0, 1), got {rho}")
    tasks = []
    for rho in rhos:
        cfg = base.with_pool_load(rho)
        for tau in taus:
            for zeta in zetas:
                tasks.append(("long_term", cfg, rho, tau, zeta, args.frames, args.seed))
                if args.simulate:
                    tasks.append(("long_term_sim", cfg, rho, tau, zeta, args.frames, args.seed))
        for frame in frames_list:
            fcfg = cfg.with_frame(frame)
            tasks.append(("short_term", fcfg, rho, None, None, args.frames, args.seed))
            if args.simulate:
                tasks.append(("short_term_sim", fcfg, rho, None, None, args.frames, args.seed))
    rows = _pool_map(_savings_point, tasks, args.jobs)
    _write_text(_rows_text(rows, SAVINGS_FIELDS, args.format), args.out)
    return EXIT_OK


# ------------------------------------------------------------------ simulate

def cmd_simulate(args) -> int:
    from .simulator import (LONG_TERM, SHORT_TERM, SimulationConfig, result_json, simulate,
                            write_samples_csv)

    cfg = load_system(args)
    policy = LONG_TERM if args.policy == "lt" else SHORT_TERM
    servers = None
    if policy == LONG_TERM:
        servers = args.servers if args.servers is not None else cfg.max_servers
    warmup = args.warmup if args.warmup is not None else min(1000, args.frames // 10)
    sc = SimulationConfig(cfg, policy, servers, args.frames, warmup, args.seed,
                          queue_cap=args.queue_cap)
    res = simulate(sc)
    if args.samples_out:
        write_samples_csv(res, args.samples_out)
    _write_text(result_json(sc, res, tuple(args.zeta or (0.99, 0.999))) + "\n", args.out)
    return EXIT_OK


# ---------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cranmux", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", required=True, metavar="PATH",
                        help="flat key = value system description")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
        sp.add_argument("--out", metavar="PATH", help="write output here instead of stdout")
        sp.add_argument("--zeta", type=float, action="append", help="percentile level (repeatable)")

    a = sub.add_parser("analyze", help="single operating point")
    common(a)
    a.add_argument("--servers", type=int, help="pool size c (default L*N)")
    a.add_argument("--weighting", choices=("per_request", "per_frame"), default="per_request")
    a.add_argument("--tau", type=float, action="append",
                   help="also report the smallest pool meeting this delay target (repeatable)")
    a.add_argument("--rrh", type=int, default=0, help="RRH whose chain/CDF is exported")
    a.add_argument("--cdf-out", metavar="PATH")
    a.add_argument("--cdf-kind", choices=("t2", "system", "total"), default="t2")
    a.add_argument("--cdf-max", type=float)
    a.add_argument("--cdf-points", type=int, default=201)
    a.add_argument("--matrix-out", metavar="PATH", help="CSV dump of the transition matrix")
    a.add_argument("--pi-out", metavar="PATH", help="CSV dump of the stationary distribution")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("sweep-servers", help="t2 percentile against pool size")
    common(s)
    s.add_argument("--range", metavar="START:STOP[:STEP]", help="pool sizes (default 1:L*N)")
    s.add_argument("--lambda-per-rrh", type=float, action="append",
                   help="equal per-RRH rate for one curve (repeatable)")
    s.add_argument("--weighting", choices=("per_request", "per_frame"), default="per_request")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep_servers)

    v = sub.add_parser("sweep-savings", help="long/short-term savings against pool load")
    common(v)
    v.add_argument("--rho", metavar="LIST", help="comma-separated rho_bbu grid")
    v.add_argument("--tau", type=float, action="append", help="delay target (repeatable)")
    v.add_argument("--frame", type=float, action="append",
                   help="frame length for short-term rows (repeatable)")
    v.add_argument("--simulate", action="store_true", help="add simulation-derived rows")
    v.add_argument("--frames", type=int, default=1_000_000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--format", choices=("csv", "json"), default="csv")
    v.add_argument("--jobs", type=int, default=1)
    v.set_defaults(func=cmd_sweep_savings)

    m = sub.add_parser("simulate", help="run the frame simulator")
    common(m)
    m.add_argument("--policy", choices=("lt", "st"), default="lt")
    m.add_argument("--servers", type=int, help="pool size for --policy lt (default L*N)")
    m.add_argument("--frames", type=int, default=100_000)
    m.add_argument("--warmup", type=int)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--queue-cap", type=int, default=10_000)
    m.add_argument("--samples-out", metavar="PATH", help="raw per-transfer CSV")
    m.add_argument("--format", choices=("json",), default="json")
    m.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConvergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except UnstableError as exc:
        print(f"unstable: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
