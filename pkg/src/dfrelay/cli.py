"""Command-line front end.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 I/O error.
"""

import argparse
import csv
import io
import json
import sys

import numpy as np

from .errors import InvalidConfig, NonConvergence
from .link_sim import SimConfig, config_fields, run_sweep

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

CSV_HEADER = ["scheme", "power_alloc", "n_r", "n_d", "l_h", "l_g", "sigma_t", "snr_db",
              "trials", "bits", "bit_errors", "ber", "ci95", "opa_nonconv"]

FIG_SNR_GRID = [float(x) for x in range(0, 21, 2)]
COMBOS = [("fde", "epa"), ("fde", "opa"), ("fde_dfe", "epa"), ("fde_dfe", "opa")]


class ConfigError(Exception):
    pass


class InputError(Exception):
    pass


def _coerce(key, value):
    """Convert a JSON or override value to the declared type of ``key``."""
    fld = config_fields().get(key)
    if fld is None:
        raise ConfigError(f"unknown config key {key!r}")
    default = SimConfig.__dataclass_fields__[key].default
    if key == "snr_db_grid":
        if isinstance(value, (int, float)):
            value = [value]
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list of numbers")
        try:
            return [float(v) for v in value]
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a list of numbers") from None
    if key in ("b_h", "b_g"):
        if value is None:
            return None
        default = 0
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ValueError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise ValueError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if not isinstance(value, str):
            raise ValueError
        return value
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: invalid value {value!r}") from None


def parse_override(text: str):
    key, sep, raw = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not KEY=VALUE")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, _coerce(key, value)


def load_settings(config_path, overrides, seed) -> dict:
    settings = {}
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise InputError(f"cannot read config {config_path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {config_path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a flat JSON object")
        for key, value in data.items():
            settings[key] = _coerce(key, value)
    for text in overrides or ():
        key, value = parse_override(text)
        settings[key] = value
    if seed is not None:
        settings["base_seed"] = seed
    return settings


def build_config(settings: dict, **preset) -> SimConfig:
    try:
        return SimConfig(**{**settings, **preset})
    except InvalidConfig as exc:
        raise ConfigError(str(exc)) from None


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def records_to_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow([r.scheme, r.power_alloc, r.n_r, r.n_d, r.l_h, r.l_g,
                         _fmt(r.sigma_t), _fmt(r.snr_db), r.trials, r.bits, r.bit_errors,
                         _fmt(r.ber), _fmt(r.ci95_halfwidth), r.opa_nonconvergence_count])
    return buf.getvalue()


def write_output(text: str, path) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def preset_configs(name: str, settings: dict) -> list[SimConfig]:
    """Configurations behind each figure preset.

    The preset fixes the swept axes (antenna counts, schemes, delay spread);
    file and command-line settings apply to everything else.
    """
    base = {"snr_db_grid": FIG_SNR_GRID, **settings}
    if name == "fig2":
        pairs = [(1, 1), (1, 2), (2, 1), (2, 2), (1, 3), (3, 1), (3, 3)]
        return [build_config(base, n_r=a, n_d=b, sigma_t=2.0, l_h=3, l_g=3,
                             scheme="fde", power_alloc="epa") for a, b in pairs]
    if name == "fig3":
        return [build_config(base, n_r=n, n_d=n, sigma_t=2.0, l_h=3, l_g=3,
                             scheme=sch, power_alloc=pa)
                for n in (1, 2, 3) for sch, pa in COMBOS]
    if name == "fig4":
        base = {**base, "snr_db_grid": [10.0]} if "snr_db_grid" not in settings else base
        n = settings.get("n_r", 3)
        return [build_config(base, n_r=n, n_d=settings.get("n_d", n), l_h=21, l_g=21, sigma_t=st,
                             scheme=sch, power_alloc=pa)
                for sch, pa in COMBOS for st in np.arange(0.5, 4.01, 0.5).tolist()]
    raise ValueError(name)


def cmd_sweep(args, settings) -> int:
    if args.command == "sweep":
        configs = [build_config(settings)]
    else:
        configs = preset_configs(args.command, settings)
    records = []
    for cfg in configs:
        records.extend(run_sweep(cfg, threads=args.threads))
    try:
        write_output(records_to_csv(records), args.out)
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def cmd_kkt_check(args, settings) -> int:
    from .channel import draw_channel, freq_response
    from .mmse_fde import default_indices
    from .power_alloc import SolverOptions, kkt_residual, optimize_fde, optimize_fde_dfe

    cfg = build_config({"m": 64, **settings})
    snr_hat = 10.0 ** (args.snr_db / 10.0)
    opts = SolverOptions(args.epsilon, cfg.max_iterations)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.base_seed, 0xCC]))
    solvers = {
        "fde": lambda g: optimize_fde(g, snr_hat, opts),
        "fde_dfe": lambda g: optimize_fde_dfe(g, snr_hat, default_indices(cfg.feedback_g), opts),
    }
    worst = {k: 0.0 for k in solvers}
    gap = {k: 0.0 for k in solvers}
    nonconv = {k: 0 for k in solvers}
    lines = ["draw,solver,iterations,converged,residual,power_gap"]
    for d in range(args.draws):
        g = freq_response(draw_channel(cfg.pdp(cfg.l_g), rng, (cfg.n_r, cfg.n_d)), cfg.m)
        for name, solve in solvers.items():
            try:
                state = solve(g)
            except NonConvergence as exc:
                state = exc.state
            res = kkt_residual(g, state, snr_hat)
            power_gap = abs(float(np.sum(np.abs(state.alpha) ** 2)) - 1.0)
            lines.append(f"{d},{name},{state.iterations},{int(state.converged)},{res:.3e},{power_gap:.3e}")
            if state.converged:
                worst[name] = max(worst[name], res)
                gap[name] = max(gap[name], power_gap)
            else:
                nonconv[name] += 1
    ok = True
    for name in solvers:
        frac = 1.0 - nonconv[name] / args.draws
        passed = worst[name] <= args.threshold and frac >= args.min_converged
        ok &= passed
        lines.append(f"# {name}: max residual {worst[name]:.3e}, max power gap {gap[name]:.3e}, "
                     f"nonconverged {nonconv[name]}/{args.draws} -> {'PASS' if passed else 'FAIL'}")
    try:
        write_output("\n".join(lines) + "\n", args.out)
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_selftest(args, settings) -> int:
    from . import selftest

    failures = selftest.run(corrupt_dft=args.corrupt_dft, out=sys.stdout)
    if failures:
        print("selftest FAILED: " + ", ".join(failures), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON object of SimConfig fields")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set a config field; repeatable, wins over --config")
    common.add_argument("--threads", type=int, default=1, help="worker process cap")
    common.add_argument("--seed", type=int, help="base seed (same as --override base_seed=N)")

    parser = argparse.ArgumentParser(prog="dfrelay", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("sweep", parents=[common], help="BER sweep over the config's SNR grid")
    for name in ("fig2", "fig3", "fig4"):
        sub.add_parser(name, parents=[common], help=f"BER sweep for the {name} preset")
    kkt = sub.add_parser("kkt-check", parents=[common], help="certify the power allocation solvers")
    kkt.add_argument("--draws", type=int, default=100)
    kkt.add_argument("--threshold", type=float, default=1e-4)
    kkt.add_argument("--snr-db", type=float, default=10.0)
    kkt.add_argument("--epsilon", type=float, default=1e-3)
    kkt.add_argument("--min-converged", type=float, default=0.95)
    st = sub.add_parser("selftest", parents=[common], help="run the oracle and invariant checks")
    st.add_argument("--corrupt-dft", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        settings = load_settings(args.config, args.override, args.seed)
        if args.command == "kkt-check":
            return cmd_kkt_check(args, settings)
        if args.command == "selftest":
            return cmd_selftest(args, settings)
        return cmd_sweep(args, settings)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
