"""Command-line refinement harness.

Runs the manufactured advection-diffusion-reaction problem for a matrix of
formulations, spline degrees and meshes, writes one CSV row per solve and
prints a convergence-rate summary.

Formulation ids: 1 primal trivial, 2 primal classical, 3 mixed trivial,
4 mixed classical I, 5 mixed classical II, 6 mixed ultraweak, 7 reduced flux.

Exit codes: 0 success, 2 configuration error, 3 solver error, 4 failed
rate check (``--check``) or replay mismatch.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .assembly import dump_system
from .exceptions import ConfigurationError, SolverError
from .forms import GrammSpec, ProblemData, build_spaces, get_formulation, validate_formulation
from .verification import ConvergenceRecord, RunResult, fit_rates, manufactured_case, run_single

log = logging.getLogger("rmiga")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4

CSV_COLUMNS = [
    "formulation", "p", "k", "q", "l", "n", "h", "dofs_trial", "dofs_test",
    "err_h1", "err_flux", "residual_gnorm", "rate_h1", "rate_flux",
]

H1_RATE_TOL = 0.15
FLUX_RATE_MARGIN = 0.85

_GRAMM_KEYS = [f.name for f in dataclasses.fields(GrammSpec)]


@dataclass
class RunConfig:
    formulations: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    p: tuple[int, ...] = (2, 3, 4, 5)
    k: int | None = None
    q: int | None = None
    l: int | None = None
    meshes: tuple[int, ...] = (5, 10, 20, 40)
    gramm: GrammSpec = field(default_factory=GrammSpec)
    solver: str = "auto"
    out: Path = Path("results")
    dump_matrices: bool = False
    kappa: float = 1.0
    beta: tuple[float, float] = (1.0, 1.0)
    gamma: float = 1.0
    reduced_flux: bool = False
    check: bool = False
    replay: int | None = None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)
    except ValueError:
        raise ConfigurationError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in str(text).replace(" ", "").split(",") if v)
    except ValueError:
        raise ConfigurationError(f"expected comma-separated numbers, got {text!r}") from None


def _bool(text: str) -> bool:
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off", ""):
        return False
    raise ConfigurationError(f"expected a boolean, got {text!r}")


def _int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigurationError(f"expected an integer, got {text!r}") from None


def _float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigurationError(f"expected a number, got {text!r}") from None


# key -> (RunConfig attribute or gramm key, parser)
_KEYS = {
    "formulation": ("formulations", _ints),
    "p": ("p", _ints),
    "k": ("k", _int),
    "q": ("q", _int),
    "l": ("l", _int),
    "mesh": ("meshes", _ints),
    "solver": ("solver", str),
    "out": ("out", Path),
    "dump_matrices": ("dump_matrices", _bool),
    "kappa": ("kappa", _float),
    "beta": ("beta", _floats),
    "gamma": ("gamma", _float),
    "reduced_flux": ("reduced_flux", _bool),
    "check": ("check", _bool),
    **{key: (key, _float) for key in _GRAMM_KEYS},
}


def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment. Unknown keys are rejected."""
    values: dict[str, str] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _KEYS:
            raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rmiga",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        argument_default=argparse.SUPPRESS,
    )
    d = RunConfig()
    g = GrammSpec()
    parser.add_argument("--config", help="key = value file; flags override its values")
    parser.add_argument("--formulation", help=f"formulation ids (default {_fmt(d.formulations)})")
    parser.add_argument("--p", help=f"trial spline degrees (default {_fmt(d.p)})")
    parser.add_argument("--k", help="trial continuity (default p-1)")
    parser.add_argument("--q", help="test degree (default p)")
    parser.add_argument(
        "--l", help="test continuity for all test fields (default: -1 for L2 tests, 0 otherwise)"
    )
    parser.add_argument("--mesh", help=f"elements per direction (default {_fmt(d.meshes)})")
    for key in _GRAMM_KEYS:
        parser.add_argument(f"--{key}", help=f"Gramm parameter (default {getattr(g, key):g})")
    parser.add_argument("--kappa", help=f"diffusion (default {d.kappa:g})")
    parser.add_argument("--beta", help="advection velocity bx,by (default 1,1)")
    parser.add_argument("--gamma", help=f"reaction (default {d.gamma:g})")
    parser.add_argument(
        "--solver", choices=["auto", "full", "schur"], help="linear solver path (default auto)"
    )
    parser.add_argument("--out", help=f"output directory (default {d.out})")
    parser.add_argument(
        "--dump-matrices", action="store_const", const="true", help="write G, B, L per solve"
    )
    parser.add_argument(
        "--reduced-flux",
        action="store_const",
        const="true",
        help="trial flux of degree p-1 and continuity k-1 instead of equal order",
    )
    parser.add_argument(
        "--check", action="store_const", const="true", help="gate the finest-pair rates (exit 4)"
    )
    parser.add_argument("--replay", help="re-solve data row ROW (1-based) of OUT/results.csv")
    parser.add_argument("-v", "--verbose", action="count", help="more logging")
    return parser


def _fmt(values: Sequence[int]) -> str:
    return ",".join(str(v) for v in values)


def parse_config(argv: Sequence[str] | None = None) -> RunConfig:
    """Build a RunConfig from an optional file and command-line flags."""
    args = vars(build_parser().parse_args(argv))
    return config_from_mapping(args)


def config_from_mapping(args: dict[str, object]) -> RunConfig:
    args = dict(args)
    args.pop("verbose", None)
    replay = args.pop("replay", None)
    values: dict[str, str] = {}
    if "config" in args:
        values.update(read_config_file(str(args.pop("config"))))
    for key, value in args.items():
        values[key.replace("-", "_")] = str(value)

    cfg = RunConfig()
    gramm = {}
    for key, raw in values.items():
        if key not in _KEYS:
            raise ConfigurationError(f"unknown option {key!r}")
        attr, conv = _KEYS[key]
        value = conv(raw)
        if key in _GRAMM_KEYS:
            gramm[key] = value
        else:
            setattr(cfg, attr, value)
    cfg.gramm = dataclasses.replace(cfg.gramm, **gramm)
    if replay is not None:
        cfg.replay = _int(str(replay))
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if not cfg.formulations or not cfg.p or not cfg.meshes:
        raise ConfigurationError("formulation, p and mesh lists must be nonempty")
    if cfg.solver not in ("auto", "full", "schur"):
        raise ConfigurationError(f"unknown solver {cfg.solver!r}")
    if any(n < 1 for n in cfg.meshes):
        raise ConfigurationError("mesh sizes must be positive")
    if len(cfg.beta) != 2:
        raise ConfigurationError("beta needs two components")
    if cfg.replay is not None and cfg.replay < 1:
        raise ConfigurationError("--replay rows are numbered from 1")
    data = ProblemData(cfg.kappa, cfg.beta, cfg.gamma)
    for fid in cfg.formulations:
        spec = get_formulation(fid)
        if spec.requires_reaction and not cfg.gamma > 0:
            raise ConfigurationError(f"formulation {fid} needs gamma > 0")
        for p in cfg.p:
            if p < 0:
                raise ConfigurationError("degrees must be nonnegative")
            # dimension counts scale with the mesh, so check the finest one
            trial, test = build_spaces(
                spec, max(cfg.meshes), p, cfg.k, cfg.q, cfg.l, cfg.reduced_flux
            )
            problems = validate_formulation(spec, trial, test, data)
            if problems:
                raise ConfigurationError(f"p={p}: " + "; ".join(problems))
            if cfg.solver == "schur" and not all(s.is_broken for s in test.values()):
                raise ConfigurationError(
                    f"formulation {fid}: the Schur solver needs broken (l = -1) test spaces"
                )


def _num(value: float | None) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return f"{value:.16e}"


def _row(r: RunResult, rate_h1: float | None, rate_flux: float | None) -> list[str]:
    return [
        str(r.formulation), str(r.p), str(r.k), str(r.q), "/".join(str(v) for v in r.l),
        str(r.n), _num(r.h), str(r.dofs_trial), str(r.dofs_test),
        _num(r.err_h1), _num(r.err_flux), _num(r.residual_gnorm),
        _num(rate_h1), _num(rate_flux),
    ]


def _pair_rate(e0: float | None, e1: float | None, h0: float, h1: float) -> float | None:
    if not e0 or not e1 or e0 <= 0 or e1 <= 0:
        return None
    return math.log2(e0 / e1) / math.log2(h0 / h1)


@dataclass
class GroupSummary:
    formulation: int
    p: int
    results: list[RunResult]
    h1_rate: float | None = None
    h1_slope: float | None = None
    h1_constant: float | None = None
    flux_rate: float | None = None
    flux_slope: float | None = None

    def check(self) -> list[str]:
        failures: list[str] = []
        if get_formulation(self.formulation).structure == "flux":
            # recovered u loses two orders through grad div q; not gated
            return failures
        if self.h1_rate is not None and abs(self.h1_rate - self.p) > H1_RATE_TOL:
            failures.append(f"H1 rate {self.h1_rate:.3f} outside {self.p} +- {H1_RATE_TOL}")
        if self.flux_rate is not None and self.flux_rate < self.p + FLUX_RATE_MARGIN:
            failures.append(f"flux rate {self.flux_rate:.3f} below {self.p + FLUX_RATE_MARGIN}")
        return failures


def summarize(formulation: int, p: int, results: list[RunResult]) -> GroupSummary:
    summary = GroupSummary(formulation, p, results)
    ordered = sorted(results, key=lambda r: r.n)
    if len({r.n for r in ordered}) < 2:
        return summary
    hs = [r.h for r in ordered]
    if all(r.err_h1 > 0 for r in ordered):
        fit = fit_rates(ConvergenceRecord(hs, [r.err_h1 for r in ordered]))
        summary.h1_rate, summary.h1_slope = fit.final, fit.slope
        summary.h1_constant = fit.constants[-1]
    if all(r.err_flux for r in ordered):
        fit = fit_rates(ConvergenceRecord(hs, [r.err_flux for r in ordered]))
        summary.flux_rate, summary.flux_slope = fit.final, fit.slope
    return summary


def _solve_one(cfg: RunConfig, fid: int, p: int, n: int, case, l=None, k=None) -> RunResult:
    return run_single(
        fid, p, n,
        k=cfg.k if k is None else k,
        q=cfg.q,
        l=cfg.l if l is None else l,
        gramm=cfg.gramm,
        case=case,
        solver=cfg.solver,
        reduced_flux=cfg.reduced_flux,
        keep=cfg.dump_matrices,
    )


def run(cfg: RunConfig) -> int:
    """Execute the sweep; returns the process exit status."""
    if cfg.replay is not None:
        return replay(cfg)
    case = manufactured_case(kappa=cfg.kappa, beta=cfg.beta, gamma=cfg.gamma)
    cfg.out.mkdir(parents=True, exist_ok=True)
    rows: list[list[str]] = []
    summaries: list[GroupSummary] = []
    failed = False
    for fid in cfg.formulations:
        for p in cfg.p:
            results: list[RunResult] = []
            prev: RunResult | None = None
            for n in cfg.meshes:
                try:
                    r = _solve_one(cfg, fid, p, n, case)
                except SolverError as exc:
                    print(f"error: formulation {fid}, p={p}, mesh {n}x{n}: {exc}", file=sys.stderr)
                    failed = True
                    prev = None
                    continue
                if cfg.dump_matrices and r.system is not None:
                    dump_system(r.system, cfg.out / "matrices", f"f{fid}_p{p}_n{n}_")
                    r.system = r.solution = None
                rate_h1 = rate_flux = None
                if prev is not None and prev.n < r.n:
                    rate_h1 = _pair_rate(prev.err_h1, r.err_h1, prev.h, r.h)
                    rate_flux = _pair_rate(prev.err_flux, r.err_flux, prev.h, r.h)
                rows.append(_row(r, rate_h1, rate_flux))
                results.append(r)
                prev = r
                log.info("formulation %d p=%d n=%d: |u-uh|_1=%.3e", fid, p, n, r.err_h1)
            summaries.append(summarize(fid, p, results))

    path = cfg.out / "results.csv"
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerows(rows)
    print_summary(summaries)
    print(f"wrote {len(rows)} rows to {path}")
    if failed:
        return EXIT_SOLVER
    if cfg.check:
        bad = [(s, msg) for s in summaries for msg in s.check()]
        for s, msg in bad:
            print(f"CHECK FAIL formulation {s.formulation} p={s.p}: {msg}")
        if bad:
            return EXIT_CHECK
        print("CHECK PASS")
    return EXIT_OK


def print_summary(summaries: Sequence[GroupSummary], stream=None) -> None:
    stream = stream or sys.stdout

    def f(v: float | None, spec: str = ".3f") -> str:
        return "-" if v is None else format(v, spec)

    header = f"{'form':>4} {'p':>2} {'rate_h1':>8} {'slope_h1':>8} {'C_h1':>10} {'rate_q':>8} {'slope_q':>8}"
    print(header, file=stream)
    for s in summaries:
        print(
            f"{s.formulation:>4} {s.p:>2} {f(s.h1_rate):>8} {f(s.h1_slope):>8} "
            f"{f(s.h1_constant, '.3e'):>10} {f(s.flux_rate):>8} {f(s.flux_slope):>8}",
            file=stream,
        )


def _rel(a: float | None, b: float | None) -> float:
    if a is None or b is None:
        return 0.0 if a is None and b is None else math.inf
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def replay(cfg: RunConfig, tol: float = 1e-12) -> int:
    """Re-solve one CSV row and compare its error values."""
    path = cfg.out / "results.csv"
    try:
        with path.open(encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    if not 1 <= cfg.replay <= len(rows):
        raise ConfigurationError(f"row {cfg.replay} not in 1..{len(rows)}")
    row = rows[cfg.replay - 1]
    fid, p, n, k = int(row["formulation"]), int(row["p"]), int(row["n"]), int(row["k"])
    l = int(row["l"]) if "/" not in row["l"] else None
    case = manufactured_case(kappa=cfg.kappa, beta=cfg.beta, gamma=cfg.gamma)
    r = _solve_one(cfg, fid, p, n, case, l=l, k=k)
    stored_flux = float(row["err_flux"]) if row["err_flux"] else None
    d_h1 = _rel(float(row["err_h1"]), r.err_h1)
    d_flux = _rel(stored_flux, r.err_flux)
    print(f"replay row {cfg.replay}: formulation {fid}, p={p}, n={n}")
    print(f"  err_h1   stored {row['err_h1']}  replayed {_num(r.err_h1)}  rel diff {d_h1:.2e}")
    if stored_flux is not None or r.err_flux is not None:
        print(f"  err_flux stored {row['err_flux']}  replayed {_num(r.err_flux)}  rel diff {d_flux:.2e}")
    if d_h1 <= tol and d_flux <= tol:
        print("REPLAY MATCH")
        return EXIT_OK
    print("REPLAY MISMATCH")
    return EXIT_CHECK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = vars(parser.parse_args(argv))
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    verbose = args.get("verbose") or 0
    logging.basicConfig(
        level=logging.DEBUG if verbose > 1 else logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = config_from_mapping(args)
        return run(cfg)
    except ConfigurationError as exc:
        parser.print_usage(sys.stderr)
        print(f"rmiga: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"rmiga: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
