"""Command-line interface: ``jointps {fit,ppc,simulate,summarize}``.

Every run writes a ``config.json`` echo holding the fully resolved
configuration (defaults included), which can be passed back through
``--config`` to repeat the run exactly.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import dataio
from .estimands import estimand_draws, kde, summarize_store
from .gibbs import ChainConfig, DrawStore, SamplerError, run_chains
from .model import Family, ObservedDataset, Priors, Restriction, ValidationError, Variant, is_binary, variant_spec
from .ppc import default_measures, run_checks
from .simlab import (
    SCENARIO_IDS,
    _fit_seed,
    generate_dataset,
    repeated_sampling_study,
    run_comparison,
    scenario_params,
)

log = logging.getLogger("jointps")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_CONVERGENCE = 3

PSRF_THRESHOLD = 1.1
PSRF_ESTIMANDS = ("tau_c", "tau_n", "pi_c")
VARIANT_ORDER = list(Variant)
SUMMARY_COLUMNS = ["variant", "label", "estimand", "median", "q025", "q975", "width", "prob_negative", "mean", "psrf"]
PPC_COLUMNS = ["method", "variant", "outcome", "SI_c", "SI_n", "NO_c", "NO_n", "SN_c", "SN_n", "Chi2", "KS"]


@dataclass
class RunConfig:
    """Fully resolved run configuration.

    The output directory is deliberately not part of the echoed config so
    that two runs differing only in ``--out`` produce identical files.
    """

    seed: Optional[int] = None
    variants: list = field(default_factory=list)
    input: Optional[str] = None
    columns: dict = field(default_factory=lambda: dict(dataio.DEFAULT_COLUMNS))
    log_y1: bool = False
    chains: dict = field(default_factory=lambda: ChainConfig().to_dict())
    priors: dict = field(default_factory=lambda: Priors().to_dict())
    kde: bool = True
    dump_draws: bool = True
    ppc: dict = field(default_factory=lambda: {"K": 500, "J": 1000, "max_draws": None})
    scenario: Optional[str] = None
    replications: int = 0
    emit_data: bool = False

    def chain_config(self) -> ChainConfig:
        return ChainConfig(**self.chains)

    def prior_obj(self) -> Priors:
        return Priors.from_dict(self.priors)

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ValidationError(f"config file {path}: expected a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"config file {path}: unknown keys {sorted(unknown)}")
    return raw


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the optional JSON config and command-line flags (highest priority)."""
    cfg = RunConfig()
    if getattr(args, "config", None):
        raw = load_config(args.config)
        for k, v in raw.items():
            if k == "chains":
                cfg.chains = {**cfg.chains, **v}
            elif k == "priors":
                cfg.priors = {**cfg.priors, **v}
            elif k == "columns":
                cfg.columns = {**cfg.columns, **v}
            elif k == "ppc":
                cfg.ppc = {**cfg.ppc, **v}
            else:
                setattr(cfg, k, v)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if cfg.seed is None:
        raise ValidationError("a seed is required (--seed or \"seed\" in the config)")
    cfg.seed = int(cfg.seed)
    cfg.chains["seed"] = cfg.seed
    for flag, key in (("chains", "n_chains"), ("iters", "n_iter"), ("burnin", "n_burnin"),
                      ("threads", "threads"), ("thin", "thin")):
        v = getattr(args, flag, None)
        if v is not None:
            cfg.chains[key] = v
    if getattr(args, "variant", None):
        cfg.variants = list(args.variant)
    if getattr(args, "input", None):
        cfg.input = args.input
    if getattr(args, "log_y1", False):
        cfg.log_y1 = True
    if getattr(args, "scenario", None):
        cfg.scenario = args.scenario
    for flag in ("K", "J", "max_draws"):
        v = getattr(args, flag, None)
        if v is not None:
            cfg.ppc[flag] = v
    if getattr(args, "replications", None) is not None:
        cfg.replications = args.replications
    if getattr(args, "emit_data", False):
        cfg.emit_data = True
    if getattr(args, "no_kde", False):
        cfg.kde = False
    if getattr(args, "no_dump", False):
        cfg.dump_draws = False
    try:
        cfg.variants = [Variant(v).value for v in cfg.variants]
    except ValueError as exc:
        raise ValidationError(f"{exc}; choose from {', '.join(v.value for v in Variant)}") from None
    if cfg.input is not None:
        cfg.input = str(Path(cfg.input).resolve())
    try:
        cfg.chain_config()
        cfg.prior_obj()
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"invalid configuration: {exc}") from None
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _canonical(variants) -> list:
    vs = {Variant(v) for v in variants}
    return [v for v in VARIANT_ORDER if v in vs]


def _load_input(cfg: RunConfig) -> ObservedDataset:
    if cfg.input is None:
        raise ValidationError("--input is required")
    return dataio.ingest_csv(cfg.input, cfg.columns, log_y1=cfg.log_y1)


def _default_variants(data: ObservedDataset) -> list:
    if data.y2 is None:
        return [Variant.UNIVARIATE, Variant.UNIVARIATE_ER]
    return list(VARIANT_ORDER)


# ---------------------------------------------------------------------------
# summaries

def summary_rows(variant: Variant, summaries: dict) -> list:
    rows = []
    for name, (s, psrf) in summaries.items():
        rows.append({"variant": variant.value, "label": variant.label, "estimand": name, **s.to_dict(), "psrf": psrf})
    return rows


def convergence_problems(variant: Variant, summaries: dict) -> list:
    out = []
    for name in PSRF_ESTIMANDS:
        if name in summaries:
            psrf = summaries[name][1]
            if np.isfinite(psrf) and psrf > PSRF_THRESHOLD or np.isinf(psrf):
                out.append(f"{variant.value}: PSRF for {name} is {psrf:.3f} (> {PSRF_THRESHOLD})")
    return out


def write_summaries(out: Path, per_variant: dict) -> list:
    """Write ``summary.csv``, ``psrf.csv`` and ``summary.json``; return warnings."""
    rows, psrf_rows, warnings = [], [], []
    report = {}
    for v, summaries in per_variant.items():
        rows += summary_rows(v, summaries)
        for name, (_, psrf) in summaries.items():
            psrf_rows.append({"variant": v.value, "estimand": name, "psrf": psrf,
                              "flag": "high" if psrf > PSRF_THRESHOLD else ""})
        warnings += convergence_problems(v, summaries)
        report[v.value] = {name: {**s.to_dict(), "psrf": psrf} for name, (s, psrf) in summaries.items()}
    dataio.write_rows_csv(rows, out / "summary.csv", SUMMARY_COLUMNS)
    dataio.write_rows_csv(psrf_rows, out / "psrf.csv", ["variant", "estimand", "psrf", "flag"])
    _write_json({"variants": report, "warnings": warnings}, out / "summary.json")
    return warnings


def write_kde(out: Path, variant: Variant, store: DrawStore) -> None:
    for name, draws in estimand_draws(store).items():
        if name not in ("tau_c", "tau_n"):
            continue
        x = np.asarray(draws).ravel()
        if np.ptp(x) == 0:
            continue
        grid, dens = kde(x)
        rows = [{"x": float(a), "density": float(b)} for a, b in zip(grid, dens)]
        dataio.write_rows_csv(rows, out / f"kde_{variant.value}_{name}.csv", ["x", "density"])


def fit_all(data: ObservedDataset, cfg: RunConfig) -> dict:
    """Fit each configured variant; returns ``{Variant: DrawStore}`` in canonical order."""
    variants = _canonical(cfg.variants) if cfg.variants else _default_variants(data)
    binary = data.y2 is not None and is_binary(data.y2)
    base = cfg.chain_config()
    priors = cfg.prior_obj()
    stores = {}
    for v in variants:
        spec = variant_spec(v, binary, priors)
        fit_data = data if v.bivariate else data.drop_secondary()
        chain_cfg = replace(base, seed=_fit_seed(cfg.seed, 0, VARIANT_ORDER.index(v)))
        log.info("fitting %s (%s, %d chains x %d iterations)", v.value, spec.family.value,
                 chain_cfg.n_chains, chain_cfg.n_iter)
        try:
            stores[v] = run_chains(fit_data, spec, chain_cfg)
        except SamplerError as exc:
            raise SamplerError(f"variant {v.value}: {exc}") from exc
    return stores


# ---------------------------------------------------------------------------
# commands

def cmd_fit(args) -> int:
    cfg = resolve_config(args)
    data = _load_input(cfg)
    out = _out_dir(args)
    stores = fit_all(data, cfg)
    cfg.variants = [v.value for v in stores]
    per_variant = {}
    for v, store in stores.items():
        per_variant[v] = summarize_store(store)
        if cfg.dump_draws:
            dataio.write_draws(store, out / f"draws_{v.value}.csv", {"variant": v.value})
        if cfg.kde:
            write_kde(out, v, store)
    warnings = write_summaries(out, per_variant)
    _write_json(cfg.to_dict(), out / "config.json")
    print(format_table(per_variant))
    return _finish(warnings, args.strict)


def _finish(warnings, strict: bool) -> int:
    for w in warnings:
        log.warning("convergence: %s", w)
    if warnings and strict:
        return EXIT_CONVERGENCE
    return EXIT_OK


def format_table(per_variant: dict) -> str:
    lines = [f"{'model':<22}{'estimand':<10}{'median':>10}{'2.5%':>10}{'97.5%':>10}{'width':>10}{'psrf':>8}"]
    for v, summaries in per_variant.items():
        for name, (s, psrf) in summaries.items():
            lines.append(f"{v.label:<22}{name:<10}{s.median:>10.3f}{s.q025:>10.3f}{s.q975:>10.3f}"
                         f"{s.width:>10.3f}{psrf:>8.3f}")
    return "\n".join(lines)


def _draw_files(paths) -> list:
    files = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            found = {f.stem[len("draws_"):]: f for f in p.glob("draws_*.csv")}
            files += [found[v.value] for v in VARIANT_ORDER if v.value in found]
        else:
            files.append(p)
    if not files:
        raise ValidationError("no draw files found")
    return files


def cmd_summarize(args) -> int:
    out = _out_dir(args)
    per_variant = {}
    for f in _draw_files(args.draws):
        store, meta = dataio.read_draws(f)
        v = Variant(meta.get("variant", f.stem[len("draws_"):]))
        per_variant[v] = summarize_store(store)
    warnings = write_summaries(out, per_variant)
    print(format_table(per_variant))
    return _finish(warnings, args.strict)


def cmd_ppc(args) -> int:
    cfg = resolve_config(args)
    data = _load_input(cfg)
    out = _out_dir(args)
    if args.draws:
        stores = {}
        for f in _draw_files(args.draws):
            store, meta = dataio.read_draws(f)
            stores[Variant(meta["variant"])] = store
        cfg.variants = [v.value for v in stores]
    else:
        stores = fit_all(data, cfg)
        cfg.variants = [v.value for v in stores]
    K, J = int(cfg.ppc["K"]), int(cfg.ppc["J"])
    rows = []
    report = {}
    for v, store in stores.items():
        if J > len(store):
            raise ValidationError(f"variant {v.value}: J={J} exceeds the {len(store)} available draws")
        fit_data = data if v.bivariate else data.drop_secondary()
        seed = _fit_seed(cfg.seed, 1, VARIANT_ORDER.index(v))
        res = run_checks(store, fit_data, store.spec, seed, K=K, J=J, max_draws=cfg.ppc.get("max_draws"))
        report[v.value] = {}
        for method, rep in res.items():
            vals = rep.as_dict()
            report[v.value][method] = {"p": vals, "warnings": rep.warnings(), **{k: rep.extra[k] for k in rep.extra}}
            for w in rep.warnings():
                log.warning("%s %s: %s", v.value, method, w)
            outcomes = sorted({m.outcome for m in default_measures(store.spec)})
            for o in outcomes:
                row = {"method": method, "variant": v.value, "outcome": f"y{o}"}
                for k in PPC_COLUMNS[3:]:
                    kind, _, s = k.partition("_")
                    name = f"{kind}_{o}_{s}" if s else f"{kind}_{o}"
                    row[k] = vals.get(name)
                rows.append(row)
    order = {"PPPV": 0, "SPPV": 1, "ModifiedSPPV": 2}
    rows.sort(key=lambda r: order[r["method"]])
    dataio.write_rows_csv(rows, out / "ppc.csv", PPC_COLUMNS)
    _write_json(report, out / "ppc.json")
    _write_json(cfg.to_dict(), out / "config.json")
    for r in rows:
        cells = " ".join(f"{k}={r[k]:.3f}" for k in PPC_COLUMNS[3:] if r[k] is not None)
        print(f"{r['method']:<13}{r['variant']:<15}{r['outcome']:<4}{cells}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    if cfg.scenario is None:
        raise ValidationError("--scenario is required")
    try:
        scenario = scenario_params(cfg.scenario)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    cfg.scenario = scenario.id
    out = _out_dir(args)
    if cfg.emit_data:
        sim = generate_dataset(scenario, cfg.seed)
        path = out / f"scenario_{scenario.id}_seed{cfg.seed}.csv"
        dataio.write_dataset_csv(sim.data, path)
        _write_json(cfg.to_dict(), out / "config.json")
        print(path)
        return EXIT_OK
    variants = _canonical(cfg.variants) if cfg.variants else [Variant.UNIVARIATE, Variant.BIVARIATE]
    cfg.variants = [v.value for v in variants]
    chain_cfg = cfg.chain_config()
    priors = cfg.prior_obj()

    def fit_fn(data, v, c):
        spec = variant_spec(v, False, priors)
        return summarize_store(run_chains(data if v.bivariate else data.drop_secondary(), spec, c))

    warnings = []
    if cfg.replications >= 2:
        report = repeated_sampling_study(scenario, cfg.replications, variants, chain_cfg,
                                         master_seed=cfg.seed, fit_fn=fit_fn)
        rows = report.rows()
        cols = ["variant", "estimand", "truth", "bias", "percent_bias", "mse", "coverage", "mean_width",
                "replications"]
        dataio.write_rows_csv(rows, out / "recovery.csv", cols)
        _write_json({"scenario": scenario.id, "rows": rows}, out / "recovery.json")
        for r in rows:
            print(f"{r['variant']:<15}{r['estimand']:<8} bias={r['bias']:.4f} mse={r['mse']:.4f} "
                  f"coverage={r['coverage']:.2f} width={r['mean_width']:.4f}")
    else:
        per_variant = run_comparison(scenario, variants, chain_cfg, cfg.seed, fit_fn=fit_fn)
        warnings = write_summaries(out, per_variant)
        ratio = {}
        if Variant.BIVARIATE in per_variant and Variant.UNIVARIATE in per_variant:
            for name in ("tau_c", "tau_n"):
                ratio[name] = per_variant[Variant.BIVARIATE][name][0].width / per_variant[Variant.UNIVARIATE][name][0].width
        _write_json({"scenario": scenario.id, "truth": scenario.truth, "width_ratio": ratio},
                    out / "comparison.json")
        print(format_table(per_variant))
        for k, r in ratio.items():
            print(f"width ratio bivariate/univariate {k}: {r:.3f}")
    _write_json(cfg.to_dict(), out / "config.json")
    return _finish(warnings, args.strict)


def cmd_oracle(args) -> int:
    from .model import ModelSpec
    from .oracle import default_grid, grid_posterior

    data = dataio.ingest_csv(args.input).drop_secondary()
    var = np.array(args.variances, dtype=float).reshape(2, 2)
    fixed = var.reshape(2, 2, 1, 1)
    spec = ModelSpec(Family.UNIVARIATE, Restriction.NONE, Priors(fixed_sigma=fixed))
    post = grid_posterior(data, spec, default_grid(data, var))
    result = {"pi_c": post.pi_c, "tau_c": post.tau_c, "tau_n": post.tau_n, "nodes": post.grid.size}
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def _add_run_flags(p: argparse.ArgumentParser, data: bool = True, chains: bool = True) -> None:
    p.add_argument("--config", help="JSON run configuration; flags override its values")
    p.add_argument("--seed", type=int, help="master seed (required here or in the config)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--strict", action="store_true", help="exit with status 3 on convergence warnings")
    p.add_argument("--variant", action="append", choices=[v.value for v in Variant],
                   help="model variant to fit (repeatable)")
    if data:
        p.add_argument("--input", help="CSV file with columns z, d, y1 and optionally y2")
        p.add_argument("--log-y1", action="store_true", help="analyse log(y1)")
    if chains:
        p.add_argument("--chains", type=int, help="number of chains")
        p.add_argument("--iters", type=int, help="iterations per chain, burn-in included")
        p.add_argument("--burnin", type=int, help="burn-in iterations")
        p.add_argument("--thin", type=int, help="keep every k-th draw")
        p.add_argument("--threads", type=int, help="worker processes for chains")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jointps",
        description="Bayesian principal stratification with one-sided noncompliance.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{fit,ppc,simulate,summarize}")

    p = sub.add_parser("fit", help="fit model variants and write posterior summaries")
    _add_run_flags(p)
    p.add_argument("--no-kde", action="store_true", help="skip kernel density grids")
    p.add_argument("--no-dump", action="store_true", help="skip per-draw CSV dumps")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("ppc", help="posterior predictive checks")
    _add_run_flags(p)
    p.add_argument("--draws", nargs="+", help="draw dumps (files or fit output directories); fits anew if omitted")
    p.add_argument("--K", type=int, help="replicates per SPPV (default 500)")
    p.add_argument("--J", type=int, help="posterior draws combined by the modified SPPV (default 1000)")
    p.add_argument("--max-draws", dest="max_draws", type=int, help="thin the draws used for PPPVs")
    p.set_defaults(func=cmd_ppc)

    p = sub.add_parser("simulate", help="generate scenario data or run simulation comparisons")
    _add_run_flags(p, data=False)
    p.add_argument("--scenario", type=str.upper, choices=SCENARIO_IDS, help="scenario id")
    p.add_argument("--emit-data", action="store_true", help="only write the generated dataset")
    p.add_argument("--replications", type=int, help="repeated-sampling study with this many datasets")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("summarize", help="recompute summaries from draw dumps")
    p.add_argument("draws", nargs="+", help="draw dump files or fit output directories")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_summarize)

    # validation instrument, not listed in --help
    p = sub.add_parser("oracle")
    p.add_argument("--input", required=True)
    p.add_argument("--variances", type=float, nargs=4, required=True,
                   metavar=("VAR_C0", "VAR_C1", "VAR_N0", "VAR_N1"))
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SamplerError, FloatingPointError, np.linalg.LinAlgError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
