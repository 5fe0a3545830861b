"""``panelvar`` command-line entry point.

Every subcommand reads one JSON config (sections ``data``, ``model``,
``sampler``, ``irf``, ``loo``, ``posthoc``, ``simulate``), writes its outputs
plus a ``manifest.json`` into ``--out`` and returns an exit status:

    0  success
    2  bad input data, bad config or a missing prerequisite file
    3  sampling failed
    4  ``--strict`` diagnostic failure
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import DataConfig, DataError, PanelDataset, RESPONSES, load_characteristics, load_panel
from .diagnostics import convergence_report, summarize, write_summary
from .model import ModelError, ModelSpec, PanelVarModel
from .posthoc import LocoError
from .sampler import PosteriorDraws, SamplerConfig, SamplingError, run_sampling

logger = logging.getLogger("panelvar")

EXIT_OK, EXIT_DATA, EXIT_SAMPLING, EXIT_DIAGNOSTIC = 0, 2, 3, 4
SECTIONS = ("data", "model", "sampler", "irf", "loo", "posthoc", "simulate")
DATA_FILES = ("responses.csv", "npi.csv", "vaccination.csv", "variants.csv",
              "characteristics.csv", "borders.csv")
FIT_FILES = ("draws.csv", "telemetry.json", "panel.json", "fit_config.json")


class MissingPrerequisite(FileNotFoundError):
    pass


# ---------------------------------------------------------------------------
# config and manifest
# ---------------------------------------------------------------------------


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise MissingPrerequisite(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise DataError(f"{p}: config must be a JSON object")
    unknown = set(cfg) - set(SECTIONS)
    if unknown:
        raise DataError(f"{p}: unknown config sections {sorted(unknown)}")
    return cfg


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def write_manifest(out: Path, subcommand: str, cfg: dict, seed, inputs: list[Path],
                   started: float) -> None:
    digests = {str(p): _sha256(p) for p in sorted(set(inputs)) if p.is_file()}
    manifest = {
        "subcommand": subcommand,
        "version": __version__,
        "config_hash": config_hash(cfg),
        "config": cfg,
        "seed": seed,
        "inputs": digests,
        "output_dir": str(out),
        "timing": {"started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
                   "seconds": round(time.time() - started, 3)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingPrerequisite(f"required file not found: {path}")
    return path


# ---------------------------------------------------------------------------
# shared loading
# ---------------------------------------------------------------------------


def _sampler_config(cfg: dict, args) -> SamplerConfig:
    d = dict(cfg.get("sampler", {}))
    if args.seed is not None:
        d["seed"] = args.seed
    d["threads"] = args.threads
    return SamplerConfig.from_dict(d)


def _load_data(args, spec: ModelSpec, cfg: dict) -> tuple[PanelDataset, list[Path]]:
    if args.data is None:
        raise MissingPrerequisite("--data <dir> is required for this subcommand")
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise MissingPrerequisite(f"data directory not found: {data_dir}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        data = load_panel(data_dir, spec, DataConfig.from_dict(cfg.get("data")))
    for w in caught:
        logger.warning("%s", w.message)
    return data, [data_dir / f for f in DATA_FILES]


class FittedRun:
    """A completed fit directory: draws, dataset and the config it used."""

    def __init__(self, fit_dir):
        self.dir = Path(fit_dir)
        for name in FIT_FILES:
            _require(self.dir / name)
        self.config = json.loads((self.dir / "fit_config.json").read_text())
        self.spec = ModelSpec.from_dict(self.config.get("model"))
        self.data = PanelDataset.load_json(self.dir / "panel.json")
        self.draws = PosteriorDraws.load(self.dir)
        self._model = None

    @property
    def model(self) -> PanelVarModel:
        if self._model is None:
            self._model = PanelVarModel(self.data, self.spec)
        return self._model

    @property
    def inputs(self) -> list[Path]:
        return [self.dir / n for n in FIT_FILES]


def _fitted(args) -> FittedRun:
    if args.fit is None:
        raise MissingPrerequisite("--fit <dir> pointing at a completed fit is required")
    return FittedRun(args.fit)


def _fit_model(data: PanelDataset, spec: ModelSpec, config: SamplerConfig) -> PosteriorDraws:
    model = PanelVarModel(data, spec)
    logger.info("sampling %d chains x (%d warmup + %d draws), dimension %d, %d observations",
                config.chains, config.warmup, config.iterations, model.dim, model.n_obs)
    return run_sampling(model, config)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_fit(args, cfg: dict, out: Path) -> tuple[int, list[Path]]:
    from .plots import coefficient_forest

    spec = ModelSpec.from_dict(cfg.get("model"))
    sconf = _sampler_config(cfg, args)
    data, inputs = _load_data(args, spec, cfg)
    draws = _fit_model(data, spec, sconf)
    draws.save(out)
    data.save_json(out / "panel.json")
    fit_cfg = {"data": DataConfig.from_dict(cfg.get("data")).to_dict(),
               "model": spec.to_dict(), "sampler": sconf.to_dict()}
    (out / "fit_config.json").write_text(json.dumps(fit_cfg, indent=1, sort_keys=True) + "\n")
    summ = summarize(draws)
    write_summary(summ, out / "summary.csv")
    coefficient_forest(summ, spec.npi_names, out / "coefficients.svg")

    report = convergence_report(summ)
    n_div = int(np.sum(draws.divergences))
    report["divergences"] = n_div
    report["treedepth_histogram"] = draws.treedepth_histogram()
    (out / "diagnostics.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    logger.info("max R-hat %.4f, %d divergences", report["max_rhat"], n_div)
    if args.strict and (report["n_rhat_fail"] > 0 or n_div > 0):
        logger.error("strict mode: %d parameters with R-hat > 1.01, %d divergent transitions",
                     report["n_rhat_fail"], n_div)
        return EXIT_DIAGNOSTIC, inputs
    return EXIT_OK, inputs


def cmd_irf(args, cfg: dict, out: Path) -> tuple[int, list[Path]]:
    from .irf import DEFAULT_HORIZON, irf_posterior, write_irf_csv
    from .plots import irf_grid

    run = _fitted(args)
    icfg = cfg.get("irf", {})
    H = int(icfg.get("horizon", DEFAULT_HORIZON))
    results = []
    for kind in icfg.get("kinds", ["OIRF", "GIRF"]):
        res = irf_posterior(run.draws, run.model, kind, H)
        irf_grid(res, out / f"irf_{res.kind.lower()}.svg")
        results.append(res)
    write_irf_csv(results, out / "irf.csv")
    return EXIT_OK, run.inputs


def _exclusion_sets(lcfg: dict) -> list[tuple[str, ...]]:
    from .evaluation import standard_exclusion_sets

    sets = lcfg.get("exclusions", "standard")
    if sets == "standard":
        return standard_exclusion_sets()
    if sets == "all":
        return [tuple(RESPONSES)]
    if not isinstance(sets, list):
        raise DataError("loo.exclusions must be 'standard', 'all' or a list of lists")
    return [tuple(s) if isinstance(s, (list, tuple)) else (s,) for s in sets]


def cmd_loo(args, cfg: dict, out: Path) -> tuple[int, list[Path]]:
    from .evaluation import (ElpdDiff, elpd_diff, exclusion_experiment, exclusion_label,
                             pointwise_loglik, psis_loo, write_elpd_table, write_loo)

    run = _fitted(args)
    sconf = SamplerConfig.from_dict({**run.config["sampler"], **cfg.get("sampler", {}),
                                     "threads": args.threads,
                                     **({"seed": args.seed} if args.seed is not None else {})})
    full = psis_loo(pointwise_loglik(run.draws, run.data, model=run.model))
    write_loo(full, out / "loo.json")
    rows = [("full", ElpdDiff(0.0, 0.0, 0.0, 0.0))]
    for excl in _exclusion_sets(cfg.get("loo", {})):
        label = exclusion_label(excl)
        spec = exclusion_experiment(run.spec, excl)
        logger.info("refitting with %s excluded", label)
        draws = _fit_model(run.data, spec, sconf)
        res = psis_loo(pointwise_loglik(draws, run.data, spec))
        write_loo(res, out / f"loo_{label}.json")
        rows.append((label, elpd_diff(full, res)))
    write_elpd_table(rows, out / "elpd_diff.csv")
    return EXIT_OK, run.inputs


def cmd_forecast(args, cfg: dict, out: Path) -> tuple[int, list[Path]]:
    from .evaluation import one_step_forecast, write_forecast
    from .plots import forecast_scatter

    run = _fitted(args)
    res = one_step_forecast(run.draws, run.data, model=run.model)
    write_forecast(res, out)
    forecast_scatter(res.table, out / "forecast_scatter.svg")
    return EXIT_OK, run.inputs


def cmd_posthoc(args, cfg: dict, out: Path) -> tuple[int, list[Path]]:
    from . import posthoc as ph
    from .plots import cluster_scatter

    run = _fitted(args)
    pcfg = cfg.get("posthoc", {})
    inputs = list(run.inputs)
    results = []
    for i, a in enumerate(RESPONSES):
        for b in RESPONSES[i + 1:]:
            results.append(("intercepts", a, b, ph.intercept_correlation(run.draws, a, b)))

    char_path = None
    if args.data is not None:
        char_path = _require(Path(args.data) / "characteristics.csv")
    if char_path is None:
        logger.warning("no --data given; skipping characteristic correlations, PCA and k-means")
    else:
        inputs.append(char_path)
        table = load_characteristics(char_path).table.reindex(run.data.countries)
        for var in RESPONSES:
            for feat in table.columns:
                col = table[feat]
                if col.dropna().nunique() < 2 or col.notna().sum() < 3:
                    logger.warning("feature %s skipped: constant or too few countries", feat)
                    continue
                results.append(("characteristic", var, feat,
                                ph.characteristic_correlation(run.draws, var, col, feat)))
        complete = table.dropna(axis=0, how="any")
        if len(complete) < len(table):
            logger.info("PCA uses %d of %d countries with complete characteristics",
                        len(complete), len(table))
        complete = complete.loc[:, complete.nunique() > 1]
        res = ph.pca(complete)
        n_comp = int(pcfg.get("components", 5))
        load, eig = ph.pca_tables(res, n_comp)
        load.to_csv(out / "pca_loadings.csv", float_format="%.17g")
        eig.to_csv(out / "pca_eigenvalues.csv", float_format="%.17g")
        dims = min(int(pcfg.get("cluster_dims", 2)), res.scores.shape[1])
        seed = args.seed if args.seed is not None else int(pcfg.get("seed", 0))
        km = ph.kmeans(res.scores[:, :dims], int(pcfg.get("k", 3)), seed=seed,
                       restarts=int(pcfg.get("restarts", 20)))
        clusters = ph.cluster_table(complete.index, km, res.scores[:, :dims])
        clusters.to_csv(out / "clusters.csv", float_format="%.17g")
        cluster_scatter(clusters, out / "clusters.svg")
    ph.correlation_table(results).to_csv(out / "correlations.csv", index=False,
                                         float_format="%.17g")
    return EXIT_OK, inputs


def cmd_simulate(args, cfg: dict, out: Path) -> tuple[int, list[Path]]:
    from .synth import (default_truth, save_truth, simulate_panel, synthetic_characteristics,
                        write_panel_csv)

    scfg = cfg.get("simulate", {})
    spec = ModelSpec.from_dict(cfg.get("model"))
    C, T = int(scfg.get("countries", 25)), int(scfg.get("weeks", 104))
    truth = default_truth(C, spec.npi_names, seed=args.seed,
                          Phi=np.asarray(scfg["Phi"]) if "Phi" in scfg else None)
    panel = simulate_panel(truth, C=C, T=T, seed=args.seed)
    chars = synthetic_characteristics(truth, panel.countries, seed=args.seed)
    dcfg = write_panel_csv(panel, out, characteristics=chars)
    save_truth(truth, spec.npi_names, out / "truth.json")
    # a ready-to-use config for fitting the simulated data
    fit_cfg = {"data": dcfg.to_dict(), "model": spec.to_dict()}
    if "sampler" in cfg:
        fit_cfg["sampler"] = cfg["sampler"]
    (out / "config.json").write_text(json.dumps(fit_cfg, indent=1, sort_keys=True) + "\n")
    return EXIT_OK, []


def cmd_sensitivity(args, cfg: dict, out: Path) -> tuple[int, list[Path]]:
    from .posthoc import loco_sensitivity, write_loco

    spec = ModelSpec.from_dict(cfg.get("model"))
    data, inputs = _load_data(args, spec, cfg)
    sconf = dataclasses.replace(_sampler_config(cfg, args), threads=1)
    res = loco_sensitivity(data, spec, sconf, workers=args.threads)
    write_loco(res, out)
    return EXIT_OK, inputs


COMMANDS = {
    "fit": cmd_fit, "irf": cmd_irf, "loo": cmd_loo, "forecast": cmd_forecast,
    "posthoc": cmd_posthoc, "simulate": cmd_simulate, "sensitivity": cmd_sensitivity,
}
SEED_REQUIRED = ("fit", "simulate")


def _exit_code(exc: BaseException) -> int | None:
    if isinstance(exc, LocoError):
        return EXIT_SAMPLING if isinstance(exc.__cause__, SamplingError) else EXIT_DATA
    if isinstance(exc, SamplingError):
        return EXIT_SAMPLING
    if isinstance(exc, (MissingPrerequisite, DataError, ModelError, ValueError, KeyError)):
        return EXIT_DATA
    return None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="panelvar",
                                 description="Bayesian panel VAR with exogenous covariates.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--data", help="directory with input CSV files")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, required=name in SEED_REQUIRED)
        p.add_argument("--strict", action="store_true",
                       help="exit 4 when convergence diagnostics fail")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        if name in ("irf", "loo", "forecast", "posthoc"):
            p.add_argument("--fit", help="directory written by `panelvar fit`")
    return ap


def _setup_logging() -> None:
    level = os.environ.get("PANELVAR_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s", force=True)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        logger.error("--seed must be an unsigned 64-bit integer")
        return EXIT_DATA
    if args.threads < 1:
        logger.error("--threads must be >= 1")
        return EXIT_DATA
    started = time.time()
    out = Path(args.out)
    created = not out.exists()
    try:
        cfg = load_config(args.config)
        out.mkdir(parents=True, exist_ok=True)
        status, inputs = COMMANDS[args.command](args, cfg, out)
    except Exception as exc:
        code = _exit_code(exc)
        if code is None:
            raise
        logger.error("%s", exc)
        if created and out.is_dir() and not any(out.iterdir()):
            out.rmdir()
        return code
    if args.config:
        inputs = [*inputs, Path(args.config)]
    write_manifest(out, args.command, cfg, args.seed, inputs, started)
    return status


if __name__ == "__main__":
    sys.exit(main())
