"""Command-line front end: regime report, sharp-vs-MC comparison, risk tables, Gibbs diagnostics, simulation.

Every command is a pure function of the model file and the seed. CSV numbers
are written with 17 significant digits. Exit codes: 0 success, 1 some rows
carry a fallback flag, 2 configuration error.
"""

from __future__ import annotations

import csv
import io
import json
import math
import secrets
import sys
from typing import Optional, Sequence

import click
import numpy as np

from . import cgfcore, gibbs, mc, risk, sharp
from .model import PortfolioModel, model_from_dict, simulate_batch, validate

EXIT_FALLBACK = 1
EXIT_CONFIG = 2
RISK_FIELDS = {"alphas", "ns", "form"}


class ConfigError(click.ClickException):
    exit_code = EXIT_CONFIG


# ---------------------------------------------------------------------------
# config and formatting helpers
# ---------------------------------------------------------------------------


def load_config(path: str) -> tuple[PortfolioModel, dict]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read model file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model file is not valid JSON: {exc}") from exc
    try:
        model = model_from_dict(doc)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rep = validate(model)
    if not rep.ok:
        raise ConfigError("; ".join(rep.violations))
    block = doc.get("risk", {}) or {}
    if not isinstance(block, dict):
        raise ConfigError("field 'risk' must be an object")
    extra = set(block) - RISK_FIELDS
    if extra:
        raise ConfigError(f"unknown fields in 'risk': {sorted(extra)}")
    return model, block


def parse_seed(token: str) -> int:
    if token == "random":
        return secrets.randbits(63)
    try:
        seed = int(token)
    except ValueError as exc:
        raise ConfigError(f"--seed must be an integer or 'random', got {token!r}") from exc
    if seed < 0:
        raise ConfigError("--seed must be non-negative")
    return seed


def parse_list(text: Optional[str], kind, name: str) -> Optional[list]:
    if text is None:
        return None
    try:
        return [kind(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"--{name}: {exc}") from exc


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def render(rows: Sequence[dict], columns: Sequence[str], form: str) -> str:
    if form == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r[c]) for c in columns])
        return buf.getvalue()
    cells = [[str(c) for c in columns]]
    for r in rows:
        cells.append([_short(r[c]) for c in columns])
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    return "".join("  ".join(s.rjust(wd) for s, wd in zip(row, widths)) + "\n" for row in cells)


def _short(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return fmt(v)


def emit(text: str, out: Optional[str]):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


common = [
    click.option("--model", "model_path", required=True, type=click.Path(dir_okay=False), help="Model file."),
    click.option("--out", default=None, type=click.Path(dir_okay=False), help="Output path (stdout if omitted)."),
    click.option("--format", "form", type=click.Choice(["csv", "text"]), default="csv", show_default=True),
]


def with_common(fn):
    for opt in reversed(common):
        fn = opt(fn)
    return fn


seed_option = click.option("--seed", default=str(mc.DEFAULT_SEED), show_default=True,
                           help="Integer seed, or 'random'.")
workers_option = click.option("--workers", default=1, show_default=True, type=int, help="Worker processes.")


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Sharp large-deviation tails and risk measures for threshold factor models."""


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_regime(model: PortfolioModel, x: Optional[float]) -> list[dict]:
    regime = sharp.classify_regime(model)
    rows = [{"field": "regime", "value": regime.value}]
    kappa = sharp.boundary_point(model, regime)
    rows.append({"field": "kappa", "value": kappa})
    if math.isfinite(kappa):
        p = float(np.exp(model.eps.logcdf((model.v - kappa) / model.b)))
        rows.append({"field": "p_kappa", "value": p})
        rows.append({"field": "q_kappa", "value": cgfcore.conditional_mean(model, kappa)})
    rows.append({"field": "threshold_mean", "value": sharp.threshold_mean(model, regime)})
    if x is not None:
        if math.isfinite(kappa):
            sol = cgfcore.tilt_conditional(model, x, kappa)
        else:
            sol = cgfcore.tilt_unconditional(model.U, x)
        rows.append({"field": "x", "value": float(x)})
        rows.append({"field": "theta_x", "value": sol.theta})
        rows.append({"field": "psi_infty", "value": math.exp(sharp.log_psi(sol))})
    return rows


@main.command("regime")
@with_common
@click.option("--x", type=float, default=None, help="Level for the tilt diagnostics.")
def regime_cmd(model_path, out, form, x):
    """Classify the asymptotic regime and echo the endpoint and tilt diagnostics."""
    model, _ = load_config(model_path)
    try:
        rows = cmd_regime(model, x)
    except (sharp.RegimeUnsupported, cgfcore.NoRoot, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    emit(render(rows, ["field", "value"], form), out)


COMPARE_COLUMNS = ["n", "x", "log_sharp", "log_mc", "mc_stderr", "ratio", "flag"]


def cmd_compare(model: PortfolioModel, x: float, ns: Sequence[int], replicates: int, seed: int,
                workers: int = 1, method: str = "is") -> list[dict]:
    if replicates < 1:
        raise ConfigError("replicates must be positive")
    rows = []
    for n in ns:
        flag = ""
        try:
            log_sharp = sharp.sharp_tail(model, x, n).log_prob
        except (sharp.OutsideLargeDeviations, sharp.RegimeUnsupported, cgfcore.NoRoot) as exc:
            raise ConfigError(str(exc)) from exc
        if method == "is":
            est = mc.tilted_is_tail(model, x, n, replicates, seed=seed, workers=workers)
        else:
            est = mc.plain_tail(model, x, n, replicates, seed=seed, workers=workers)
        if est.value > 0:
            log_mc = math.log(est.value)
            ratio = math.exp(log_sharp - log_mc)
        else:
            log_mc, ratio, flag = -math.inf, math.nan, "TooRare"
        rows.append({"n": n, "x": x, "log_sharp": log_sharp, "log_mc": log_mc,
                     "mc_stderr": est.std_error, "ratio": ratio, "flag": flag})
    return rows


@main.command("compare")
@with_common
@click.option("--x", type=float, required=True, help="Loss level per obligor.")
@click.option("--ns", default="50,100,200,400", show_default=True, help="Comma-separated portfolio sizes.")
@click.option("--replicates", type=int, default=100_000, show_default=True)
@click.option("--method", type=click.Choice(["is", "plain"]), default="is", show_default=True)
@seed_option
@workers_option
def compare_cmd(model_path, out, form, x, ns, replicates, method, seed, workers):
    """Sharp tail against a Monte Carlo estimate over a grid of n."""
    model, _ = load_config(model_path)
    rows = cmd_compare(model, x, parse_list(ns, int, "ns"), replicates, parse_seed(seed), workers, method)
    emit(render(rows, COMPARE_COLUMNS, form), out)
    if any(r["flag"] for r in rows):
        sys.exit(EXIT_FALLBACK)


RISK_COLUMNS = ["measure", "alpha", "n", "value", "regime", "fallback_flag"]


@main.command("risk")
@with_common
@click.option("--alphas", default=None, help="Comma-separated confidence levels.")
@click.option("--ns", default=None, help="Comma-separated portfolio sizes.")
@click.option("--form-prefactor", "prefactor", type=click.Choice(risk.FORMS), default=None,
              help="Prefactor form (default from the model file, else closed).")
def risk_cmd(model_path, out, form, alphas, ns, prefactor):
    """VaR and ES table over an alpha by n grid."""
    model, block = load_config(model_path)
    alphas = parse_list(alphas, float, "alphas") or block.get("alphas", [0.95, 0.99, 0.999])
    ns = parse_list(ns, int, "ns") or block.get("ns", [10, 50, 100, 500, 1000])
    prefactor = prefactor or block.get("form", "closed")
    if prefactor not in risk.FORMS:
        raise ConfigError(f"risk form must be one of {risk.FORMS}")
    try:
        cells = risk.risk_table(model, [float(a) for a in alphas], [int(n) for n in ns], prefactor)
    except (ValueError, sharp.RegimeUnsupported) as exc:
        raise ConfigError(str(exc)) from exc
    if form == "csv":
        text = render(risk.table_rows(cells), RISK_COLUMNS, "csv")
    else:
        text = risk.format_table(cells) if cells else ""
    emit(text, out)
    if any(c.fallback for c in cells):
        sys.exit(EXIT_FALLBACK)


GIBBS_COLUMNS = ["n", "k", "tv", "accepted", "ess", "method", "flag"]


def cmd_gibbs(model: PortfolioModel, x: Optional[float], ns: Sequence[int], k: int, bins: int,
              replicates: int, seed: int) -> list[dict]:
    if bins < 1:
        raise ConfigError("bins must be positive")
    if replicates < 1:
        raise ConfigError("replicates must be positive")
    if any(k > n for n in ns) or k < 1:
        raise ConfigError("k must satisfy 1 <= k <= n for every n")
    regime = sharp.classify_regime(model)
    if x is None:
        x = sharp.threshold_mean(model, regime) + 0.05
    limit = gibbs.limit_law(model, x)
    rows = []
    for n in ns:
        try:
            s = gibbs.conditional_sample(model, x, n, k, replicates, seed=seed)
            rows.append({"n": n, "k": k, "tv": gibbs.tv_distance(s, limit, bins=bins), "accepted": s.accepted,
                         "ess": s.ess, "method": s.method, "flag": ""})
        except gibbs.TooRare:
            rows.append({"n": n, "k": k, "tv": math.nan, "accepted": 0, "ess": 0.0, "method": "",
                         "flag": "TooRare"})
    return rows


@main.command("gibbs")
@with_common
@click.option("--x", type=float, default=None, help="Level (default: relevant mean + 0.05).")
@click.option("--ns", default="100,400,1600", show_default=True)
@click.option("--k", type=int, default=1, show_default=True)
@click.option("--bins", type=int, default=64, show_default=True)
@click.option("--replicates", type=int, default=200_000, show_default=True)
@seed_option
def gibbs_cmd(model_path, out, form, x, ns, k, bins, replicates, seed):
    """Binned TV between the conditional law of the first k coordinates and its limit."""
    model, _ = load_config(model_path)
    try:
        rows = cmd_gibbs(model, x, parse_list(ns, int, "ns"), k, bins, replicates, parse_seed(seed))
    except (sharp.OutsideLargeDeviations, sharp.RegimeUnsupported) as exc:
        raise ConfigError(str(exc)) from exc
    emit(render(rows, GIBBS_COLUMNS, form), out)
    if any(r["flag"] for r in rows):
        sys.exit(EXIT_FALLBACK)


@main.command("simulate")
@with_common
@click.option("--n", type=int, default=None, help="Portfolio size (default from the model file).")
@click.option("--replicates", type=int, default=1000, show_default=True)
@seed_option
def simulate_cmd(model_path, out, form, n, replicates, seed):
    """Draw portfolio losses: one row per replicate with the factor, default count and loss."""
    model, _ = load_config(model_path)
    n = model.n if n is None else n
    if replicates < 1 or n < 1:
        raise ConfigError("n and replicates must be positive")
    seed = parse_seed(seed)
    rows = []
    for b in range(-(-replicates // mc.BLOCK)):
        count = min(mc.BLOCK, replicates - b * mc.BLOCK)
        losses, z, d = simulate_batch(model, mc.block_rng(seed, b), count, n)
        start = b * mc.BLOCK
        rows.extend({"replicate": start + i, "z": float(z[i]), "defaults": int(d[i]), "loss": float(losses[i])}
                    for i in range(count))
    emit(render(rows, ["replicate", "z", "defaults", "loss"], form), out)


if __name__ == "__main__":
    main()
