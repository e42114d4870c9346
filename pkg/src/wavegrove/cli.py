"""Command-line interface: denoise, fanova, fit, simulate, calibrate.

Inputs are plain CSV (curves as rows over a dyadic grid; factor labels as
columns of a design file); results land in an output directory as CSV tables
plus one JSON report.  Runs are deterministic given --seed: rerunning a
command writes byte-identical outputs.  Exit codes: 0 success, 2 usage
errors, 3 malformed or inconsistent data, 4 numerical failure.

The WAVEGROVE_THREADS environment variable caps the worker threads used for
replicate-level parallelism in `simulate` (default 1; results do not depend
on it).
"""
from __future__ import annotations

import csv
import functools
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import decision as decision_mod
from . import ebayes, simbench
from .grove import (
    credible_bands,
    pjap,
    posterior_mean_curve,
    sample_posterior,
    upward_pass,
)
from .nodemodel import FactorDesign, HyperParams, NumericalError
from .wavelet import CoefficientStack, depth_for_length, get_filter

SCHEMA_VERSION = 1


class DataError(ValueError):
    """Malformed or inconsistent input data (exit code 3)."""


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NumericalError as e:
            click.echo(f"numerical failure: {e}", err=True)
            sys.exit(4)
        except (DataError, ValueError, OSError) as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(3)

    return wrapper


# ---------------------------------------------------------------------------
# file formats


def read_data(path: str) -> np.ndarray:
    """Curves as CSV rows (optional single header row); dyadic row length."""
    rows: list[list[str]] = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if rec and any(field.strip() for field in rec):
                rows.append([field.strip() for field in rec])
    if not rows:
        raise DataError(f"{path}: no data rows")
    start = 0
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        start = 1  # header row
    if start == len(rows):
        raise DataError(f"{path}: header but no data rows")
    try:
        Y = np.array([[float(v) for v in row] for row in rows[start:]])
    except ValueError as e:
        raise DataError(f"{path}: non-numeric entry ({e})") from None
    if Y.ndim != 2 or len({len(r) for r in rows[start:]}) != 1:
        raise DataError(f"{path}: rows must share a length")
    if not np.all(np.isfinite(Y)):
        raise DataError(f"{path}: non-finite values")
    try:
        depth_for_length(Y.shape[1])
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None
    return Y


def read_design(path: str, n: int) -> FactorDesign:
    """Factor labels as CSV columns; a non-numeric first row names factors."""
    with open(path, newline="") as fh:
        rows = [rec for rec in csv.reader(fh) if rec and any(f.strip() for f in rec)]
    if not rows:
        raise DataError(f"{path}: empty design file")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataError(f"{path}: design rows must share a length")
    names: tuple[str, ...] = ()
    body = rows
    if len(rows) == n + 1:
        names = tuple(v.strip() for v in rows[0])
        body = rows[1:]
    elif len(rows) != n:
        raise DataError(
            f"{path}: design has {len(rows)} rows but the data has {n} curves"
        )
    columns = [[row[c].strip() for row in body] for c in range(len(body[0]))]
    design = FactorDesign.from_labels(columns, names)
    for l, G in enumerate(design.levels):
        if G < 2:
            raise DataError(
                f"{path}: factor {design.factor_names[l]!r} has a single level"
            )
    return design


def _write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return v


def _write_report(path: Path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_params(text, L: int):
    if text is None:
        return None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise DataError(f"--params is not valid JSON: {e}") from None
    raw.setdefault("upsilon", [1.0] * L)
    try:
        hp = HyperParams.from_dict(raw)
    except TypeError as e:
        raise DataError(f"--params: {e}") from None
    if hp.L != L:
        raise DataError(f"--params lists {hp.L} upsilon entries, design has {L}")
    return hp


def _n_threads() -> int:
    try:
        return max(1, int(os.environ.get("WAVEGROVE_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# commands


@click.group()
@click.version_option()
def main() -> None:
    """Exact Bayesian wavelet smoothing and functional ANOVA."""


_fit_options = [
    click.option("--restarts", default=3, show_default=True, help="Simplex restarts."),
    click.option(
        "--max-iters", default=2000, show_default=True, help="Simplex iteration cap."
    ),
    click.option("--seed", default=0, show_default=True, help="RNG seed."),
    click.option(
        "--params",
        default=None,
        help="Hyperparameters as JSON (required for --fit fixed, else initial point).",
    ),
]


def _add(options):
    def deco(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn

    return deco


@main.command()
@click.option("--input", "input_", required=True, type=click.Path(exists=True))
@click.option("--wavelet", default="la10", show_default=True)
@click.option(
    "--fit",
    "fit_mode",
    type=click.Choice(["eb", "fixed"]),
    default="eb",
    show_default=True,
)
@click.option("--samples", default=0, show_default=True, help="Posterior draws for bands.")
@click.option("--band-level", default=0.95, show_default=True)
@click.option("--include-father/--no-include-father", default=True, show_default=True)
@click.option("--out-dir", default=".", show_default=True, type=click.Path())
@_add(_fit_options)
@_handle_errors
def denoise(
    input_, wavelet, fit_mode, samples, band_level, include_father, out_dir,
    restarts, max_iters, seed, params,
):
    """Posterior-mean reconstruction of curves observed with noise."""
    filt = get_filter(wavelet)
    Y = read_data(input_)
    design = FactorDesign.single_group(Y.shape[0])
    data = CoefficientStack.from_signals(Y, filt)
    hp = _parse_params(params, 0)

    if fit_mode == "fixed":
        if hp is None:
            raise DataError("--fit fixed requires --params")
    else:
        spec = ebayes.FitSpec(
            mode="full_eb", restarts=restarts, max_iters=max_iters, seed=seed
        )
        hp = ebayes.mmle_fit(data, design, spec, init=hp)

    g = upward_pass(data, design, hp, method="tree")
    fhat = posterior_mean_curve(g, filt, include_father=include_father)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tgrid = np.arange(1, Y.shape[1] + 1) / Y.shape[1]
    _write_csv(out / "denoised.csv", ["t", "estimate"], [tgrid, fhat])

    pm = g.pmap_signal()
    jj = np.concatenate([np.full(2**j, j) for j in range(g.J + 1)])
    kk = np.concatenate([np.arange(2**j) for j in range(g.J + 1)])
    _write_csv(
        out / "pmap.csv",
        ["level", "position", "pmap_signal"],
        [jj, kk, np.concatenate(pm)],
    )

    outputs = {"denoised": "denoised.csv", "pmap": "pmap.csv"}
    if samples > 0:
        draws = sample_posterior(g, samples, seed=seed)
        lo, hi = credible_bands(
            draws, filt, "signal", level=band_level, include_father=include_father
        )
        _write_csv(out / "bands.csv", ["t", "lower", "upper"], [tgrid, lo, hi])
        outputs["bands"] = "bands.csv"

    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "denoise",
        "wavelet": wavelet,
        "fit_mode": fit_mode,
        "seed": seed,
        "n_curves": int(Y.shape[0]),
        "length": int(Y.shape[1]),
        "hyperparams": hp.to_dict(),
        "log_evidence": g.log_evidence,
        "log_evidence_father": g.log_evidence_father,
        "include_father": include_father,
        "outputs": outputs,
    }
    _write_report(out / "report.json", report)
    click.echo(f"wrote {out / 'report.json'}")


@main.command()
@click.option("--input", "input_", required=True, type=click.Path(exists=True))
@click.option("--design", "design_", required=True, type=click.Path(exists=True))
@click.option("--wavelet", default="la10", show_default=True)
@click.option(
    "--fit",
    "fit_mode",
    type=click.Choice(["eb", "hybrid", "fixed"]),
    default="hybrid",
    show_default=True,
)
@click.option("--eta-kappa", default=0.3, show_default=True)
@click.option("--gamma-kappa", default=0.4, show_default=True)
@click.option(
    "--prior-pjap",
    default=None,
    type=float,
    help="Calibrate eta-kappa so each factor's prior activation probability hits this value.",
)
@click.option("--fdr", default=0.05, show_default=True, help="Target posterior FDR.")
@click.option("--pjap-threshold", default=0.8, show_default=True)
@click.option("--samples", default=0, show_default=True)
@click.option("--band-level", default=0.95, show_default=True)
@click.option(
    "--contrast",
    multiple=True,
    help='Contrast bands as "FACTOR:G-H" (1-based factor, group labels by sorted order, e.g. 1:2-1).',
)
@click.option("--out-dir", default=".", show_default=True, type=click.Path())
@_add(_fit_options)
@_handle_errors
def fanova(
    input_, design_, wavelet, fit_mode, eta_kappa, gamma_kappa, prior_pjap,
    fdr, pjap_threshold, samples, band_level, contrast, out_dir,
    restarts, max_iters, seed, params,
):
    """Factor-effect testing for grouped curves (multi-factor ANOVA)."""
    filt = get_filter(wavelet)
    Y = read_data(input_)
    design = read_design(design_, Y.shape[0])
    data = CoefficientStack.from_signals(Y, filt)
    hp = _parse_params(params, design.L)

    # validate contrast specs before the (possibly long) fit
    contrasts = [_parse_contrast(spec_str, design) for spec_str in contrast or ()]
    if contrasts and samples <= 0:
        raise DataError("--contrast needs posterior draws; set --samples > 0")

    if prior_pjap is not None:
        eta_kappa = ebayes.calibrate_sparsity(prior_pjap, gamma_kappa, data.J)
    sparsity = (eta_kappa, gamma_kappa)

    if fit_mode == "fixed":
        if hp is None:
            raise DataError("--fit fixed requires --params")
        if prior_pjap is not None:
            hp = replace(hp, eta_kappa=eta_kappa, gamma_kappa=gamma_kappa)
        sparsity = (hp.eta_kappa, hp.gamma_kappa)
    else:
        spec = ebayes.FitSpec(
            mode="full_eb" if fit_mode == "eb" else "hybrid",
            fixed_sparsity=sparsity,
            restarts=restarts,
            max_iters=max_iters,
            seed=seed,
        )
        hp = ebayes.mmle_fit(data, design, spec, init=hp)

    g = upward_pass(data, design, hp)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    jj = np.concatenate([np.full(2**j, j) for j in range(g.J + 1)])
    kk = np.concatenate([np.arange(2**j) for j in range(g.J + 1)])
    pm_cols = [jj, kk, np.concatenate(g.pmap_signal())]
    pm_head = ["level", "position", "pmap_signal"]

    pjaps, decisions = {}, {}
    for l in range(design.L):
        name = design.factor_names[l]
        pj = pjap(g, l)
        table = g.pmap_table(l)
        delta = decision_mod.threshold_for_fdr(table, fdr)
        rep = decision_mod.evaluate(table, delta, factor=l, pjap=pj)
        pjaps[name] = pj
        decisions[name] = {
            "pjap": pj,
            "significant": bool(pj > pjap_threshold),
            "delta": rep.delta,
            "n_called": len(rep.called),
            "nfp": rep.nfp,
            "fdr": rep.fdr,
            "called": [[int(n.j), int(n.k)] for n in rep.called],
        }
        pm = np.concatenate(g.pmap(l))
        called = pm > rep.delta
        pm_cols += [pm, called.astype(int)]
        pm_head += [f"pmap_{name}", f"called_{name}"]
    _write_csv(out / "pmap.csv", pm_head, pm_cols)

    tgrid = np.arange(1, Y.shape[1] + 1) / Y.shape[1]
    fhat = posterior_mean_curve(g, filt, include_father=True)
    _write_csv(out / "baseline_mean.csv", ["t", "estimate"], [tgrid, fhat])
    outputs = {"pmap": "pmap.csv", "baseline_mean": "baseline_mean.csv"}

    if samples > 0:
        draws = sample_posterior(g, samples, seed=seed)
        for l, ga, gb in contrasts:
            for father_tag, inc in (("with_father", True), ("without_father", False)):
                lo, hi = credible_bands(
                    draws,
                    filt,
                    ("contrast", l, ga, gb),
                    level=band_level,
                    include_father=inc,
                )
                fname = f"contrast_{l + 1}_{ga}-{gb}_{father_tag}.csv"
                _write_csv(out / fname, ["t", "lower", "upper"], [tgrid, lo, hi])
                outputs[f"contrast_{l + 1}_{ga}-{gb}_{father_tag}"] = fname

    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "fanova",
        "wavelet": wavelet,
        "fit_mode": fit_mode,
        "seed": seed,
        "n_curves": int(Y.shape[0]),
        "length": int(Y.shape[1]),
        "factors": list(design.factor_names),
        "group_levels": {
            design.factor_names[l]: list(design.level_names[l])
            for l in range(design.L)
        },
        "sparsity": {"eta_kappa": sparsity[0], "gamma_kappa": sparsity[1]},
        "hyperparams": hp.to_dict(),
        "log_evidence": g.log_evidence,
        "log_evidence_father": g.log_evidence_father,
        "pjap": pjaps,
        "fdr_target": fdr,
        "pjap_threshold": pjap_threshold,
        "decision": decisions,
        "outputs": outputs,
    }
    _write_report(out / "report.json", report)
    click.echo(f"wrote {out / 'report.json'}")


def _parse_contrast(text: str, design: FactorDesign):
    spec = text.strip()
    factor = 0
    if ":" in spec:
        head, spec = spec.split(":", 1)
        try:
            factor = int(head) - 1
        except ValueError:
            if head in design.factor_names:
                factor = design.factor_names.index(head)
            else:
                raise DataError(f"unknown factor in contrast {text!r}") from None
    if not 0 <= factor < design.L:
        raise DataError(f"contrast {text!r}: factor out of range")
    parts = spec.split("-")
    if len(parts) != 2:
        raise DataError(f'contrast must look like "FACTOR:G-H", got {text!r}')
    names = list(design.level_names[factor])
    groups = []
    for part in parts:
        part = part.strip()
        if part in names:
            groups.append(names.index(part))
        else:
            try:
                groups.append(int(part) - 1)
            except ValueError:
                raise DataError(
                    f"contrast {text!r}: unknown group {part!r}"
                ) from None
    ga, gb = groups
    G = design.levels[factor]
    if not (0 <= ga < G and 0 <= gb < G):
        raise DataError(f"contrast {text!r}: group index out of range")
    return factor, ga, gb


@main.command()
@click.option("--input", "input_", required=True, type=click.Path(exists=True))
@click.option("--design", "design_", default=None, type=click.Path(exists=True))
@click.option("--wavelet", default="la10", show_default=True)
@click.option(
    "--mode",
    type=click.Choice(["eb", "hybrid"]),
    default="eb",
    show_default=True,
)
@click.option("--eta-kappa", default=0.3, show_default=True)
@click.option("--gamma-kappa", default=0.4, show_default=True)
@click.option("--out", default=None, type=click.Path(), help="Report path (default stdout).")
@_add(_fit_options)
@_handle_errors
def fit(
    input_, design_, wavelet, mode, eta_kappa, gamma_kappa, out,
    restarts, max_iters, seed, params,
):
    """Fit hyperparameters by marginal maximum likelihood; print them."""
    filt = get_filter(wavelet)
    Y = read_data(input_)
    design = (
        read_design(design_, Y.shape[0])
        if design_
        else FactorDesign.single_group(Y.shape[0])
    )
    data = CoefficientStack.from_signals(Y, filt)
    init = _parse_params(params, design.L)
    spec = ebayes.FitSpec(
        mode="full_eb" if mode == "eb" else "hybrid",
        fixed_sparsity=(eta_kappa, gamma_kappa) if mode == "hybrid" else None,
        restarts=restarts,
        max_iters=max_iters,
        seed=seed,
    )
    hp = ebayes.mmle_fit(data, design, spec, init=init)
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "fit",
        "wavelet": wavelet,
        "mode": mode,
        "seed": seed,
        "hyperparams": hp.to_dict(),
        "log_marginal": ebayes.log_marginal(hp, data, design),
    }
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
        click.echo(f"wrote {out}")
    else:
        click.echo(text, nl=False)


@main.command()
@click.option("--baseline", default="doppler", show_default=True)
@click.option(
    "--effect",
    type=click.Choice(["none", "global", "local"]),
    default="local",
    show_default=True,
)
@click.option("--effect-shape", default="doppler", show_default=True)
@click.option("--groups", default=3, show_default=True)
@click.option("--replicates", default=3, show_default=True)
@click.option("--length", default=1024, show_default=True)
@click.option("--rsnr", default=3.0, show_default=True)
@click.option("--wavelet", default="la10", show_default=True)
@click.option("--proportion", default=0.25, show_default=True)
@click.option("--effect-scale", default=1.0, show_default=True)
@click.option("--n-alt", default=5, show_default=True)
@click.option("--n-null", default=5, show_default=True)
@click.option(
    "--methods", default="nigmg,wfanova,tanova", show_default=True
)
@click.option("--restarts", default=1, show_default=True)
@click.option("--max-iters", default=400, show_default=True)
@click.option("--eta-kappa", default=0.3, show_default=True)
@click.option("--gamma-kappa", default=0.4, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(), help="Per-replicate stats CSV.")
@click.option("--report", "report_path", default=None, type=click.Path())
@_handle_errors
def simulate(
    baseline, effect, effect_shape, groups, replicates, length, rsnr, wavelet,
    proportion, effect_scale, n_alt, n_null, methods, restarts, max_iters,
    eta_kappa, gamma_kappa, seed, out, report_path,
):
    """Benchmark methods on simulated factorial curves; emit stats and AUCs."""
    method_list = [m.strip() for m in methods.split(",") if m.strip()]
    known = {"nigmg", "wfanova", "tanova"}
    bad = set(method_list) - known
    if bad:
        raise DataError(f"unknown methods: {sorted(bad)}; available: {sorted(known)}")
    filt = get_filter(wavelet)
    sc_alt = simbench.Scenario(
        baseline=baseline, effect=effect, effect_shape=effect_shape, groups=groups,
        replicates=replicates, length=length, rsnr=rsnr, wavelet=wavelet,
        proportion=proportion, effect_scale=effect_scale,
    )
    sc_null = simbench.Scenario(
        baseline=baseline, effect="none", groups=groups, replicates=replicates,
        length=length, rsnr=rsnr, wavelet=wavelet,
    )
    fitspec = ebayes.FitSpec(
        mode="hybrid",
        fixed_sparsity=(eta_kappa, gamma_kappa),
        restarts=restarts,
        max_iters=max_iters,
        seed=seed,
    )

    jobs = [("alt", sc_alt, r) for r in range(n_alt)] + [
        ("null", sc_null, r) for r in range(n_null)
    ]
    seeds = np.random.SeedSequence(seed).spawn(len(jobs))

    def run(job_seed):
        # generate_state, not .entropy: spawned children share the parent's
        # entropy and differ only in spawn_key
        (arm, sc, rep), ss = job_seed
        sim = simbench.generate(sc, seed=int(ss.generate_state(1)[0]))
        row = {"arm": arm, "replicate": rep}
        codes = sim.design.codes[:, 0]
        if "nigmg" in method_list:
            data = CoefficientStack.from_signals(sim.Y, filt)
            hp = ebayes.mmle_fit(data, sim.design, fitspec)
            row["nigmg"] = pjap(upward_pass(data, sim.design, hp), 0)
        if "wfanova" in method_list:
            row["wfanova"] = simbench.pointwise_f_test(
                sim.Y, codes, "wavelet", filt
            ).global_stat
        if "tanova" in method_list:
            row["tanova"] = simbench.pointwise_f_test(sim.Y, codes, "time").global_stat
        return row

    workers = _n_threads()
    pairs = list(zip(jobs, seeds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, pairs))
    else:
        rows = [run(p) for p in pairs]

    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["arm", "replicate"] + method_list)
        for row in rows:
            w.writerow(
                [row["arm"], row["replicate"]]
                + [_fmt(row[m]) for m in method_list]
            )

    aucs = {}
    for m in method_list:
        alt = [r[m] for r in rows if r["arm"] == "alt"]
        null = [r[m] for r in rows if r["arm"] == "null"]
        if alt and null:
            aucs[m] = simbench.roc(alt, null)[2]
    summary = {
        "schema_version": SCHEMA_VERSION,
        "command": "simulate",
        "seed": seed,
        "scenario": {
            "baseline": baseline, "effect": effect, "effect_shape": effect_shape,
            "groups": groups, "replicates": replicates, "length": length,
            "rsnr": rsnr, "wavelet": wavelet, "proportion": proportion,
            "effect_scale": effect_scale,
        },
        "n_alt": n_alt,
        "n_null": n_null,
        "auc": aucs,
        "outputs": {"stats": str(out)},
    }
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if report_path:
        Path(report_path).write_text(text)
        click.echo(f"wrote {report_path}")
    else:
        click.echo(text, nl=False)


@main.command()
@click.option("--target-pjap", required=True, type=float)
@click.option("--gamma-kappa", default=0.4, show_default=True)
@click.option("--length", default=None, type=int, help="Grid length T (dyadic).")
@click.option("--levels", "J", default=None, type=int, help="Tree depth J (alternative to --length).")
@_handle_errors
def calibrate(target_pjap, gamma_kappa, length, J):
    """Solve for eta-kappa reaching a target prior activation probability."""
    if (length is None) == (J is None):
        raise DataError("give exactly one of --length or --levels")
    if length is not None:
        J = depth_for_length(length)
    eta = ebayes.calibrate_sparsity(target_pjap, gamma_kappa, J)
    out = {
        "command": "calibrate",
        "J": J,
        "gamma_kappa": gamma_kappa,
        "target_pjap": target_pjap,
        "eta_kappa": eta,
        "achieved_pjap": ebayes.prior_pjap(eta, gamma_kappa, J),
    }
    click.echo(json.dumps(out, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
