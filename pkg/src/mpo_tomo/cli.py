"""Command-line pipeline: simulate -> reconstruct -> analyze.

Each command reads a JSON config (with explicit seeds; unknown keys are
rejected) and writes its artifacts under the output directory:

    mpo-tomo simulate   --config cfg.json --out run/
    mpo-tomo reconstruct --config cfg.json --out run/
    mpo-tomo analyze    --config cfg.json --out run/ [--threads K]

Exit codes: 0 success, 2 validation error, 3 data-completeness error,
4 numerical non-convergence (partial outputs are still written).
The MPO_TOMO_LOG environment variable (error | info | debug) sets verbosity.
"""

from __future__ import annotations

import argparse
import csv
import glob
import itertools
import json
import logging
import os
import sys

import numpy as np

from . import cluster, entanglement, fitting, measurement, mpo as mpo_mod
from .correlations import (
    align_phases,
    correct_inefficiency,
    moments_to_zshifted,
    save_correlation_csv,
    zshifted_to_pauli,
)
from .errors import CompletenessError, ValidationError
from .measurement import MomentTable

log = logging.getLogger("mpo_tomo")

_CONFIG_SCHEMA = {
    "version": None,
    "protocol": {"n_qubits", "eps_ad", "eps_pd", "rotation_offsets"},
    "measurement": {"window", "eta", "eta_se", "shots", "seed"},
    "fit": {"k_sigma", "max_iterations", "tol", "se_floor"},
    "analysis": {"le_pairs", "le_measure", "subset_samples", "subset_seed"},
}

_DEFAULTS = {
    "measurement": {"window": 5, "eta": 1.0, "eta_se": 0.0},
    "fit": {"k_sigma": 5.0, "max_iterations": 200, "tol": 1e-10, "se_floor": 1e-9},
    "analysis": {
        "le_pairs": "all",
        "le_measure": "negativity",
        "subset_samples": 2**13,
        "subset_seed": None,
    },
}


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from exc
    unknown = set(cfg) - set(_CONFIG_SCHEMA)
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    if cfg.get("version") != 1:
        raise ValidationError("config must declare \"version\": 1")
    for section, allowed in _CONFIG_SCHEMA.items():
        if allowed is None or section not in cfg:
            continue
        extra = set(cfg[section]) - allowed
        if extra:
            raise ValidationError(f"unknown keys in {section}: {sorted(extra)}")
    for section, defaults in _DEFAULTS.items():
        merged = dict(defaults)
        merged.update(cfg.get(section, {}))
        cfg[section] = merged
    if "protocol" not in cfg or "n_qubits" not in cfg["protocol"]:
        raise ValidationError("config needs protocol.n_qubits")
    n = cfg["protocol"]["n_qubits"]
    if not isinstance(n, int) or n < 5:
        raise ValidationError("protocol.n_qubits must be an integer >= 5")
    m = cfg["measurement"]
    if "shots" not in m or "seed" not in m:
        raise ValidationError("measurement.shots and measurement.seed are required")
    if not isinstance(m["seed"], int):
        raise ValidationError("measurement.seed must be an explicit integer")
    if not isinstance(m["shots"], int) or m["shots"] < 100:
        raise ValidationError("measurement.shots must be an integer >= 100")
    if not 0.0 < m["eta"] <= 1.0:
        raise ValidationError("measurement.eta must lie in (0, 1]")
    return cfg


def _error_model(cfg) -> cluster.ErrorModel:
    p = cfg["protocol"]
    n = p["n_qubits"]
    ad = p.get("eps_ad", 0.0)
    pd = p.get("eps_pd", 0.0)
    ad = np.full(n, float(ad)) if np.isscalar(ad) else np.asarray(ad, dtype=float)
    pd = np.full(n, float(pd)) if np.isscalar(pd) else np.asarray(pd, dtype=float)
    if ad.shape != (n,) or pd.shape != (n,):
        raise ValidationError("per-site error lists must have length n_qubits")
    return cluster.ErrorModel(ad, pd)


def _truth_mpo(cfg) -> mpo_mod.Mpo:
    from .channels import amplitude_damping, compose, pure_dephasing
    from .emission import ProtocolImperfections, build_cluster_protocol, emit_mpo

    p = cfg["protocol"]
    n = p["n_qubits"]
    model = _error_model(cfg)
    offsets = p.get("rotation_offsets")
    if offsets is None:
        return cluster.noisy_cluster_model(n, model)
    channels = tuple(
        compose(pure_dephasing(pd), amplitude_damping(ad))
        for ad, pd in zip(model.eps_ad, model.eps_pd)
    )
    imp = ProtocolImperfections(
        rotation_offsets=tuple(float(x) for x in offsets),
        photon_channels=channels,
    )
    return emit_mpo(build_cluster_protocol(n, imp))


def _setting_of_word(word, start: int, window: int) -> str:
    """Measurement-setting label (q/p per qubit position modulo the window).

    A window of consecutive qubits covers every position residue exactly
    once, so each (start, word) row belongs to exactly one setting.
    """
    basis = [""] * window
    for j, k in enumerate(word):
        basis[(start - 1 + j) % window] = "q" if k in (0, 2, 4) else "p"
    return "".join(basis)


def _dataset_dir(out):
    return os.path.join(out, "dataset")


def cmd_simulate(cfg, out: str, threads: int) -> int:
    n = cfg["protocol"]["n_qubits"]
    m = cfg["measurement"]
    window = m["window"]
    truth = _truth_mpo(cfg)
    table = measurement.synthesize_dataset(
        truth, window, m["eta"], m["shots"], m["seed"]
    )
    os.makedirs(_dataset_dir(out), exist_ok=True)
    mpo_mod.save_json(truth, os.path.join(out, "truth_mpo.json"))
    # one CSV per measurement setting: a setting fixes q or p for each qubit
    # position modulo the window length, giving 2**window files
    rows_by_setting: dict[str, list] = {}
    for start, word, value, se in table.rows():
        label = _setting_of_word(word, start, window)
        rows_by_setting.setdefault(label, []).append((start, word, value, se))
    for bits in itertools.product("qp", repeat=window):
        label = "".join(bits)
        path = os.path.join(_dataset_dir(out), f"setting_{label}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["window_start", "basis_word", "value", "se", "shots"])
            for start, word, value, se in rows_by_setting.get(label, []):
                writer.writerow(
                    [
                        start,
                        measurement.moment_word_string(word),
                        repr(value),
                        repr(se),
                        table.shots,
                    ]
                )
    manifest = {
        "n_qubits": n,
        "window": window,
        "shots": m["shots"],
        "seed": m["seed"],
        "eta": m["eta"],
        "settings": 2**window,
    }
    with open(os.path.join(out, "simulate_manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True)
    log.info("wrote %d setting files under %s", 2**window, _dataset_dir(out))
    return 0


def _load_dataset(cfg, out) -> MomentTable:
    n = cfg["protocol"]["n_qubits"]
    window = cfg["measurement"]["window"]
    paths = sorted(glob.glob(os.path.join(_dataset_dir(out), "setting_*.csv")))
    if not paths:
        raise CompletenessError(f"no dataset files under {_dataset_dir(out)}")
    table = measurement.load_moment_csv(paths, n, window)
    table.require_complete()
    return table


def cmd_reconstruct(cfg, out: str, threads: int) -> int:
    m = cfg["measurement"]
    fit_cfg = cfg["fit"]
    table = _load_dataset(cfg, out)
    stages: dict = {}
    corrs = moments_to_zshifted(table)
    if m["eta"] < 1.0:
        corrs = correct_inefficiency(corrs, m["eta"], m["eta_se"])
        stages["eta_correction"] = {"eta": m["eta"], "eta_se": m["eta_se"]}
    corrs, angles = align_phases(corrs)
    stages["alignment_angles"] = angles.tolist()
    estimator = fitting.MpoLeastSquares(
        k_sigma=fit_cfg["k_sigma"],
        max_iter=fit_cfg["max_iterations"],
        tol=fit_cfg["tol"],
        se_floor=fit_cfg["se_floor"],
    )
    estimator.fit(corrs)
    stages["bond_dimensions"] = {
        str(s): {
            "estimate": estimator.bond_estimate_.dims[s],
            "singular_values": estimator.bond_estimate_.singular_values[s].tolist(),
            "singular_value_ses": estimator.bond_estimate_.singular_value_ses[
                s
            ].tolist(),
        }
        for s in sorted(estimator.bond_estimate_.dims)
    }
    stages["inversion_residuals"] = {
        str(s): r for s, r in sorted(estimator.inversion_.site_residuals.items())
    }
    fr = estimator.fit_result_
    stages["gauss_newton"] = {
        "iterations": fr.iterations,
        "converged": fr.converged,
        "sse": fr.sse,
        "dof": fr.dof,
    }
    fit_dir = os.path.join(out, "fit")
    fitting.save_fit_bundle(fr, fit_dir)
    save_correlation_csv(
        zshifted_to_pauli(corrs),
        os.path.join(fit_dir, "correlations_pauli.csv"),
        os.path.join(fit_dir, "correlations_meta.json"),
    )
    with open(os.path.join(fit_dir, "stages.json"), "w") as fh:
        json.dump(stages, fh, sort_keys=True)
    if not fr.converged:
        log.error("fit did not converge in %d iterations", fr.iterations)
        return 4
    log.info("fit converged in %d iterations, sse/dof=%.3f", fr.iterations, fr.reduced_sse)
    return 0


def _stabilizer_table(fit, n):
    words = cluster.stabilizer_words(n)
    values, ses = [], []
    for word in words:
        letters = word.padded(n)
        val = fit.mpo.correlation(letters)

        def functional(m, letters=letters):
            return m.correlation(letters), mpo_mod.correlation_gradient(m, letters)

        _, se = fitting.propagate_covariance(fit, functional)
        values.append(val)
        ses.append(se)
    return np.array(values), np.array(ses)


def cmd_analyze(cfg, out: str, threads: int) -> int:
    n = cfg["protocol"]["n_qubits"]
    ana = cfg["analysis"]
    fit_dir = os.path.join(out, "fit")
    if not os.path.isdir(fit_dir):
        raise ValidationError(f"no fit bundle under {fit_dir}; run reconstruct first")
    fit = fitting.load_fit_bundle(fit_dir)
    ideal = cluster.ideal_cluster_mpo(n)
    fidelity, fidelity_se = fitting.propagate_covariance(
        fit, fitting.fidelity_functional(ideal)
    )

    stab_values, stab_ses = _stabilizer_table(fit, n)
    bound = cluster.stabilizer_fidelity_bound(stab_values, stab_ses)
    excitations = cluster.mean_excitations(fit.mpo)
    exc_ses = []
    for s in range(1, n + 1):
        letters = tuple(3 if t == s else 0 for t in range(1, n + 1))

        def functional(m, letters=letters):
            return m.correlation(letters), mpo_mod.correlation_gradient(m, letters)

        _, se = fitting.propagate_covariance(fit, functional)
        exc_ses.append(se / 2.0)
    model = cluster.fit_error_model(
        excitations, exc_ses, stab_values, stab_ses, uniform=True
    )
    model_stabs = cluster.stabilizer_expectations(
        cluster.noisy_cluster_model(n, model)
    )
    cluster.write_stabilizer_report(
        os.path.join(out, "stabilizers.csv"), stab_values, stab_ses, model_stabs
    )
    model.to_json(os.path.join(out, "error_model.json"))

    # localizable entanglement
    measure = ana["le_measure"]
    pairs = ana["le_pairs"]
    if pairs == "all":
        pairs = [(r, rp) for r in range(1, n) for rp in range(r + 1, n + 1)]
    else:
        pairs = [tuple(p) for p in pairs]
    le_rows = []
    for r, rp in pairs:
        plan = entanglement.default_plan(n, r, rp)
        if n <= 15:
            res = entanglement.localizable_entanglement(
                fit.mpo, plan, measure, fit=fit, threads=threads
            )
        else:
            if ana["subset_seed"] is None:
                raise ValidationError(
                    "analysis.subset_seed is required for N > 15 (no implicit seeds)"
                )
            res = entanglement.le_subset_estimate(
                fit.mpo, plan, measure, ana["subset_samples"], ana["subset_seed"]
            )
        le_rows.append(res)
    with open(os.path.join(out, "le_matrix.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r", "r_prime", "value", "se_parameter", "se_sampling"])
        for res in le_rows:
            writer.writerow(
                [
                    res.pair[0],
                    res.pair[1],
                    repr(res.value),
                    "" if res.se_parameter is None else repr(res.se_parameter),
                    repr(res.se_sampling),
                ]
            )
    with open(os.path.join(out, "le_distance.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "value", "se_parameter", "se_sampling"])
        for res in le_rows:
            if res.pair[0] == 1:
                writer.writerow(
                    [
                        res.pair[1] - res.pair[0],
                        repr(res.value),
                        "" if res.se_parameter is None else repr(res.se_parameter),
                        repr(res.se_sampling),
                    ]
                )

    # density-matrix corner dump (first/last 16 basis states)
    corner = sorted(set(range(min(16, 2**n))) | set(range(max(0, 2**n - 16), 2**n)))
    with open(os.path.join(out, "density_corner.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bra", "ket", "abs", "arg"])
        for i in corner:
            bra = [(i >> (n - 1 - t)) & 1 for t in range(n)]
            for j in corner:
                ket = [(j >> (n - 1 - t)) & 1 for t in range(n)]
                z = mpo_mod.matrix_element(fit.mpo, bra, ket)
                writer.writerow(
                    [
                        "".join(map(str, bra)),
                        "".join(map(str, ket)),
                        repr(abs(z)),
                        repr(float(np.angle(z))),
                    ]
                )

    report = {
        "n_qubits": n,
        "fidelity": fidelity,
        "fidelity_se": fidelity_se,
        "stabilizer_bound": bound,
        "stabilizers": stab_values.tolist(),
        "stabilizer_ses": stab_ses.tolist(),
        "mean_excitations": excitations.tolist(),
        "error_model": {
            "eps_ad": model.eps_ad.tolist(),
            "eps_pd": model.eps_pd.tolist(),
        },
        "le_measure": measure,
        "fit": {"sse": fit.sse, "dof": fit.dof, "converged": fit.converged},
    }
    with open(os.path.join(out, "report.json"), "w") as fh:
        json.dump(report, fh, sort_keys=True)
    log.info("fidelity %.4f +- %.4f, bound %.4f", fidelity, fidelity_se, bound)
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "analyze": cmd_analyze,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mpo-tomo",
        description="MPO tomography of sequentially emitted photonic qubit chains",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="path to the JSON run config")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--threads", type=int, default=1, help="worker thread cap")
    args = parser.parse_args(argv)

    level = os.environ.get("MPO_TOMO_LOG", "error").upper()
    if level not in ("ERROR", "INFO", "DEBUG"):
        print(f"MPO_TOMO_LOG must be error, info or debug (got {level.lower()})", file=sys.stderr)
        return 2
    logging.basicConfig(level=getattr(logging, level))

    try:
        cfg = load_config(args.config)
        if args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        os.makedirs(args.out, exist_ok=True)
        return _COMMANDS[args.command](cfg, args.out, args.threads)
    except CompletenessError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValidationError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
