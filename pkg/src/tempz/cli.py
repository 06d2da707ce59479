"""Command-line front end.

Experiments are described by flat INI config files (sections: model,
ladder, budget, run, plus train/sweep extras); every run is fully
determined by (config, seed) and writes CSV/JSON artifacts into the
output directory.  Subcommands: estimate, oracle, train, sweep-k,
hmc-tune.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import sys
from pathlib import Path

import numpy as np

from . import annealing, estimators, gaussian, rbm, tempering
from .core import TemperatureLadder
from .tracker import TrainConfig, train_with_tracking


class ConfigError(Exception):
    pass


def _get(cfg, section, key, cast, default=None, required=False):
    if not cfg.has_option(section, key):
        if required:
            raise ConfigError(f"[{section}] missing required key '{key}'")
        return default
    raw = cfg.get(section, key)
    try:
        if cast is bool:
            return cfg.getboolean(section, key)
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from exc


def load_config(path) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    read = cfg.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    return cfg


def build_ladder(cfg) -> TemperatureLadder:
    K = _get(cfg, "ladder", "k", int, default=100)
    if K < 2:
        raise ConfigError("[ladder] k must be >= 2")
    spacing = _get(cfg, "ladder", "spacing", str, default="uniform")
    prior = _get(cfg, "ladder", "prior", str, default="uniform")
    exponent = _get(cfg, "ladder", "prior_exponent", float, default=0.0)
    try:
        return TemperatureLadder.make(K, spacing=spacing, prior=prior,
                                      prior_exponent=exponent)
    except ValueError as exc:
        raise ConfigError(f"[ladder] {exc}") from exc


def build_model(cfg, seed: int):
    """Returns (model, oracle log Z or None)."""
    mtype = _get(cfg, "model", "type", str, required=True)
    if mtype == "rbm":
        spec = _get(cfg, "model", "params", str, default="random")
        if spec == "random":
            M = _get(cfg, "model", "visible", int, required=True)
            J = _get(cfg, "model", "hidden", int, required=True)
            pseed = _get(cfg, "model", "param_seed", int, default=seed)
            scale = _get(cfg, "model", "scale", float, default=0.05)
            params = rbm.random_rbm(M, J, pseed, scale)
        else:
            if not Path(spec).exists():
                raise ConfigError(f"[model] params file {spec} does not exist")
            params = rbm.load_rbm(spec)
        base_kind = _get(cfg, "model", "base", str, default="data")
        data_path = _get(cfg, "model", "data", str)
        if base_kind == "uniform":
            base = rbm.uniform_base(params.n_visible)
        elif data_path is not None:
            data = rbm.binarize(rbm.load_idx(data_path))
            base = rbm.base_from_data(data)
        else:
            # no dataset: match marginals of exact model draws
            n = _get(cfg, "model", "base_samples", int, default=2000)
            rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
            base = rbm.base_from_data(rbm.sample_visible_exact(params, n, rng))
        model = rbm.RbmModel(params, base)
        oracle = None
        if min(params.n_visible, params.n_hidden) <= rbm.ENUM_LIMIT:
            oracle = rbm.rbm_exact_log_z(params)
        return model, oracle
    if mtype == "gmm":
        d = _get(cfg, "model", "dim", int, default=10)
        sep = _get(cfg, "model", "separation", float, default=5.0)
        sigma2 = _get(cfg, "model", "sigma2", float, default=0.5)
        prior_var = _get(cfg, "model", "prior_var", float, default=30.0)
        n_comp = _get(cfg, "model", "components", int, default=2)
        means = np.zeros((n_comp, d))
        for m in range(n_comp):
            means[m, 0] = m * sep
        target = gaussian.GmmTarget(means, sigma2, np.ones(n_comp), prior_var)
        model = gaussian.GmmModel(target)
        return model, gaussian.gmm_analytic_log_z(target)
    raise ConfigError(f"[model] unknown type {mtype!r}")


def _budget(cfg):
    return dict(
        chains=_get(cfg, "budget", "chains", int, default=100),
        sweeps=_get(cfg, "budget", "sweeps", int, default=1000),
        init_iters=_get(cfg, "budget", "init_iters", int, default=10),
        sweeps_per_iter=_get(cfg, "budget", "sweeps_per_iter", int, default=50),
    )


def _run_opts(cfg, args):
    seed = args.seed if args.seed is not None else _get(cfg, "run", "seed", int, default=0)
    out = args.out if args.out is not None else _get(cfg, "run", "out", str, default="out")
    threads = args.threads if args.threads is not None else _get(cfg, "run", "threads", int, default=1)
    for key in ("chains", "sweeps", "init_iters", "sweeps_per_iter"):
        if _get(cfg, "budget", key, int, default=1) < (0 if key == "init_iters" else 1):
            raise ConfigError(f"[budget] {key} must be positive")
    return seed, Path(out), threads


def cmd_estimate(args) -> int:
    cfg = load_config(args.config)
    seed, out, threads = _run_opts(cfg, args)
    methods = [m.strip() for m in
               _get(cfg, "run", "methods", str, default="rts").split(",") if m.strip()]
    known = set(estimators.METHODS) | {"ti"}
    for m in methods:
        if m not in known:
            raise ConfigError(f"[run] unknown method {m!r}")
    budget = _budget(cfg)
    model, oracle = build_model(cfg, seed)
    ladder = build_ladder(cfg)

    if isinstance(model, gaussian.GmmModel):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(8,)))
        gaussian.adapt_hmc(model, ladder, rng)

    if budget["init_iters"] > 0:
        ladder, report, states = tempering.init_iterations(
            model, ladder, n_iters_max=budget["init_iters"],
            sweeps_per_iter=budget["sweeps_per_iter"],
            n_chains=budget["chains"], seed=seed, n_threads=threads)
        init_states = [s.x for s in states]
    else:
        report = None
        init_states = None

    need_samples = any(m in ("mbar",) for m in methods)
    res = tempering.run_chains(model, ladder, budget["chains"], budget["sweeps"],
                               seed=seed, stream=(2,), init_states=init_states,
                               record_samples=need_samples, n_threads=threads)
    stats = res[0]
    samples = res[2] if need_samples else None

    out.mkdir(parents=True, exist_ok=True)
    ests = []
    per_chain_total = budget["init_iters"] * budget["sweeps_per_iter"] + budget["sweeps"]
    for m in methods:
        if m == "rts":
            ests.append(estimators.rts(ladder, stats))
        elif m == "ts":
            ests.append(estimators.ts_counts(ladder, stats))
        elif m in ("ti", "ti_trap"):
            ests.append(estimators.ti(ladder, stats, rule="trapezoid"))
        elif m == "ti_riemann":
            ests.append(estimators.ti(ladder, stats, rule="riemann"))
        elif m == "ti_rb":
            ests.append(estimators.ti_rb(ladder, stats))
        elif m == "mbar":
            ests.append(estimators.mbar(samples, ladder))
        elif m in ("sd", "rsd"):
            ests.append(estimators.stationary_estimate(ladder, stats, mode=m))
        elif m == "ais":
            run = annealing.ais(model, per_chain_total, budget["chains"], seed,
                                stream=(4,))
            lz, _ = annealing.anneal_aggregate(run)
            ests.append(_anneal_estimate(lz, ladder, "ais", run))
            annealing.write_weights_csv(out / "ais_weights.csv", run)
        elif m == "raise":
            rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(5,)))
            starts = [model.sample_target_exact(rng) for _ in range(budget["chains"])]
            run = annealing.raise_run(model, per_chain_total, budget["chains"],
                                      starts, seed, stream=(6,))
            lz, _ = annealing.anneal_aggregate(run)
            ests.append(_anneal_estimate(lz, ladder, "raise", run))
            annealing.write_weights_csv(out / "raise_weights.csv", run)
        elif m == "mbar_stoch":
            ests.append(estimators.mbar_stochastic(ladder, [stats]))

    estimators.write_estimates_json(out / "estimates.json", ests, seed=seed)
    estimators.write_estimates_csv(out / "estimates.csv", ests, ladder)
    tempering.write_stats_csv(out / "stats.csv", ladder, stats)
    tempering.write_transitions_csv(out / "transitions.csv", stats)
    for est in ests:
        line = f"{est.method}: log Z = {est.log_z[-1]:.6f}"
        if oracle is not None:
            line += f"  (oracle {oracle:.6f}, error {est.log_z[-1] - oracle:+.6f})"
        print(line)
    if report is not None and not report.converged:
        print(f"warning: initialization did not converge "
              f"(max gap {report.max_abs_gap:.3g})", file=sys.stderr)
    return 0


def _anneal_estimate(log_z_target, ladder, method, run):
    # annealing estimates only pin the endpoint; intermediate entries are
    # linear in beta for serialization purposes
    log_z = ladder.betas * log_z_target
    return estimators.LogZEstimate(log_z, method, n_samples=run.total_sweeps)


def cmd_oracle(args) -> int:
    params = rbm.load_rbm(args.params)
    value = rbm.rbm_exact_log_z(params)
    print(f"{value:.15g}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed, out, _threads = _run_opts(cfg, args)
    out.mkdir(parents=True, exist_ok=True)
    data_path = _get(cfg, "model", "data", str)
    if data_path is not None:
        data = rbm.binarize(rbm.load_idx(data_path))
    else:
        M = _get(cfg, "model", "visible", int, default=180)
        n_rows = _get(cfg, "model", "rows", int, default=2000)
        data = rbm.synthetic_patterns(M, n_rows, seed=seed)
    val_fraction = _get(cfg, "train", "val_fraction", float, default=0.2)
    n_val = max(1, int(len(data) * val_fraction))
    train, val = data[n_val:], data[:n_val]

    tc = TrainConfig(
        n_hidden=_get(cfg, "train", "hidden", int, default=50),
        n_chains=_get(cfg, "budget", "chains", int, default=100),
        sweeps_per_update=_get(cfg, "train", "sweeps_per_update", int, default=25),
        K=_get(cfg, "ladder", "k", int, default=100),
        prior_exponent=_get(cfg, "ladder", "prior_exponent", float, default=2.0),
        alpha=_get(cfg, "train", "alpha", float, default=0.2),
        learning_rate=_get(cfg, "train", "learning_rate", float, default=0.05),
        momentum=_get(cfg, "train", "momentum", float, default=0.9),
        epochs=_get(cfg, "train", "epochs", int, default=1),
        batch_size=_get(cfg, "train", "batch_size", int, default=50),
        cd1_pretrain_epochs=_get(cfg, "train", "cd1_epochs", int, default=1),
        init_iters=_get(cfg, "budget", "init_iters", int, default=10),
        init_sweeps_per_iter=_get(cfg, "budget", "sweeps_per_iter", int, default=50),
        checkpoint_every=_get(cfg, "train", "checkpoint_every", int, default=0),
        checkpoint_path=str(out / "checkpoint.rbm"),
    )
    params, trace, ladder, _chains = train_with_tracking(tc, train, val, seed)
    rbm.save_rbm(out / "final.rbm", params)
    trace.to_csv(out / "trace.csv")
    print(f"updates: {len(trace.t)}  final log Zhat_K: {trace.log_zhat_K[-1]:.4f}  "
          f"final train LL: {trace.train_ll[-1]:.4f}  val LL: {trace.val_ll[-1]:.4f}")
    if trace.aborted:
        print("warning: run aborted by divergence guard", file=sys.stderr)
    return 0


def cmd_sweep_k(args) -> int:
    cfg = load_config(args.config)
    seed, out, threads = _run_opts(cfg, args)
    out.mkdir(parents=True, exist_ok=True)
    model, oracle = build_model(cfg, seed)
    if oracle is None:
        raise ConfigError("sweep-k needs a model with exact ground truth")
    base_ladder = build_ladder(cfg)
    budget = _budget(cfg)
    k_values = [int(v) for v in
                _get(cfg, "sweep", "k_values", str, default="20,50,100,200").split(",")]
    n_boot = _get(cfg, "sweep", "bootstrap", int, default=200)
    boot_n = _get(cfg, "sweep", "bootstrap_samples", int, default=10000)

    ladder, _, states = tempering.init_iterations(
        model, ladder=base_ladder, n_iters_max=budget["init_iters"],
        sweeps_per_iter=budget["sweeps_per_iter"], n_chains=budget["chains"],
        seed=seed, n_threads=threads)
    stats, _, samples = tempering.run_chains(
        model, ladder, budget["chains"], budget["sweeps"], seed=seed, stream=(2,),
        init_states=[s.x for s in states], record_samples=True, n_threads=threads)

    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(10,)))
    rows = []
    for K in k_values:
        lad = TemperatureLadder.make(K)
        lad = lad.with_log_zhat(np.interp(lad.betas, ladder.betas, ladder.log_zhat))
        errors = {m: [] for m in ("rts", "ts", "ti_trap", "ti_rb")}
        for _ in range(n_boot):
            deltas = rng.choice(samples.deltas, size=boot_n, replace=True)
            st = estimators.stats_from_deltas(lad, deltas, rng)
            for m, fn in (("rts", lambda: estimators.rts(lad, st)),
                          ("ts", lambda: estimators.ts_counts(lad, st)),
                          ("ti_trap", lambda: estimators.ti(lad, st)),
                          ("ti_rb", lambda: estimators.ti_rb(lad, st))):
                try:
                    errors[m].append(fn().log_z[-1] - oracle)
                except ValueError:
                    pass
        for m, errs in errors.items():
            if errs:
                rmse = float(np.sqrt(np.mean(np.square(errs))))
                rows.append((K, m, rmse, len(errs)))
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["K", "method", "rmse", "n_estimates"])
        for row in rows:
            w.writerow([row[0], row[1], repr(row[2]), row[3]])
    for row in rows:
        print(f"K={row[0]:<5d} {row[1]:<8s} rmse={row[2]:.4f}")
    return 0


def cmd_hmc_tune(args) -> int:
    cfg = load_config(args.config)
    seed, out, _threads = _run_opts(cfg, args)
    out.mkdir(parents=True, exist_ok=True)
    model, _oracle = build_model(cfg, seed)
    if not isinstance(model, gaussian.GmmModel):
        raise ConfigError("hmc-tune requires a gmm model")
    ladder = build_ladder(cfg)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(8,)))
    fit, table, rates = gaussian.adapt_hmc(model, ladder, rng)
    gaussian.write_eps_csv(out / "hmc_eps.csv", ladder, table, rates)
    print(f"eps range: [{fit.eps_min:.4f}, {fit.eps_max:.4f}]  "
          f"table span: [{table.min():.4f}, {table.max():.4f}]")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tempz",
        description="Partition-function estimation from tempered sampling")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="INI experiment config")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--out", default=None, help="override [run] out directory")
        p.add_argument("--threads", type=int, default=None, help="worker threads")

    p_est = sub.add_parser("estimate", help="run estimators on a configured model")
    add_common(p_est)
    p_est.set_defaults(fn=cmd_estimate)

    p_or = sub.add_parser("oracle", help="exact RBM log Z by enumeration")
    p_or.add_argument("params", help="RBMPARM1 parameter file")
    p_or.set_defaults(fn=cmd_oracle)

    p_tr = sub.add_parser("train", help="train an RBM with log Z tracking")
    add_common(p_tr)
    p_tr.set_defaults(fn=cmd_train)

    p_sw = sub.add_parser("sweep-k", help="bootstrap RMSE versus ladder size")
    add_common(p_sw)
    p_sw.set_defaults(fn=cmd_sweep_k)

    p_hm = sub.add_parser("hmc-tune", help="adaptive HMC step-size table")
    add_common(p_hm)
    p_hm.set_defaults(fn=cmd_hmc_tune)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, configparser.Error) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
