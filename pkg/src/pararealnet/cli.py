"""Command line: ``pararealnet <command> --config <path> [--out DIR] [--seed S] [--workers W]``.

Commands: ode, train, gradcheck, consistency, bench.
"""

import argparse
import os
import sys

import numpy as np

from . import checkpoint, executor, gradcheck, parareal_net as P, parareal_ode as ode, presets, trainer
from .config import ConfigError, defaults, load_config
from .data import IdxError, load_idx, synth_blobs

GRAD_TOL = 1e-5
CONSISTENCY_TOL = 1e-10


def _out_path(cfg, key):
    os.makedirs(cfg["output"]["dir"], exist_ok=True)
    return os.path.join(cfg["output"]["dir"], cfg["output"][key])


def build_source(cfg, seed):
    m = cfg["model"]
    shape = tuple(m["input_shape"])
    if m["preset"] == "toy-resnet":
        return presets.toy_resnet(shape, m["classes"], m["blocks"], m["stages"], m["width"], seed)
    if m["preset"] == "toy-vgg":
        return presets.toy_vgg(shape, m["classes"], m["divisor"], seed)
    raise ConfigError(0, f"unknown preset {m['preset']!r}")


def build_model(cfg, seed):
    m = cfg["model"]
    return P.build_parareal(build_source(cfg, seed), m["N"], m["coarse_units"] or None,
                            m["coarse_style"], seed)


def _limit(ds, n):
    return ds.subset(np.arange(min(n, len(ds)))) if n else ds


def load_data(cfg, seed):
    d, m = cfg["data"], cfg["model"]
    if d["source"] == "idx":
        train = _limit(load_idx(d["train_images"], d["train_labels"], m["classes"]), d["train_limit"])
        test = None
        if d["test_images"]:
            test = _limit(load_idx(d["test_images"], d["test_labels"], m["classes"]), d["test_limit"])
        return train, test
    if d["source"] == "synth":
        shape = tuple(m["input_shape"])
        full = synth_blobs(m["classes"], d["per_class"] + d["test_per_class"], shape,
                           d["separation"], seed)
        per = d["per_class"] + d["test_per_class"]
        is_train = np.tile(np.arange(per) < d["per_class"], m["classes"])
        train, test = full.subset(np.flatnonzero(is_train)), None
        if d["test_per_class"]:
            test = full.subset(np.flatnonzero(~is_train))
        return train, test
    raise ConfigError(0, f"unknown data source {d['source']!r}")


def train_config(cfg, seed):
    t = cfg["train"]
    return trainer.TrainConfig(t["epochs"], t["batch_size"], t["lr"], t["lr_decay"],
                               tuple(t["milestones"]), t["momentum"], t["weight_decay"],
                               seed, t["augment"])


# ---------------------------------------------------------------------------
# commands


def cmd_ode(cfg, seed, workers):
    o = cfg["ode"]
    if o["system"] == "scalar":
        A, u0 = np.array([[-1.0]]), np.array([1.0])
    elif o["system"] == "random":
        A = ode.random_stable_matrix(o["dim"], seed)
        u0 = np.random.default_rng(seed).standard_normal(o["dim"])
    else:
        raise ConfigError(0, f"unknown ode system {o['system']!r}")
    problem = ode.OdeProblem.uniform(A, u0, o["T"], o["N"], o["M"])
    _, history = ode.parareal_solve(problem, o["max_iters"], o["tol"], workers)
    path = _out_path(cfg, "ode")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iter,error\n")
        for k, err in enumerate(history):
            fh.write(f"{k},{err!r}\n")
    print(f"parareal: {len(history) - 1} corrections, final error {history[-1]:.3e} -> {path}")
    return 0


def cmd_train(cfg, seed, workers):
    net = build_model(cfg, seed)
    train_set, test_set = load_data(cfg, seed)
    tc = train_config(cfg, seed)
    state, start = None, 0
    if cfg["train"]["resume"]:
        params, velocity, start = checkpoint.load_training_state(cfg["train"]["resume"])
        checkpoint.restore_params(net.named_parameters(), params)
        state = trainer.MomentumState(velocity)
    history, state = trainer.train(net, train_set, tc, test_set, workers, state=state, start_epoch=start)
    for epoch, loss, tr, te in history:
        print(f"epoch {epoch}: loss {loss:.4f} train_err {tr:.2f}% test_err {te:.2f}%")
    trainer.write_metrics_csv(_out_path(cfg, "metrics"), history)
    checkpoint.save_training_state(_out_path(cfg, "checkpoint"), net.named_parameters(),
                                   state.velocity, max(tc.epochs, start))
    return 0


def cmd_gradcheck(cfg, seed, workers):
    g = cfg["gradcheck"]
    source = presets.toy_resnet(tuple(g["input_shape"]), cfg["model"]["classes"], g["blocks"],
                                3, g["width"], seed)
    worst_all = 0.0
    for N in g["N"]:
        worst, unresolved = gradcheck.check_network(source, N, g["batch"], seed,
                                                    n_units=g["coarse_units"] or None)
        key = max(worst, key=worst.get)
        print(f"N={N}: max relative gradient error {worst[key]:.3e} ({key}); "
              f"{len(worst)} tensors, {unresolved} kinked entries")
        worst_all = max(worst_all, worst[key])
    print(f"max relative gradient error {worst_all:.3e}")
    return 0 if worst_all <= GRAD_TOL else 1


def cmd_consistency(cfg, seed, workers):
    c = cfg["consistency"]
    source = presets.linear_toy(blocks=c["blocks"], seed=seed)
    worst = 0.0
    for N in c["N"]:
        dev = P.check_consistency(source, N, c["batch"], seed)
        print(f"N={N}: max deviation {dev:.3e}")
        worst = max(worst, dev)
    print(f"max deviation {worst!r}")
    return 0 if worst <= CONSISTENCY_TOL else 1


def cmd_bench(cfg, seed, workers):
    e = cfg["exec"]
    source = build_source(cfg, seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((e["bench_batch"],) + tuple(cfg["model"]["input_shape"]))
    labels = rng.integers(0, cfg["model"]["classes"], e["bench_batch"])
    m = cfg["model"]

    def run(N):
        net = P.build_parareal(source, N, m["coarse_units"] or None, m["coarse_style"], seed)
        if e["timing"] == "wall":
            executor.timed_step(net, (x, labels), workers, "wall")  # warm-up
        return executor.timed_step(net, (x, labels), workers, e["timing"])

    reports = [(N, run(N)) for N in e["bench_N"]]
    ref = next((r for N, r in reports if N == 1), None) or run(1)
    t_ref = ref.forward["total"] + ref.backward["total"]
    prefix = os.path.join(cfg["output"]["dir"], cfg["output"]["bench_prefix"])
    os.makedirs(cfg["output"]["dir"], exist_ok=True)
    for i, (N, rep) in enumerate(reports):
        path = f"{prefix}_{i}_N{N}.csv"
        executor.write_timing_csv(path, rep)
        t = rep.forward["total"] + rep.backward["total"]
        print(f"N={N}: total {t:.6g} {rep.unit}, RS {executor.relative_speedup(t_ref, t):.1f}% -> {path}")
    return 0


COMMANDS = {
    "ode": cmd_ode,
    "train": cmd_train,
    "gradcheck": cmd_gradcheck,
    "consistency": cmd_consistency,
    "bench": cmd_bench,
}


def main(argv=None):
    parser = argparse.ArgumentParser(prog="pararealnet", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="configuration file; defaults apply when omitted")
    parser.add_argument("--out", help="output directory (overrides [output] dir)")
    parser.add_argument("--seed", type=int, help="seed for data, initialisation and shuffling")
    parser.add_argument("--workers", type=int, help="worker threads (overrides [exec] workers)")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else defaults()
        if args.out:
            cfg["output"]["dir"] = args.out
        if args.workers is not None:
            cfg["exec"]["workers"] = args.workers
        seed = cfg["train"]["rng_seed"] if args.seed is None else args.seed
        if seed < 0 or cfg["exec"]["workers"] < 1:
            raise ConfigError(0, "seed must be >= 0 and workers >= 1")
        return COMMANDS[args.command](cfg, seed, cfg["exec"]["workers"])
    except (ConfigError, IdxError, checkpoint.CheckpointError, OSError, ValueError) as exc:
        print(f"pararealnet {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
