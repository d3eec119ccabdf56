"""Command-line pipeline: generate reference data, train operator variants,
roll them out on held-out cases, score the rollouts, and render report
figures.

Artifacts live under the run directory: ``data/`` holds reference
trajectories plus ``index.json``, ``model-<mode>.pft`` and
``history-<mode>.csv`` come from training, ``rollout/`` holds predicted
trajectories, ``metrics.csv`` the per-case scores, and ``plots/`` the rendered
figures. Set PFPINO_THREADS before launch to cap BLAS worker pools (applied
at package import, ahead of numpy).
"""

import argparse
import json
import os
import sys

import numpy as np

from . import config as cf
from . import dataio
from . import fno
from . import metrics as mt
from . import solvers as sv
from . import training as tr

MODES = ("fno", "pino", "pino-ft")

INTERFACE_LEVEL = {"corrosion1d": 0.5, "electropolish": 0.5,
                   "solidification": 0.0, "spinodal": 0.0}


# -- shared path and channel helpers ---------------------------------------------


def _data_dir(cfg):
    return os.path.join(cfg.out, "data")


def _rollout_dir(cfg):
    return os.path.join(cfg.out, "rollout")


def _plots_dir(cfg):
    return os.path.join(cfg.out, "plots")


def _traj_path(cfg, name):
    return os.path.join(_data_dir(cfg), f"{name}.pft")


def _load_index(cfg):
    path = os.path.join(_data_dir(cfg), "index.json")
    if not os.path.exists(path):
        raise ValueError(f"invalid-input: no dataset index at {path}; "
                         "run generate first")
    with open(path, encoding="utf-8") as fh:
        idx = json.load(fh)
    if idx["benchmark"] != cfg.benchmark:
        raise ValueError(f"invalid-input: dataset holds {idx['benchmark']!r}, "
                         f"requested {cfg.benchmark!r}")
    return idx


def _initial_channels(traj):
    """Step-0 state block and static channels, each (1, ch, *grid)."""
    in_names, out_names = dataio.CHANNEL_LAYOUTS[traj.spec.kind]
    static = dataio.static_channels(traj.spec)
    state = np.stack([traj.fields[n][0] for n in out_names])[None]
    stat = np.stack([static[n] for n in in_names[len(out_names):]])[None]
    return state, stat


def _state_block(traj, n):
    """States 1..n as a (1, n, channels, *grid) metric block."""
    _, out_names = dataio.CHANNEL_LAYOUTS[traj.spec.kind]
    states = np.stack([traj.fields[k] for k in out_names], axis=1)
    return states[1:n + 1][None]


def _checkpoint_modes(cfg, mode):
    if mode is not None:
        return [mode]
    found = [m for m in MODES
             if os.path.exists(os.path.join(cfg.out, f"model-{m}.pft"))]
    if not found:
        raise ValueError(f"invalid-input: no model checkpoints under {cfg.out}")
    return found


# -- generate --------------------------------------------------------------------


def cmd_generate(cfg):
    train, test = cf.generate_specs(cfg)
    os.makedirs(_data_dir(cfg), exist_ok=True)
    for name, spec in train + test:
        traj = sv.solve(spec)
        dataio.save_trajectory(_traj_path(cfg, name), traj)
        print(f"generate: {name} ({traj.n_states} states)")
    index = {"benchmark": cfg.benchmark, "seed": cfg.seed,
             "train": [n for n, _ in train], "test": [n for n, _ in test]}
    with open(os.path.join(_data_dir(cfg), "index.json"), "w",
              encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


# -- train -----------------------------------------------------------------------


def cmd_train(cfg):
    idx = _load_index(cfg)
    trajs = [dataio.load_trajectory(_traj_path(cfg, n)) for n in idx["train"]]
    spec = trajs[0].spec
    pairs = dataio.build_pairs(trajs)
    train_set, _ = dataio.split(pairs, cfg.train["split_ratio"], cfg.seed)
    model = fno.FnoModel(cfg.fno_config(), seed=cfg.seed)
    tcfg = cfg.train_config()
    seen = [0]

    def note(epoch, _model, _row):
        seen[0] = epoch

    try:
        history = tr.train(model, train_set, spec, tcfg, on_epoch=note)
    except tr.TrainingAbort as err:
        raise tr.TrainingAbort(f"{err} (epoch {seen[0]})") from None

    os.makedirs(cfg.out, exist_ok=True)
    dataio.write_csv(os.path.join(cfg.out, f"history-{tcfg.mode}.csv"),
                     dataio.HISTORY_HEADER, history)
    extra = {"benchmark": cfg.benchmark, "mode": tcfg.mode, "seed": cfg.seed,
             "epochs": tcfg.epochs}
    dataio.save_checkpoint(os.path.join(cfg.out, f"model-{tcfg.mode}.pft"),
                           model, extra)
    print(f"train: {tcfg.mode}, {tcfg.epochs} epochs, "
          f"final data loss {history[-1][1]:.6g}")

    if tcfg.mode == "pino" and cfg.train["finetune_iters"] > 0 and idx["test"]:
        ref = dataio.load_trajectory(_traj_path(cfg, idx["test"][0]))
        state, stat = _initial_channels(ref)
        steps = min(cfg.train["finetune_steps"], ref.n_states - 1)
        fcfg = tr.FinetuneConfig(iters=cfg.train["finetune_iters"],
                                 lr=tr.reduced_lr(cfg.lr_schedule(), tcfg.epochs))
        losses = tr.finetune_rollout(model, state, stat, steps, ref.spec, fcfg)
        dataio.write_csv(os.path.join(cfg.out, "history-pino-ft.csv"),
                         ("iter", "loss_pde"), list(enumerate(losses)))
        extra = dict(extra, mode="pino-ft", finetune_iters=fcfg.iters,
                     finetune_steps=steps)
        dataio.save_checkpoint(os.path.join(cfg.out, "model-pino-ft.pft"),
                               model, extra)
        print(f"train: fine-tune {fcfg.iters} iters on a {steps}-step rollout, "
              f"final residual {losses[-1]:.6g}")
    return 0


# -- rollout ---------------------------------------------------------------------


def cmd_rollout(cfg, mode=None):
    idx = _load_index(cfg)
    if not idx["test"]:
        raise ValueError("invalid-input: dataset has no test cases")
    os.makedirs(_rollout_dir(cfg), exist_ok=True)
    _, out_names = dataio.CHANNEL_LAYOUTS[cfg.benchmark]
    n_roll = cfg.evaluate["rollout_steps"]
    for m in _checkpoint_modes(cfg, mode):
        model, _ = dataio.load_checkpoint(os.path.join(cfg.out, f"model-{m}.pft"))
        for name in idx["test"]:
            ref = dataio.load_trajectory(_traj_path(cfg, name))
            state, stat = _initial_channels(ref)
            states = fno.rollout(model, state, stat, n_roll)
            fields = {k: np.ascontiguousarray(states[:, 0, i])
                      for i, k in enumerate(out_names)}
            pred = sv.Trajectory(spec=ref.spec, fields=fields, dt=ref.dt)
            dataio.save_trajectory(
                os.path.join(_rollout_dir(cfg), f"{name}-{m}.pft"), pred)
            print(f"rollout: {name} {m} ({n_roll} steps)")
    return 0


# -- eval ------------------------------------------------------------------------


def evaluate_case(ref, pred):
    """Rollout scores for one case: (% relative L2, relative Hausdorff).

    Steps 1..n are compared, with n capped by the shorter trajectory; the
    shared initial state is excluded. The Hausdorff term compares terminal
    interfaces and is nan when either rollout has lost its interface.
    """
    if ref.spec.kind != pred.spec.kind or ref.spec.grid != pred.spec.grid:
        raise ValueError("invalid-input: trajectories not comparable")
    n = min(ref.n_states, pred.n_states) - 1
    if n < 1:
        raise ValueError("invalid-input: need at least one step to evaluate")
    _, rel = mt.relative_l2(_state_block(pred, n), _state_block(ref, n))

    _, out_names = dataio.CHANNEL_LAYOUTS[ref.spec.kind]
    lead = out_names[0]
    level = INTERFACE_LEVEL[ref.spec.kind]
    coords = sv.grid_coords(ref.spec)
    try:
        ia = mt.extract_interface(pred.fields[lead][n], level, coords)
        ib = mt.extract_interface(ref.fields[lead][n], level, coords)
        haus = mt.hausdorff_relative(ia, ib, sv.grid_spacing(ref.spec)[0])
    except ValueError as err:
        if "interface-missing" not in str(err):
            raise
        haus = float("nan")
    return rel, haus


def _eval_extra(cfg, name, m, ref, pred, n):
    """Benchmark-specific artifact; returns its file name or ''."""
    if cfg.benchmark == "spinodal":
        bins, sp = mt.structure_factor(pred.fields["c"][n])
        _, sr = mt.structure_factor(ref.fields["c"][n])
        fname = f"sk-{name}-{m}.csv"
        dataio.write_csv(os.path.join(cfg.out, fname),
                         ("bin", "s_pred", "s_ref"),
                         list(zip(bins.tolist(), sp.tolist(), sr.tolist())))
        return fname
    if cfg.benchmark == "solidification":
        rows = [(k, mt.area_fraction(pred.fields["phi"][k]),
                 mt.area_fraction(ref.fields["phi"][k]))
                for k in range(n + 1)]
        fname = f"area-{name}-{m}.csv"
        dataio.write_csv(os.path.join(cfg.out, fname),
                         ("step", "pred", "ref"), rows)
        return fname
    return ""


def cmd_eval(cfg, mode=None):
    idx = _load_index(cfg)
    candidates = [mode] if mode is not None else list(MODES)
    rows = []
    for m in candidates:
        for name in idx["test"]:
            path = os.path.join(_rollout_dir(cfg), f"{name}-{m}.pft")
            if not os.path.exists(path):
                continue
            ref = dataio.load_trajectory(_traj_path(cfg, name))
            pred = dataio.load_trajectory(path)
            rel, haus = evaluate_case(ref, pred)
            n = min(ref.n_states, pred.n_states) - 1
            extra = _eval_extra(cfg, name, m, ref, pred, n)
            rows.append((cfg.benchmark, name, m, rel, haus, extra))
    if not rows:
        raise ValueError(f"invalid-input: no rollouts to score under {cfg.out}")
    out = os.path.join(cfg.out, "metrics.csv")
    dataio.write_csv(out, dataio.METRICS_HEADER, rows)
    print(f"eval: {len(rows)} rows -> {out}")
    return 0


# -- plot ------------------------------------------------------------------------


def _plot_history(plt, path, out_png):
    table = np.atleast_1d(np.genfromtxt(path, delimiter=",", names=True))
    names = table.dtype.names
    x = table[names[0]]
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    for col in names[1:]:
        y = table[col]
        if col.startswith("loss") and np.any(y > 0):
            ax.semilogy(x, np.maximum(y, 1e-300), label=col)
    ax.set_xlabel(names[0])
    ax.set_ylabel("loss")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return 1


def _plot_case(plt, cfg, name, m, ref, pred):
    """Field and error rasters plus a per-step error curve; 1d cases render
    as space-time images so the raster keeps one pixel per grid node."""
    _, out_names = dataio.CHANNEL_LAYOUTS[cfg.benchmark]
    lead = out_names[0]
    n = min(ref.n_states, pred.n_states) - 1
    if ref.fields[lead][0].ndim == 1:
        pimg, rimg = pred.fields[lead][:n + 1], ref.fields[lead][:n + 1]
    else:
        pimg, rimg = pred.fields[lead][n], ref.fields[lead][n]
    err = np.abs(pimg - rimg)
    base = os.path.join(_plots_dir(cfg), f"{name}-{m}")
    plt.imsave(f"{base}-{lead}.png", pimg, cmap="viridis", origin="lower")
    vmax = float(err.max())
    plt.imsave(f"{base}-error.png", err, cmap="gray", vmin=0.0,
               vmax=vmax if vmax > 0.0 else 1.0, origin="lower")

    pb = _state_block(pred, n)[0]
    rb = _state_block(ref, n)[0]
    axes = tuple(range(1, pb.ndim))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = 100.0 * np.sqrt(np.sum((pb - rb) ** 2, axis=axes)
                              / np.sum(rb ** 2, axis=axes))
    steps = np.arange(1, n + 1)
    dataio.write_csv(f"{base}-error.csv", ("step", "rel_l2_pct"),
                     list(zip(steps.tolist(), rel.tolist())))
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.plot(steps, rel)
    ax.set_xlabel("step")
    ax.set_ylabel("relative L2 (%)")
    fig.tight_layout()
    fig.savefig(f"{base}-error-curve.png", dpi=150)
    plt.close(fig)
    return 4


def cmd_plot(cfg, mode=None):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(_plots_dir(cfg), exist_ok=True)
    candidates = [mode] if mode is not None else list(MODES)
    made = 0
    for m in candidates:
        hist = os.path.join(cfg.out, f"history-{m}.csv")
        if os.path.exists(hist):
            made += _plot_history(plt, hist,
                                  os.path.join(_plots_dir(cfg), f"loss-{m}.png"))
    try:
        idx = _load_index(cfg)
    except ValueError:
        idx = None
    if idx is not None:
        for m in candidates:
            for name in idx["test"]:
                path = os.path.join(_rollout_dir(cfg), f"{name}-{m}.pft")
                if not os.path.exists(path):
                    continue
                ref = dataio.load_trajectory(_traj_path(cfg, name))
                pred = dataio.load_trajectory(path)
                made += _plot_case(plt, cfg, name, m, ref, pred)
    if made == 0:
        raise ValueError(f"invalid-input: nothing to plot under {cfg.out}")
    print(f"plot: {made} artifacts -> {_plots_dir(cfg)}")
    return 0


# -- entry point -----------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pfpino",
        description="Phase-field benchmark data, neural-operator training, "
                    "and evaluation reports.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("generate", "solve the benchmark and store trajectories"),
                       ("train", "fit an operator on stored trajectories"),
                       ("rollout", "autoregressively predict the test cases"),
                       ("eval", "score rollouts against the reference"),
                       ("plot", "render figures and error curves")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", default=None, help="INI overlay file")
        s.add_argument("--benchmark", default=None, choices=sorted(cf.DEFAULTS))
        s.add_argument("--mode", default=None, choices=("fno", "pino"))
        s.add_argument("--seed", default=None, type=int)
        s.add_argument("--out", default=None, help="run directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = cf.load_run_config(path=args.config, benchmark=args.benchmark,
                                 seed=args.seed, out=args.out, mode=args.mode)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "rollout":
            return cmd_rollout(cfg, args.mode)
        if args.command == "eval":
            return cmd_eval(cfg, args.mode)
        return cmd_plot(cfg, args.mode)
    except (ValueError, OSError, sv.SolverFailure, tr.TrainingAbort,
            fno.RolloutDivergence) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
