"""End-to-end acceptance suite.

Each test pins one advertised guarantee of the package at its stated
tolerance: gradient correctness, solver physics, solver/residual agreement,
metric oracles, overfit sanity, the scaled corrosion benchmark, the spinodal
two-stage protocol, loss balancing, and bit-reproducibility of the CLI
pipeline. The training tests run scaled-down instances sized for a single
CPU; instance parameters are spelled out inline.
"""

import os
import subprocess
import sys

import numpy as np

import pfpino.autodiff as ad
import pfpino.dataio as dataio
import pfpino.fno as fno
import pfpino.metrics as mt
import pfpino.residuals as rs
import pfpino.solvers as sv
import pfpino.training as tr


def first_state(traj):
    """Initial dynamic fields and the static channels, batched for rollout."""
    in_names, out_names = dataio.CHANNEL_LAYOUTS[traj.spec.kind]
    stat = dataio.static_channels(traj.spec)
    state = np.stack([traj.fields[n][0] for n in out_names])[None]
    static = np.stack([stat[n] for n in in_names[len(out_names):]])[None]
    return state, static


def rollout_rel_l2(model, ref):
    """Mean relative L2 (percent) of a full autoregressive rollout against
    the reference trajectory, scored over states 1..T."""
    _, out_names = dataio.CHANNEL_LAYOUTS[ref.spec.kind]
    state, static = first_state(ref)
    states = fno.rollout(model, state, static, ref.n_states - 1)
    refb = np.stack([ref.fields[n][1:] for n in out_names], axis=1)
    _, rel = mt.relative_l2(states[1:, 0][None], refb[None])
    return rel


# ---------------------------------------------------------------- gradients


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    worst = {}

    a = rng.standard_normal((2, 2, 5)) + 0.1
    b = rng.standard_normal((2, 2, 5)) + 2.0  # keep |b| away from 0 for div
    arr = rng.standard_normal((2, 2, 5))
    mat = rng.standard_normal((5, 5))
    elementwise = {
        "add": lambda x, y: x + y,
        "sub": lambda x, y: x - y,
        "mul": lambda x, y: x * y,
        "div": lambda x, y: x / y,
        "affine": lambda x, y: ad.affine(x, 1.7, -0.3) + y,
        "square": lambda x, y: ad.square(x) + y,
        "gelu": lambda x, y: ad.gelu(x * y),
        "relu": lambda x, y: ad.relu(x * y),
        "const_mul": lambda x, y: ad.const_mul(x, arr) + y,
        "const_add": lambda x, y: ad.const_add(x * y, arr),
        "pad_spatial": lambda x, y: ad.pad_spatial(x * y, (3,)),
        "crop_spatial": lambda x, y: ad.crop_spatial(x * y, (3,)),
        "channel_slice": lambda x, y: ad.channel_slice(x * y, 0, 1),
        "channel_concat": lambda x, y: ad.channel_concat([x, y, x * y]),
        "matrix_apply": lambda x, y: ad.matrix_apply(x * y, mat, axis=2),
    }
    for name, expr in elementwise.items():
        def builder(tape, leaves, expr=expr):
            return ad.mean(ad.square(expr(*leaves)))

        worst[name] = ad.check_gradient(builder, [a, b])

    def lin_builder(tape, leaves):
        return ad.mean(ad.square(ad.channel_linear(*leaves)))

    worst["channel_linear"] = ad.check_gradient(
        lin_builder, [rng.standard_normal((2, 3, 4)),
                      rng.standard_normal((2, 3)), rng.standard_normal(2)])

    def fft_builder(tape, leaves):
        spec = ad.fft_forward(leaves[0], axes=(-2, -1))
        return ad.mean(ad.square(ad.fft_inverse(spec, (6, 5), axes=(-2, -1))))

    worst["fft_roundtrip"] = ad.check_gradient(
        fft_builder, [rng.standard_normal((1, 2, 6, 5))])

    r = (rng.standard_normal((2, 2, 2, 2))
         + 1j * rng.standard_normal((2, 2, 2, 2))) * 0.3

    def mix_builder(tape, leaves):
        spec = ad.fft_forward(leaves[0], axes=(-2, -1))
        mixed = ad.mode_mix(spec, leaves[1], ((0, 2), (0, 2)))
        return ad.mean(ad.square(ad.fft_inverse(mixed, (6, 6), axes=(-2, -1))))

    worst["mode_mix"] = ad.check_gradient(
        mix_builder, [rng.standard_normal((2, 2, 6, 6)), r])

    # composed check: a one-step operator prediction scored by the data and
    # PDE-residual losses, differentiated through the input fields and every
    # model parameter at once
    spec = sv.corrosion_1d_spec(n_nodes=21, n_steps=1)
    pairs = dataio.build_pairs([sv.solve(spec)])
    cfg = fno.FnoConfig(5, 2, depth=1, width=2, modes=(3,), padding=2)
    model = fno.FnoModel(cfg, seed=11)
    names = list(model.params)
    target = pairs.targets[:1]

    def composed(tape, leaves):
        nodes = dict(zip(names, leaves[1:]))
        pred = fno.fno_apply(cfg, nodes, leaves[0])
        total = tr.loss_data(pred, target)
        for part in tr.loss_pde(leaves[0], pred, spec):
            total = ad.add(total, part)
        return total

    worst["fno_with_residual_loss"] = ad.check_gradient(
        composed, [pairs.inputs[:1]] + [model.params[n].value for n in names])

    bad = {k: v for k, v in worst.items() if not v <= 1e-5}
    assert not bad, f"gradient checks above 1e-5: {bad}"


# ---------------------------------------------------- spinodal solver physics


def test_spinodal_solver_conserves_dissipates_and_converges():
    spec = sv.spinodal_spec()  # the default 100-step run
    c = sv.solve(spec).fields["c"]
    drift = np.max(np.abs(c.mean(axis=(1, 2)) - c[0].mean()))
    assert drift <= 1e-12, drift
    energy = np.array([sv.spinodal_energy(ci, spec.params.grad_coeff)
                       for ci in c])
    assert np.all(np.diff(energy)[5:] <= 1e-8)

    # dt-halving at fixed horizon; band-limited seed and amplitude 0.05 keep
    # the truncation signal above the Picard floor (defaults leave it ~6e-12)
    term = {}
    for fac in (1, 2, 4):
        s = sv.spinodal_spec(pert_amp=0.05, k_limit=8, dt=5e-5 / fac,
                             n_steps=50 * fac, picard_tol=1e-12)
        term[fac] = sv.solve(s).fields["c"][-1]
    e1 = np.max(np.abs(term[1] - term[2]))
    e2 = np.max(np.abs(term[2] - term[4]))
    assert 3.3 <= e1 / e2 <= 4.7, e1 / e2


# ------------------------------------------------------- residual consistency


def test_solver_steps_satisfy_the_residual_operators():
    # corrosion-1d: converged Newton step, free (non-Dirichlet) rows
    spec = sv.corrosion_1d_spec(n_steps=2)
    traj = sv.solve(spec)
    phi, c = traj.fields["phi"], traj.fields["c"]
    r_ph, r_tr = rs.residual_corrosion(phi[0], c[0], phi[1], c[1],
                                       spec.params, spec.dt,
                                       sv.grid_spacing(spec)[0])
    assert np.max(np.abs(r_ph[1:-1])) <= 10 * sv.NEWTON_TOL
    assert np.max(np.abs(r_tr[1:-1])) <= 10 * sv.NEWTON_TOL

    # electro-polish: flat-interface column instance, free interior rows
    ep = sv.electropolish_spec(pert_sigma=0.0, nx=12, ny=26, width=11e-6,
                               height=25e-6, interface=12.5e-6, n_steps=2)
    traj = sv.solve(ep)
    phi, c = traj.fields["phi"], traj.fields["c"]
    r_ph, r_tr = rs.residual_corrosion(phi[0], c[0], phi[1], c[1],
                                       ep.params, ep.dt,
                                       sv.grid_spacing(ep)[0])
    assert np.max(np.abs(r_ph[1:-1])) <= 10 * sv.NEWTON_TOL
    assert np.max(np.abs(r_tr[1:-1])) <= 10 * sv.NEWTON_TOL

    # solidification: the fully implicit single-step mode and its tolerance
    sol = sv.solidification_spec()
    ic = sv.make_initial_condition(sol)
    temp0 = ic["temp"].astype(np.float64)
    phi1, temp1, _ = sv.solidification_implicit_step(sol, ic["phi"], temp0,
                                                     tol=1e-9)
    r_ph, r_t = rs.residual_solidification(ic["phi"], temp0, phi1, temp1,
                                           sol.params, sol.dt,
                                           sv.grid_spacing(sol)[0])
    assert max(np.max(np.abs(r_ph)), np.max(np.abs(r_t))) <= 10 * 1e-9

    # spinodal: the implicit-endpoint residual of one Crank-Nicolson step is
    # a scheme artifact that must shrink with dt and stay under the bound
    # estimated from the halved step
    vals = {}
    for fac in (1, 2, 4):
        sp = sv.spinodal_spec(k_limit=3, picard_tol=1e-12, dt=5e-5 / fac,
                              n_steps=1)
        t = sv.solve(sp)
        r = rs.residual_spinodal(t.fields["c"][0], t.fields["c"][1],
                                 sp.params, sp.dt, 1.0)
        vals[fac] = np.max(np.abs(r))
    assert 1.5 <= vals[2] / vals[4] <= 4.5, vals
    assert vals[1] <= 10.0 * (1e-12 + 4.0 * vals[2]), vals


# ------------------------------------------------------------- metric oracles


def test_metrics_match_their_oracles():
    # relative L2 against a scalar loop
    rng = np.random.default_rng(2)
    ref = rng.normal(size=(3, 4, 2, 7, 5))
    pred = ref + 0.1 * rng.normal(size=ref.shape)
    table, mean = mt.relative_l2(pred, ref)
    want = np.zeros((3, 2))
    for ic in range(3):
        for jc in range(2):
            diff = pred[ic, :, jc] - ref[ic, :, jc]
            want[ic, jc] = 100.0 * (np.sqrt(np.sum(diff ** 2))
                                    / np.sqrt(np.sum(ref[ic, :, jc] ** 2)))
    assert np.max(np.abs(table - want)) < 1e-12
    assert abs(mean - want.mean()) < 1e-12

    # interface extraction: circle level set lands on the true radius, and
    # the seeded 1d front lands at the construction position
    n = 128
    x = np.linspace(-0.5, 0.5, n)
    f = np.hypot(x[None, :], x[:, None]) - 0.3
    pts = mt.extract_interface(f, 0.0, (x, x))
    assert pts.shape[0] > 100
    radii = np.hypot(pts[:, 0], pts[:, 1])
    assert np.max(np.abs(radii - 0.3)) < (x[1] - x[0]) / 10.0
    spc = sv.corrosion_1d_spec()
    phi0 = sv.make_initial_condition(spc)["phi"]
    (xg,) = sv.grid_coords(spc)
    front = mt.extract_interface(phi0, 0.5, (xg,))
    assert front.shape == (1, 1)
    assert abs(front[0, 0] - 35e-6) < sv.grid_spacing(spc)[0]

    # Hausdorff against the brute-force double loop
    a = rng.uniform(size=(120, 2))
    b = rng.uniform(size=(120, 2))
    got = mt.hausdorff_relative(a, b, 0.05)
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    want_h = max(d.min(axis=1).max(), d.min(axis=0).max()) / 0.05
    assert abs(got - want_h) < 1e-12

    # structure factor: single-mode shell value, then Parseval closure
    n = 64
    xs = np.arange(n) / n
    c1 = np.cos(2 * np.pi * 3 * xs)[None, :] * np.ones((n, 1))
    bins, s = mt.structure_factor(c1)
    shell = n * n / 40.0  # two spikes of (n^2/2)^2 in the 20-mode |k|=3 shell
    assert abs(s[2] - shell) < 1e-9 * shell
    assert np.max(np.abs(np.delete(s, 2))) < 1e-12
    c2 = np.zeros((n, n))
    for _ in range(60):
        kx, ky = rng.integers(-23, 24, size=2)
        if kx == 0 and ky == 0:
            kx = 1
        c2 += rng.normal() * np.cos(
            2 * np.pi * (kx * xs[None, :] + ky * xs[:, None])
            + rng.uniform(0, 2 * np.pi))
    bins, s = mt.structure_factor(c2)
    kx, ky = np.meshgrid(np.arange(-n // 2, n // 2),
                         np.arange(-n // 2, n // 2))
    mag = np.hypot(kx, ky).ravel()
    counts = np.array([np.sum((b <= mag) & (mag < b + 1)) for b in bins])
    total = float(np.sum(counts * s))
    assert abs(total - c2.var() * n * n) < 1e-8 * c2.var() * n * n


# -------------------------------------------------------------- overfit sanity


def test_pino_overfits_a_single_pair():
    spec = sv.corrosion_1d_spec(n_steps=1)
    pairs = dataio.build_pairs([sv.solve(spec)])
    cfg = fno.FnoConfig(5, 2, depth=3, width=16, modes=(8,),
                        activation="relu", padding=27)
    model = fno.FnoModel(cfg, seed=0)
    tcfg = tr.TrainConfig(mode="pino", epochs=2000, batch_size=1, seed=0)
    tr.train(model, pairs, spec, tcfg)
    pred = fno.fno_step(model, pairs.inputs)
    _, rel = mt.relative_l2(pred[:, None], pairs.targets[:, None])
    assert rel < 0.1, rel  # percent


# ------------------------------------------------- scaled corrosion benchmark


def test_pino_beats_fno_on_held_out_corrosion():
    train_L = [1e-9, 1e-8, 1e-7, 1e-5, 1.0]
    held_L = [5e-9, 2.5e-8, 5e-7]
    trajs = [sv.solve(sv.corrosion_1d_spec(kinetics=L)) for L in train_L]
    held = [sv.solve(sv.corrosion_1d_spec(kinetics=L)) for L in held_L]
    pairs = dataio.build_pairs(trajs)
    spec = trajs[0].spec
    cfg = fno.FnoConfig(5, 2, depth=3, width=16, modes=(8,),
                        activation="relu", padding=27)
    med = {}
    for mode in ("fno", "pino"):
        errs = []
        for seed in (0, 1, 2):
            model = fno.FnoModel(cfg, seed=seed)
            tcfg = tr.TrainConfig(mode=mode, epochs=1500, batch_size=25,
                                  seed=seed, n_switch=1250,
                                  lr=tr.LrSchedule(1e-3, 0.85, 100, 1e-5))
            tr.train(model, pairs, spec, tcfg)
            errs.append(np.mean([rollout_rel_l2(model, t) for t in held]))
        med[mode] = float(np.median(errs))
    assert med["pino"] < med["fno"], med
    assert med["pino"] <= 5.0, med


# ------------------------------------------------- spinodal two-stage protocol


def test_spinodal_rollout_finetuning_improves_the_model():
    train_m = (0.6, 0.8, 1.2, 1.4)
    trajs = [sv.solve(sv.spinodal_spec(mobility=m, seed=i, n=32, k_limit=8))
             for i, m in enumerate(train_m)]
    held = sv.solve(sv.spinodal_spec(mobility=1.0, seed=100, n=32, k_limit=8))
    pairs = dataio.build_pairs(trajs)
    spec = trajs[0].spec
    cfg = fno.FnoConfig(4, 1, depth=3, width=16, modes=(8, 8),
                        activation="relu", padding=0)
    model = fno.FnoModel(cfg, seed=0)
    schedule = tr.LrSchedule()
    tcfg = tr.TrainConfig(mode="fno", epochs=800, batch_size=100, seed=0,
                          lr=schedule)
    tr.train(model, pairs, spec, tcfg)
    stage1 = rollout_rel_l2(model, held)

    state, static = first_state(held)
    fcfg = tr.FinetuneConfig(iters=100, lr=tr.reduced_lr(schedule, 800))
    hist = tr.finetune_rollout(model, state, static, held.n_states - 1, spec,
                               fcfg)
    assert all(hist[i + 1] < hist[i] for i in range(9)), hist[:10]
    tuned = rollout_rel_l2(model, held)
    assert tuned < stage1, (tuned, stage1)


# ------------------------------------------------------ grad-norm balancing


def test_balanced_weights_equalize_effective_gradients():
    spec = sv.corrosion_1d_spec(n_steps=8)
    pairs = dataio.build_pairs([sv.solve(spec)])
    cfg = fno.FnoConfig(5, 2, depth=2, width=8, modes=(6,), padding=3)
    model = fno.FnoModel(cfg, seed=3)
    opt = tr.Adam(model.parameters())
    lstate = tr.initial_loss_state(3, alpha=0.9)
    raw_seen = [np.ones(3)]  # the recurrence starts from unit weights
    rng = np.random.default_rng(0)
    for _ in range(6):
        idx = rng.permutation(len(pairs))[:4]
        norms = tr._component_grad_norms(model, pairs.inputs[idx],
                                         pairs.targets[idx], spec, 2)
        assert np.all(norms > tr.NORM_FLOOR)
        lstate = tr.update_loss_weights(lstate, norms)
        eff = lstate.raw * norms
        assert np.ptp(eff) <= 1e-12 * eff.mean(), eff
        raw_seen.append(lstate.raw)
        hist = np.stack(raw_seen)
        assert np.all(lstate.weights >= hist.min(axis=0) - 1e-12)
        assert np.all(lstate.weights <= hist.max(axis=0) + 1e-12)

        # a couple of real optimisation steps so the next norms differ
        for _ in range(2):
            tape = ad.Tape()
            nodes = model.bind(tape)
            x = tape.tensor(pairs.inputs[idx])
            pred = fno.fno_apply(model.config, nodes, x)
            total = ad.affine(tr.loss_data(pred, pairs.targets[idx]),
                              float(lstate.weights[0]))
            for j, part in enumerate(tr.loss_pde(x, pred, spec)):
                total = ad.add(total, ad.affine(part,
                                                float(lstate.weights[1 + j])))
            model.zero_grad()
            tape.backward(total)
            opt.step(1e-3)
            tape.release()


# ----------------------------------------------------------- CLI determinism


RUN_CLI = "import sys; from pfpino.cli import main; sys.exit(main(sys.argv[1:]))"

PIPELINE_INI = """\
[run]
benchmark = corrosion1d
seed = 0

[generate]
train_values = 1e-9, 1e-7
test_values = 1e-8
n_nodes = 21
n_steps = 10

[model]
depth = 2
width = 8
modes = 5
activation = relu
padding = 7

[train]
epochs = 30
batch_size = 10

[eval]
rollout_steps = 10
"""


def test_cli_pipeline_is_byte_reproducible(tmp_path):
    ini = tmp_path / "bench.ini"
    ini.write_text(PIPELINE_INI)
    env = dict(os.environ, PFPINO_THREADS="1")

    def run(out):
        for cmd in (["generate"], ["train", "--mode", "fno"],
                    ["train", "--mode", "pino"], ["rollout"], ["eval"]):
            proc = subprocess.run(
                [sys.executable, "-c", RUN_CLI, *cmd,
                 "--config", str(ini), "--out", str(out)],
                capture_output=True, text=True, env=env)
            assert proc.returncode == 0, proc.stderr

    a, b = tmp_path / "a", tmp_path / "b"
    run(a)
    run(b)
    names = sorted(p.name for p in a.glob("model-*.pft"))
    assert names == ["model-fno.pft", "model-pino.pft"]
    for name in names + ["history-fno.csv", "history-pino.csv",
                         "metrics.csv"]:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
