"""Training loops for the data-driven and physics-informed operator variants.

Losses are built on the autodiff tape: the data term is a plain MSE against
stored targets, the physics terms are mean-square PDE residuals of the
implicit transition from the input state to the model prediction, sharing
the discretisation in the residuals module. Loss components are balanced by
gradient norms with an EMA, optionally alternated with a staggered mask, and
optimised by Adam under an exponentially decaying learning rate.
"""

import dataclasses
import types

import numpy as np

from . import autodiff as ad
from . import dataio
from . import fno
from . import residuals as rs
from . import solvers as sv

N_EQUATIONS = {"corrosion1d": 2, "electropolish": 2,
               "solidification": 2, "spinodal": 1}

NORM_FLOOR = 1e-12   # gradient norms below this are clamped before weighting

# instrumentation for the mode contracts (data-only training never touches a
# residual; rollout fine-tuning never touches the data loss)
COUNTS = {"loss_data": 0, "loss_pde": 0}


def reset_counts():
    for key in COUNTS:
        COUNTS[key] = 0


class TrainingAbort(RuntimeError):
    pass


# -- loss balancing -------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class LossState:
    """Applied weights, the raw grad-norm weights behind them, and the EMA
    factor. Component 0 is the data term, the rest follow equation order."""

    weights: np.ndarray
    raw: np.ndarray
    alpha: float = 0.9


def initial_loss_state(n_components, alpha=0.9):
    if n_components < 1:
        raise ValueError("invalid-input: need at least one loss component")
    if not 0.0 <= alpha < 1.0:
        raise ValueError("invalid-input: alpha must lie in [0, 1)")
    ones = np.ones(n_components)
    return LossState(weights=ones, raw=ones.copy(), alpha=alpha)


def update_loss_weights(state, grad_norms):
    """Raw weight j is sum(norms)/norm_j, so every reweighted component pulls
    with the same effective gradient magnitude; an EMA smooths the update."""
    norms = np.maximum(np.asarray(grad_norms, dtype=np.float64), NORM_FLOOR)
    if norms.shape != state.weights.shape:
        raise ValueError("invalid-shape: one gradient norm per loss component")
    raw = norms.sum() / norms
    weights = state.alpha * state.weights + (1.0 - state.alpha) * raw
    return LossState(weights=weights, raw=raw, alpha=state.alpha)


def staggered_mask(step, n_switch):
    """Equation gate s = floor(step / (2 n_switch)) mod 2."""
    if n_switch < 1:
        raise ValueError("invalid-input: n_switch must be >= 1")
    return (step // (2 * n_switch)) % 2


# -- optimiser ------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class LrSchedule:
    initial: float = 1e-3
    decay: float = 0.95
    decay_step: int = 500
    floor: float = 1e-5

    def __post_init__(self):
        if self.initial <= 0 or not 0.0 < self.decay <= 1.0:
            raise ValueError("invalid-config: need initial > 0 and decay in (0, 1]")
        if self.decay_step < 1 or self.floor < 0:
            raise ValueError("invalid-config: need decay_step >= 1 and floor >= 0")

    def at_epoch(self, epoch):
        return max(self.floor, self.initial * self.decay ** (epoch // self.decay_step))


def _real_view(a):
    # complex parameters update through their interleaved (re, im) layout
    return a.view(np.float64) if a.dtype.kind == "c" else a


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(_real_view(p.value)) for p in self.params]
        self.v = [np.zeros_like(_real_view(p.value)) for p in self.params]

    def step(self, lr):
        if lr <= 0:
            raise ValueError("invalid-input: learning rate must be positive")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = _real_view(p.grad)
            if not np.all(np.isfinite(g)):
                raise TrainingAbort(f"training-abort: non-finite gradient in {p.name}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            _real_view(p.value)[...] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def global_grad_norm(model):
    total = 0.0
    for p in model.parameters():
        g = _real_view(p.grad)
        total += float(np.sum(g * g))
    return np.sqrt(total)


# -- loss terms -----------------------------------------------------------------

def loss_data(pred, target):
    """Mean squared error over every batch entry, channel and grid point."""
    COUNTS["loss_data"] += 1
    tgt = target.value if isinstance(target, ad.Tensor) else np.asarray(target)
    if pred.value.shape != tgt.shape:
        raise ValueError("invalid-shape: prediction and target disagree")
    return ad.mean(ad.square(pred - tgt))


def residual_mask(spec):
    """Rows pinned by Dirichlet conditions carry no PDE information; they are
    excluded from residual means, mirroring the solvers' constrained rows."""
    if spec.kind == "corrosion1d":
        m = np.ones(spec.grid[0])
        m[0] = m[-1] = 0.0
        return m
    if spec.kind == "electropolish":
        m = np.ones(spec.grid)
        m[0, :] = m[-1, :] = 0.0
        return m
    return None


def _masked_mean_square(r, mask):
    sq = ad.square(r)
    if mask is None:
        return ad.mean(sq)
    # zeroed rows contribute nothing; rescale to the mean over free rows
    return ad.affine(ad.mean(ad.const_mul(sq, mask)),
                     float(mask.size / mask.sum()))


def _sample_params(spec, input_values):
    """Physical parameters per batch row, recovered from the normalized
    parameter channel so shuffled multi-scenario batches stay exact."""
    name = dataio.PARAM_NORMS[spec.kind][0]
    idx = dataio.CHANNEL_LAYOUTS[spec.kind][0].index("param")
    sdim = len(spec.grid)
    norm = input_values[(slice(None), idx) + (0,) * sdim]
    value = dataio.denormalized_param(spec.kind, norm)
    fields = {f.name: getattr(spec.params, f.name)
              for f in dataclasses.fields(spec.params)}
    fields[name] = value.reshape((-1, 1) + (1,) * sdim)
    return types.SimpleNamespace(**fields)


def _uniform_spacing(spec):
    h = sv.grid_spacing(spec)
    if len(h) == 2 and abs(h[0] - h[1]) > 1e-12 * h[0]:
        raise ValueError("invalid-grid: residual stencils need square spacing")
    return float(h[0])


def loss_pde(inputs, pred, spec, state_dt=None):
    """Mean-square residual of the transition inputs -> pred, one scalar node
    per governing equation. inputs holds the step-n state plus static
    channels; pred lives on the tape."""
    COUNTS["loss_pde"] += 1
    x = inputs.value if isinstance(inputs, ad.Tensor) else np.asarray(inputs)
    in_names, out_names = dataio.CHANNEL_LAYOUTS[spec.kind]
    if x.ndim != 2 + len(spec.grid) or x.shape[1] != len(in_names):
        raise ValueError(f"invalid-shape: expected {len(in_names)} input "
                         f"channels for {spec.kind}")
    if pred.value.shape[1] != len(out_names):
        raise ValueError(f"invalid-shape: expected {len(out_names)} predicted "
                         f"channels for {spec.kind}")
    dt = spec.dt * spec.save_every if state_dt is None else float(state_dt)
    p = _sample_params(spec, x)
    mask = residual_mask(spec)

    def old(i):
        return x[:, i:i + 1]

    def new(i):
        return ad.channel_slice(pred, i, i + 1)

    if spec.kind in ("corrosion1d", "electropolish"):
        r_phase, r_transport = rs.residual_corrosion(
            old(0), old(1), new(0), new(1), p, dt, _uniform_spacing(spec))
        return (_masked_mean_square(r_phase, mask),
                _masked_mean_square(r_transport, mask))
    if spec.kind == "solidification":
        r_phase, r_heat = rs.residual_solidification(
            old(0), old(1), new(0), new(1), p, dt, _uniform_spacing(spec))
        return (_masked_mean_square(r_phase, mask),
                _masked_mean_square(r_heat, mask))
    r = rs.residual_spinodal(old(0), new(0), p, dt, float(spec.extent[-1]))
    return (_masked_mean_square(r, mask),)


# -- training loop --------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class TrainConfig:
    mode: str = "pino"        # "fno" trains on data only
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    n_switch: int = 0         # 0 disables staggered equation switching
    alpha_w: float = 0.9
    balance: bool = True      # grad-norm loss balancing (pino mode)
    lr: LrSchedule = dataclasses.field(default_factory=LrSchedule)

    def __post_init__(self):
        if self.mode not in ("fno", "pino"):
            raise ValueError(f"invalid-config: unknown mode {self.mode!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("invalid-config: epochs and batch_size must be >= 1")
        if self.n_switch < 0:
            raise ValueError("invalid-config: n_switch must be >= 0")


def _component_grad_norms(model, inputs, targets, spec, n_eq):
    """One forward pass, one backward sweep per loss component."""
    tape = ad.Tape()
    nodes = model.bind(tape)
    x = tape.tensor(inputs)
    pred = fno.fno_apply(model.config, nodes, x)
    parts = [loss_data(pred, targets)]
    parts.extend(loss_pde(x, pred, spec))
    norms = []
    for part in parts:
        model.zero_grad()
        tape.backward(part)
        norms.append(global_grad_norm(model))
    model.zero_grad()
    tape.release()
    return np.asarray(norms)


def _gates(step, n_switch, n_eq):
    if n_switch == 0 or n_eq < 2:
        return (1.0,) * n_eq
    s = float(staggered_mask(step, n_switch))
    return (s, 1.0 - s)


def train(model, pairs, spec, config, on_epoch=None):
    """Mini-batch optimisation; returns per-epoch history rows laid out as
    dataio.HISTORY_HEADER. Weights are re-balanced once per epoch from the
    first batch of the epoch (epoch 0 keeps the unit weights)."""
    if pairs.kind != spec.kind:
        raise ValueError("invalid-input: dataset and spec benchmarks differ")
    if len(pairs) < 1:
        raise ValueError("invalid-input: empty training set")
    pino = config.mode == "pino"
    n_eq = N_EQUATIONS[spec.kind] if pino else 0
    lstate = initial_loss_state(1 + n_eq, config.alpha_w)
    opt = Adam(model.parameters())
    rng = np.random.default_rng(config.seed)
    history = []
    step = 0
    for epoch in range(config.epochs):
        lr = config.lr.at_epoch(epoch)
        order = rng.permutation(len(pairs))
        if pino and config.balance and epoch > 0:
            first = order[:config.batch_size]
            norms = _component_grad_norms(model, pairs.inputs[first],
                                          pairs.targets[first], spec, n_eq)
            lstate = update_loss_weights(lstate, norms)
        sums = np.zeros(3)
        n_batches = 0
        for lo in range(0, len(pairs), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            tape = ad.Tape()
            nodes = model.bind(tape)
            x = tape.tensor(pairs.inputs[idx])
            pred = fno.fno_apply(model.config, nodes, x)
            parts = [loss_data(pred, pairs.targets[idx])]
            if pino:
                parts.extend(loss_pde(x, pred, spec))
            total = ad.affine(parts[0], float(lstate.weights[0]))
            if pino:
                gates = _gates(step, config.n_switch, n_eq)
                for j, gate in enumerate(gates):
                    if gate:
                        total = ad.add(total, ad.affine(
                            parts[1 + j], gate * float(lstate.weights[1 + j])))
            model.zero_grad()
            tape.backward(total)
            opt.step(lr)
            tape.release()
            step += 1
            for j, part in enumerate(parts):
                sums[j] += part.value.item()
            n_batches += 1
        means = sums / n_batches
        w = np.zeros(3)
        w[:1 + n_eq] = lstate.weights
        row = (epoch, means[0], means[1], means[2], w[0], w[1], w[2], lr)
        history.append(row)
        if on_epoch is not None:
            on_epoch(epoch, model, row)
    return history


# -- rollout fine-tuning --------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class FinetuneConfig:
    iters: int = 100     # optimizer steps
    lr: float = 1e-4

    def __post_init__(self):
        if self.iters < 1 or self.lr <= 0:
            raise ValueError("invalid-config: need iters >= 1 and lr > 0")


def reduced_lr(schedule, epochs, factor=0.1):
    """Default fine-tuning rate: a fraction of the final training rate."""
    return factor * schedule.at_epoch(max(epochs - 1, 0))


def finetune_rollout(model, initial_state, static_channels, n_steps, spec,
                     config):
    """Minimise PDE residual means over the model's own n_steps-long rollout;
    gradients flow through the whole recursion. No reference data involved.
    Returns the per-iteration loss history; the model mutates in place."""
    if n_steps < 1:
        raise ValueError("invalid-input: n_steps must be >= 1")
    state0 = np.asarray(initial_state, dtype=np.float64)
    static = np.asarray(static_channels, dtype=np.float64)
    n_eq = N_EQUATIONS[spec.kind]
    opt = Adam(model.parameters())
    history = []
    for _ in range(config.iters):
        tape = ad.Tape()
        nodes = model.bind(tape)
        state = tape.tensor(state0)
        static_node = tape.tensor(static)
        acc = None
        for k in range(n_steps):
            inp = ad.channel_concat([state, static_node])
            pred = fno.fno_apply(model.config, nodes, inp)
            if not np.all(np.isfinite(pred.value)):
                raise fno.RolloutDivergence(k)
            try:
                parts = loss_pde(inp, pred, spec)
            except ValueError as err:
                # finite states can still overflow the squared residuals
                if "non-finite" in str(err):
                    raise fno.RolloutDivergence(k) from None
                raise
            per = parts[0]
            for extra in parts[1:]:
                per = ad.add(per, extra)
            if n_eq > 1:
                per = ad.affine(per, 1.0 / n_eq)
            acc = per if acc is None else ad.add(acc, per)
            state = pred
        loss = ad.affine(acc, 1.0 / n_steps)
        model.zero_grad()
        tape.backward(loss)
        opt.step(config.lr)
        tape.release()
        history.append(float(loss.value))
    return history
