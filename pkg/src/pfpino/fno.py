"""Fourier neural operator: lifting, spectral convolution blocks, projection.

One step maps the current state channels (fields + scenario parameter +
coordinates) to the fields at the next time level; trajectories come from
feeding predictions back in autoregressively. All parameters live in a flat
name -> Parameter dict so checkpointing and the optimizer can walk them in a
stable order.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class FnoConfig:
    in_channels: int
    out_channels: int
    depth: int
    width: int
    modes: tuple
    activation: str = "gelu"
    padding: int = 8   # cells appended per non-periodic spatial axis, 0 = periodic

    def __post_init__(self):
        modes = (self.modes,) if isinstance(self.modes, int) else tuple(
            int(m) for m in self.modes)
        object.__setattr__(self, "modes", modes)
        if self.depth < 1:
            raise ValueError("invalid-config: depth must be >= 1")
        if not self.in_channels >= self.out_channels >= 1:
            raise ValueError("invalid-config: need in_channels >= out_channels >= 1")
        if self.width < 1:
            raise ValueError("invalid-config: width must be >= 1")
        if len(modes) not in (1, 2) or any(m < 1 for m in modes):
            raise ValueError("invalid-config: modes must be 1 or 2 positive counts")
        if self.activation not in ("gelu", "relu"):
            raise ValueError(f"invalid-config: unknown activation {self.activation!r}")
        if self.padding < 0:
            raise ValueError("invalid-config: padding must be >= 0")


def _check_modes(modes, extents):
    # the trailing axis carries the half spectrum (n//2 + 1 bins); leading
    # axes hold two mirrored corners that must not collide
    for i, (m, n) in enumerate(zip(modes, extents)):
        limit = n // 2 + 1 if i == len(modes) - 1 else n // 2
        if m > limit:
            raise ValueError(f"invalid-config: {m} modes exceed extent {n} "
                             f"(limit {limit})")


class FnoModel:
    """Parameter container. Values mutate during training, shapes never do."""

    def __init__(self, config, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        w, cin, cout = config.width, config.in_channels, config.out_channels

        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, shape)

        def spectral(shape):
            scale = 1.0 / w ** 2
            parts = rng.uniform(-scale, scale, (2,) + shape)
            return parts[0] + 1j * parts[1]

        params = {}

        def add(name, value):
            params[name] = ad.Parameter(value, name=name)

        add("p.weight", uniform((w, cin), cin))
        add("p.bias", np.zeros(w))
        corners = 1 if len(config.modes) == 1 else 2
        rshape = (w, w) + config.modes
        for layer in range(config.depth):
            for c in range(corners):
                add(f"block{layer}.r{c}", spectral(rshape))
            add(f"block{layer}.w", uniform((w, w), w))
            add(f"block{layer}.b", np.zeros(w))
        add("q1.weight", uniform((2 * w, w), w))
        add("q1.bias", np.zeros(2 * w))
        add("q2.weight", uniform((cout, 2 * w), 2 * w))
        add("q2.bias", np.zeros(cout))
        self.params = params

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def parameter_count(self):
        return sum(int(p.value.size) for p in self.params.values())

    def bind(self, tape):
        """Register every parameter on the tape; returns name -> node."""
        return {name: tape.param(p) for name, p in self.params.items()}


def spectral_conv(v, r_parts, modes):
    """Dense channel mixing on the retained low-frequency modes of v.

    v: (batch, width, *spatial) node; r_parts: one complex weight node per
    spectral corner (one for 1d, two for 2d where the leading axis keeps both
    signed frequency blocks); modes: retained count per spatial axis.
    Truncated modes contribute exactly zero.
    """
    sdim = len(modes)
    extents = v.value.shape[-sdim:]
    _check_modes(modes, extents)
    axes = tuple(range(v.value.ndim - sdim, v.value.ndim))
    if sdim == 1:
        corners = [((0, modes[0]),)]
    else:
        m1, m2 = modes
        n1 = extents[0]
        corners = [((0, m1), (0, m2)), ((n1 - m1, n1), (0, m2))]
    if len(r_parts) != len(corners):
        raise ValueError(f"invalid-config: expected {len(corners)} spectral "
                         f"weight blocks, got {len(r_parts)}")
    spec = ad.fft_forward(v, axes=axes)
    out = ad.mode_mix(spec, r_parts[0], corners[0])
    for r, corner in zip(r_parts[1:], corners[1:]):
        out = ad.add(out, ad.mode_mix(spec, r, corner))
    return ad.fft_inverse(out, extents, axes=axes)


def fno_apply(config, nodes, x):
    """Forward pass with parameters already bound to the input's tape."""
    sdim = len(config.modes)
    if x.value.ndim != 2 + sdim:
        raise ValueError(f"invalid-input: expected (batch, channel, {sdim} spatial) "
                         f"input, got shape {x.value.shape}")
    if x.value.shape[1] != config.in_channels:
        raise ValueError(f"invalid-input: model expects {config.in_channels} "
                         f"channels, got {x.value.shape[1]}")
    act = ad.gelu if config.activation == "gelu" else ad.relu
    spatial = x.value.shape[2:]
    v = ad.channel_linear(x, nodes["p.weight"], nodes["p.bias"])
    if config.padding > 0:
        v = ad.pad_spatial(v, (config.padding,) * sdim)
    for layer in range(config.depth):
        r_parts = [nodes[f"block{layer}.r0"]]
        if sdim == 2:
            r_parts.append(nodes[f"block{layer}.r1"])
        conv = spectral_conv(v, r_parts, config.modes)
        skip = ad.channel_linear(v, nodes[f"block{layer}.w"], nodes[f"block{layer}.b"])
        v = act(ad.add(skip, conv))
    if config.padding > 0:
        v = ad.crop_spatial(v, spatial)
    v = act(ad.channel_linear(v, nodes["q1.weight"], nodes["q1.bias"]))
    return ad.channel_linear(v, nodes["q2.weight"], nodes["q2.bias"])


def fno_step(model, x):
    """One-step prediction. Tensor input stays on its tape; arrays round-trip
    through a throwaway tape and come back as arrays."""
    if isinstance(x, ad.Tensor):
        return fno_apply(model.config, model.bind(x.tape), x)
    tape = ad.Tape()
    node = tape.tensor(np.asarray(x, dtype=np.float64))
    out = fno_apply(model.config, model.bind(tape), node).value
    tape.release()
    return out


class RolloutDivergence(RuntimeError):
    """An autoregressive rollout produced a non-finite state."""

    def __init__(self, step):
        super().__init__(f"rollout-divergence: non-finite state at step {step}")
        self.step = step


def rollout(model, initial_state, static_channels, n_steps):
    """Recursive one-step predictions; returns (n_steps + 1, batch, out, *spatial).

    static_channels (scenario parameter + coordinates) are re-concatenated
    unchanged behind the predicted fields at every step.
    """
    if n_steps < 1:
        raise ValueError("invalid-input: n_steps must be >= 1")
    cfg = model.config
    state = np.asarray(initial_state, dtype=np.float64)
    static = np.asarray(static_channels, dtype=np.float64)
    sdim = len(cfg.modes)
    if state.ndim != 2 + sdim or state.shape[1] != cfg.out_channels:
        raise ValueError(f"invalid-input: initial state must be (batch, "
                         f"{cfg.out_channels}, {sdim} spatial), got {state.shape}")
    want_static = (state.shape[0], cfg.in_channels - cfg.out_channels) + state.shape[2:]
    if static.shape != want_static:
        raise ValueError(f"invalid-input: static channels must be {want_static}, "
                         f"got {static.shape}")
    states = np.empty((n_steps + 1,) + state.shape)
    states[0] = state
    for i in range(n_steps):
        state = fno_step(model, np.concatenate([state, static], axis=1))
        if not np.all(np.isfinite(state)):
            raise RolloutDivergence(i + 1)
        states[i + 1] = state
    return states
