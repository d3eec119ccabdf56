"""Trajectory and checkpoint persistence plus one-step sample assembly.

The on-disk tensor container is a sequential binary format: magic "PFT1",
u64 entry count, then per entry a u64 name length, the UTF-8 name, u64 rank,
u64 extents, and the row-major float64 payload. All integers and floats are
little-endian. A JSON sidecar (same path + ".json") carries the metadata
needed to rebuild specs and models.
"""

import dataclasses
import json
import struct

import numpy as np

from . import fno
from . import solvers as sv

MAGIC = b"PFT1"

# per-benchmark channel assembly: state fields, the normalized scalar
# parameter as a constant field, coordinates, and a constant-one filler
# where the published channel count asks for five inputs on a 1d benchmark
CHANNEL_LAYOUTS = {
    "corrosion1d": (("phi", "c", "param", "x", "one"), ("phi", "c")),
    "electropolish": (("phi", "c", "param", "x", "y"), ("phi", "c")),
    "solidification": (("phi", "temp", "param", "x", "y"), ("phi", "temp")),
    "spinodal": (("c", "param", "x", "y"), ("c",)),
}

# which params field feeds the parameter channel, its scale, and the range
# mapped onto [0, 1]
PARAM_NORMS = {
    "corrosion1d": ("kinetics", "log10", 1.0e-9, 1.0),
    "electropolish": ("kinetics", "log10", 1.0e-9, 1.0),
    "solidification": ("latent", "linear", 0.8, 1.6),
    "spinodal": ("mobility", "linear", 0.5, 1.5),
}

HISTORY_HEADER = ("epoch", "loss_data", "loss_pde_1", "loss_pde_2",
                  "w_d", "w_p1", "w_p2", "lr")
METRICS_HEADER = ("benchmark", "case", "model", "rel_l2_pct",
                  "rel_hausdorff", "extra")


# -- tensor container -----------------------------------------------------------

def save_container(path, entries):
    """Write a name -> float64 ndarray mapping; insertion order is kept."""
    chunks = [MAGIC, struct.pack("<Q", len(entries))]
    for name, arr in entries.items():
        if not isinstance(name, str) or not name:
            raise ValueError("invalid-input: entry names must be non-empty strings")
        a = np.asarray(arr)
        if a.dtype.kind == "c":
            raise ValueError("invalid-input: complex entries must be split "
                             "into real parts")
        a = np.asarray(a, dtype="<f8")  # tobytes() below serializes C order
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<Q", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<Q", a.ndim))
        if a.ndim:
            chunks.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        chunks.append(a.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_container(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValueError("format-error: bad magic")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise ValueError("format-error: truncated container")
        out = raw[pos:pos + n]
        pos += n
        return out

    (count,) = struct.unpack("<Q", take(8))
    entries = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<Q", take(8))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8))
        extents = take(8 * rank)
        shape = struct.unpack(f"<{rank}Q", extents) if rank else ()
        n_items = 1
        for s in shape:
            n_items *= s
        payload = take(8 * n_items)
        if name in entries:
            raise ValueError(f"format-error: duplicate entry name {name!r}")
        entries[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    if pos != len(raw):
        raise ValueError("format-error: trailing bytes")
    return entries


# -- trajectory persistence -----------------------------------------------------

def _spec_to_dict(spec):
    d = dataclasses.asdict(spec)
    d["params"] = dataclasses.asdict(spec.params)
    return d


def _spec_from_dict(d):
    d = dict(d)
    kind = d["kind"]
    if kind not in sv.KINDS:
        raise ValueError(f"format-error: unknown benchmark {kind!r}")
    d["params"] = sv._PARAM_TYPES[kind](**d["params"])
    return sv.BenchmarkSpec(**d)


def save_trajectory(path, traj):
    save_container(path, {f"field.{k}": v for k, v in traj.fields.items()})
    norm = dict(zip(("param", "scale", "lo", "hi"), PARAM_NORMS[traj.spec.kind]))
    meta = {"spec": _spec_to_dict(traj.spec), "state_dt": traj.dt,
            "fields": list(traj.fields), "normalization": norm}
    with open(f"{path}.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_trajectory(path):
    entries = load_container(path)
    with open(f"{path}.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    spec = _spec_from_dict(meta["spec"])
    try:
        fields = {k: entries[f"field.{k}"] for k in meta["fields"]}
    except KeyError as missing:
        raise ValueError(f"format-error: field entry {missing} absent") from None
    return sv.Trajectory(spec=spec, fields=fields, dt=float(meta["state_dt"]))


# -- sample-pair assembly -------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class PairSet:
    """One-step samples: inputs (n, c_in, *grid), targets (n, c_out, *grid),
    source rows (trajectory index, step index)."""

    inputs: np.ndarray
    targets: np.ndarray
    source: np.ndarray
    kind: str

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, idx):
        return PairSet(self.inputs[idx], self.targets[idx],
                       self.source[idx], self.kind)


def normalized_param(spec):
    name, scale, lo, hi = PARAM_NORMS[spec.kind]
    v = getattr(spec.params, name)
    if scale == "log10":
        v, lo, hi = np.log10(v), np.log10(lo), np.log10(hi)
    return (v - lo) / (hi - lo)


def denormalized_param(kind, value):
    """Invert the parameter-channel normalization; value may be an array."""
    _, scale, lo, hi = PARAM_NORMS[kind]
    v = np.asarray(value, dtype=np.float64)
    if scale == "log10":
        return 10.0 ** (np.log10(lo) + v * (np.log10(hi) - np.log10(lo)))
    return lo + v * (hi - lo)


def static_channels(spec):
    """Constant-in-time input channels: parameter, coordinates, filler."""
    coords = sv.grid_coords(spec)
    spans = spec.extent if spec.periodic else tuple(
        c[-1] - c[0] for c in coords)
    unit = [(c - c[0]) / s for c, s in zip(coords, spans)]
    out = {"param": np.full(spec.grid, normalized_param(spec)),
           "one": np.ones(spec.grid)}
    if len(spec.grid) == 1:
        out["x"] = unit[0]
    else:
        ones = np.ones(spec.grid)
        out["y"] = unit[0][:, None] * ones
        out["x"] = unit[1][None, :] * ones
    return out


def build_pairs(trajectories, layout=None):
    if not trajectories:
        raise ValueError("invalid-input: no trajectories given")
    kind = trajectories[0].spec.kind
    grid = trajectories[0].spec.grid
    in_names, out_names = CHANNEL_LAYOUTS[kind] if layout is None else layout
    inputs, targets, source = [], [], []
    for ti, traj in enumerate(trajectories):
        if traj.spec.kind != kind or traj.spec.grid != grid:
            raise ValueError("invalid-input: trajectories mix benchmarks or grids")
        static = static_channels(traj.spec)
        for name in in_names + out_names:
            if name not in traj.fields and name not in static:
                raise ValueError(f"invalid-input: unknown channel {name!r}")
        for step in range(traj.n_states - 1):
            row = [traj.fields[n][step] if n in traj.fields else static[n]
                   for n in in_names]
            inputs.append(np.stack(row))
            targets.append(np.stack([traj.fields[n][step + 1]
                                     for n in out_names]))
            source.append((ti, step))
    return PairSet(np.stack(inputs), np.stack(targets),
                   np.asarray(source, dtype=np.int64), kind)


def split(pairs, ratio=0.75, seed=0):
    """Seeded shuffle then partition into (train, validation)."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("invalid-input: split ratio must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(len(pairs))
    n_train = int(round(len(pairs) * ratio))
    return pairs.subset(perm[:n_train]), pairs.subset(perm[n_train:])


# -- model checkpoints ----------------------------------------------------------

def save_checkpoint(path, model, extra=None):
    """Complex spectral weights are stored with a trailing re/im axis."""
    entries = {}
    for name, p in model.params.items():
        v = p.value
        entries[name] = (np.stack([v.real, v.imag], axis=-1)
                         if np.iscomplexobj(v) else v)
    save_container(path, entries)
    meta = {"config": dataclasses.asdict(model.config), "extra": extra or {}}
    with open(f"{path}.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    entries = load_container(path)
    with open(f"{path}.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    model = fno.FnoModel(fno.FnoConfig(**meta["config"]), seed=0)
    for name, p in model.params.items():
        if name not in entries:
            raise ValueError(f"format-error: parameter {name!r} absent")
        stored = entries[name]
        if np.iscomplexobj(p.value):
            stored = stored[..., 0] + 1j * stored[..., 1]
        if stored.shape != p.value.shape:
            raise ValueError(f"format-error: parameter {name!r} shape mismatch")
        p.value = np.ascontiguousarray(stored)
        p.grad = np.zeros_like(p.value)
    return model, meta["extra"]


# -- delimited reports ----------------------------------------------------------

def _format_cell(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(v) for v in row) + "\n")
