"""Run configuration for the CLI pipeline.

Every benchmark ships a complete default schema (dataset definition, operator
architecture, training schedule), so a bare ``--benchmark`` flag is enough to
run. An optional INI file overlays individual keys; unknown sections or keys
are rejected so typos cannot silently fall back to defaults.
"""

import configparser
import copy
import dataclasses

import numpy as np

from . import dataio
from . import fno
from . import solvers as sv
from . import training as tr

SECTIONS = ("run", "generate", "model", "train", "eval")

# keyed by benchmark; "run" holds the cross-section defaults
DEFAULTS = {
    "corrosion1d": {
        "generate": {
            "train_values": [1e-9, 1e-8, 1e-7, 1e-5, 1.0],  # interface kinetics L
            "test_values": [5e-9, 2.5e-8, 5e-7, 1e-6, 1e-3, 0.5],
            "n_nodes": 101,
            "dt": 1.0,
            "n_steps": 100,
            "save_every": 1,
            "domain": 100e-6,
            "interface": 35e-6,
        },
        "model": {
            "depth": 4,
            "width": 64,
            "modes": [8],
            "activation": "gelu",
            "padding": 8,
        },
        "train": {
            "mode": "pino",
            "epochs": 10000,
            "batch_size": 64,
            "split_ratio": 0.75,
            "lr_initial": 1e-3,
            "lr_decay": 0.95,
            "lr_decay_step": 500,
            "lr_floor": 1e-5,
            "n_switch": 0,
            "alpha_w": 0.9,
            "balance": True,
            "finetune_iters": 0,
            "finetune_steps": 0,
        },
        "eval": {"rollout_steps": 100},
    },
    "electropolish": {
        "generate": {
            "n_train": 10,  # distinct initial morphologies
            "n_test": 5,
            "kinetics": 1e-10,
            "nx": 101,
            "ny": 51,
            "dt": 200.0,
            "n_steps": 100,
            "save_every": 1,
            "width": 100e-6,
            "height": 50e-6,
            "interface": 25e-6,
            "pert_sigma": 2e-6,
            "pert_modes": 10,
        },
        "model": {
            "depth": 4,
            "width": 64,
            "modes": [8, 8],
            "activation": "relu",
            "padding": 8,
        },
        "train": {
            "mode": "pino",
            "epochs": 5000,
            "batch_size": 128,
            "split_ratio": 0.75,
            "lr_initial": 5e-4,
            "lr_decay": 0.95,
            "lr_decay_step": 200,
            "lr_floor": 1e-5,
            "n_switch": 0,
            "alpha_w": 0.9,
            "balance": True,
            "finetune_iters": 0,
            "finetune_steps": 0,
        },
        "eval": {"rollout_steps": 100},
    },
    "solidification": {
        "generate": {
            "train_values": [0.8, 1.0, 1.2, 1.4, 1.6],  # latent heat K
            "test_values": [0.9, 1.3, 1.7, 2.0],
            "n": 128,
            "dt": 0.01,
            "n_steps": 1000,
            "save_every": 5,  # operator works on the 0.05 stride
            "aniso_strength": 0.1,
            "seed_radius": 0.05,
            "t_melt": -0.6,
        },
        "model": {
            "depth": 4,
            "width": 64,
            "modes": [16, 16],
            "activation": "relu",
            "padding": 8,
        },
        "train": {
            "mode": "pino",
            "epochs": 3000,
            "batch_size": 64,
            "split_ratio": 0.75,
            "lr_initial": 5e-4,
            "lr_decay": 0.95,
            "lr_decay_step": 50,
            "lr_floor": 1e-5,
            "n_switch": 50,  # alternate phase / heat residual emphasis
            "alpha_w": 0.9,
            "balance": True,
            "finetune_iters": 0,
            "finetune_steps": 0,
        },
        "eval": {"rollout_steps": 200},
    },
    "spinodal": {
        "generate": {
            "n_train": 25,  # mobility drawn uniform on [0.5, 1.5]
            "n_test": 5,
            "test_values": [0.6, 0.8, 1.0, 1.2, 1.4],
            "n": 64,
            "dt": 5e-5,
            "n_steps": 100,
            "save_every": 1,
            "mean_c": 0.0,
            "pert_amp": 1e-4,
            "n_pert": 100,
            "k_limit": 15,
        },
        "model": {
            "depth": 3,
            "width": 64,
            "modes": [32, 32],
            "activation": "gelu",
            "padding": 0,
        },
        "train": {
            "mode": "pino",
            "epochs": 3000,
            "batch_size": 64,
            "split_ratio": 0.75,
            "lr_initial": 5e-4,
            "lr_decay": 0.95,
            "lr_decay_step": 200,
            "lr_floor": 1e-5,
            "n_switch": 0,
            "alpha_w": 0.9,
            "balance": True,
            "finetune_iters": 100,  # rollout fine-tune stage
            "finetune_steps": 25,
        },
        "eval": {"rollout_steps": 100},
    },
}

RUN_DEFAULTS = {"seed": 0, "out": ""}

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


@dataclasses.dataclass(frozen=True)
class RunConfig:
    benchmark: str
    seed: int
    out: str
    generate: dict
    model: dict
    train: dict
    evaluate: dict

    def fno_config(self):
        in_names, out_names = dataio.CHANNEL_LAYOUTS[self.benchmark]
        m = self.model
        return fno.FnoConfig(in_channels=len(in_names),
                             out_channels=len(out_names),
                             depth=m["depth"], width=m["width"],
                             modes=tuple(m["modes"]),
                             activation=m["activation"], padding=m["padding"])

    def lr_schedule(self):
        t = self.train
        return tr.LrSchedule(initial=t["lr_initial"], decay=t["lr_decay"],
                             decay_step=t["lr_decay_step"], floor=t["lr_floor"])

    def train_config(self, mode=None):
        t = self.train
        return tr.TrainConfig(mode=mode or t["mode"], epochs=t["epochs"],
                              batch_size=t["batch_size"], seed=self.seed,
                              n_switch=t["n_switch"], alpha_w=t["alpha_w"],
                              balance=t["balance"], lr=self.lr_schedule())


def _parse_like(default, text, where):
    """Parse INI text using the type of the schema default."""
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, list):
            elem = type(default[0])
            if not text:
                return []
            return [elem(tok.strip()) for tok in text.split(",")]
        return text
    except (TypeError, ValueError):
        raise ValueError(f"invalid-config: cannot parse {where} = {text!r}") from None


def _read_ini(path):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as err:
        raise ValueError(f"invalid-config: {err}") from None
    return parser


def load_run_config(path=None, benchmark=None, seed=None, out=None, mode=None):
    """Build a RunConfig from defaults, an optional INI overlay, and flags.

    Precedence is flags over file over schema defaults. The benchmark must
    come from a flag or the [run] section; everything else has a default.
    """
    parser = _read_ini(path) if path is not None else None

    bench = benchmark
    if bench is None and parser is not None and parser.has_option("run", "benchmark"):
        bench = parser.get("run", "benchmark").strip()
    if bench is None:
        raise ValueError("invalid-config: no benchmark selected")
    if bench not in DEFAULTS:
        raise ValueError(f"invalid-config: unknown benchmark {bench!r}")

    cfg = copy.deepcopy(DEFAULTS[bench])
    run = dict(RUN_DEFAULTS)

    if parser is not None:
        for section in parser.sections():
            if section not in SECTIONS:
                raise ValueError(f"invalid-config: unknown section [{section}]")
            for key, text in parser.items(section):
                if section == "run":
                    if key == "benchmark":
                        continue
                    if key not in run:
                        raise ValueError(f"invalid-config: unknown key run.{key}")
                    run[key] = _parse_like(run[key], text, f"run.{key}")
                else:
                    table = cfg[section]
                    if key not in table:
                        raise ValueError(f"invalid-config: unknown key {section}.{key}")
                    table[key] = _parse_like(table[key], text, f"{section}.{key}")

    if seed is not None:
        run["seed"] = int(seed)
    if out is not None:
        run["out"] = str(out)
    if mode is not None:
        cfg["train"]["mode"] = str(mode)
    if cfg["train"]["mode"] not in ("fno", "pino"):
        raise ValueError(f"invalid-config: unknown mode {cfg['train']['mode']!r}")
    if not run["out"]:
        run["out"] = f"runs/{bench}"

    return RunConfig(benchmark=bench, seed=run["seed"], out=run["out"],
                     generate=cfg["generate"], model=cfg["model"],
                     train=cfg["train"], evaluate=cfg["eval"])


def generate_specs(config):
    """Expand the generate section into named train / test solver specs."""
    g = config.generate
    seed = config.seed
    train, test = [], []
    if config.benchmark == "corrosion1d":
        def make(v):
            return sv.corrosion_1d_spec(kinetics=v, n_nodes=g["n_nodes"],
                                        dt=g["dt"], n_steps=g["n_steps"],
                                        domain=g["domain"],
                                        interface=g["interface"],
                                        save_every=g["save_every"])
        train = [(f"train-L{v:g}", make(v)) for v in g["train_values"]]
        test = [(f"test-L{v:g}", make(v)) for v in g["test_values"]]
    elif config.benchmark == "electropolish":
        def make(s):
            return sv.electropolish_spec(seed=s, kinetics=g["kinetics"],
                                         nx=g["nx"], ny=g["ny"], dt=g["dt"],
                                         n_steps=g["n_steps"],
                                         width=g["width"], height=g["height"],
                                         interface=g["interface"],
                                         pert_sigma=g["pert_sigma"],
                                         pert_modes=g["pert_modes"],
                                         save_every=g["save_every"])
        train = [(f"train-s{i}", make(seed + i)) for i in range(g["n_train"])]
        test = [(f"test-s{i}", make(seed + 1000 + i)) for i in range(g["n_test"])]
    elif config.benchmark == "solidification":
        def make(v):
            return sv.solidification_spec(latent=v, n=g["n"], dt=g["dt"],
                                          n_steps=g["n_steps"],
                                          save_every=g["save_every"],
                                          aniso_strength=g["aniso_strength"],
                                          seed_radius=g["seed_radius"],
                                          t_melt=g["t_melt"])
        train = [(f"train-K{v:g}", make(v)) for v in g["train_values"]]
        test = [(f"test-K{v:g}", make(v)) for v in g["test_values"]]
    else:
        def make(m, s):
            return sv.spinodal_spec(mobility=m, seed=s, n=g["n"], dt=g["dt"],
                                    n_steps=g["n_steps"], mean_c=g["mean_c"],
                                    pert_amp=g["pert_amp"], n_pert=g["n_pert"],
                                    k_limit=g["k_limit"],
                                    save_every=g["save_every"])
        rng = np.random.default_rng(seed)
        mob = rng.uniform(0.5, 1.5, g["n_train"])
        train = [(f"train-m{i:02d}", make(mob[i], seed + i))
                 for i in range(g["n_train"])]
        vals = g["test_values"]
        if len(vals) < g["n_test"]:
            raise ValueError("invalid-config: need a test mobility per test case")
        test = [(f"test-m{vals[i]:g}", make(vals[i], seed + 10000 + i))
                for i in range(g["n_test"])]
    return train, test
