# Configuration settings for the two-hop molecular relay simulator
#
# Module-level constants hold the defaults (the physical system plus the
# operating point of the numerical experiments). SystemConfig / ExperimentConfig are the
# objects passed around; they can be read from and written to key = value text files.

import dataclasses
import logging
import math
import os
import re

from src.channel import DiffusionMedium, LinkGeometry, NodeGeometry, SamplingScheme
from src.errors import ConfigError

logger = logging.getLogger(__name__)

# Determine the absolute path to the project's root directory
PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
DEFAULT_OUT_DIR = os.path.join(PROJECT_ROOT, "results")

# System parameters
DEFAULT_P1 = 0.5
DEFAULT_RECEIVER_DISTANCE = 500e-9   # x_D, m
DEFAULT_SEQ_LEN = 50
DEFAULT_RELAY_RADIUS = 45e-9         # r_R, m
DEFAULT_DESTINATION_RADIUS = 45e-9   # r_D, m
DEFAULT_DIFFUSION_COEFF = 4.365e-10  # D_A1 = D_A2, m^2/s

# Operating point of the numerical experiments
DEFAULT_N_A1 = 2500
DEFAULT_SAMPLES_PER_BIT = 10
DEFAULT_SAMPLE_SPACING = 20e-6       # samples at 20, 40, ..., 200 us
DEFAULT_BIT_INTERVAL = 400e-6
DEFAULT_XI_D = 20
DEFAULT_K_MAX = 10_000
DEFAULT_PROTOCOL = "FIXED_GAIN_AF"

# Monte Carlo budgets. Desk scale by default, --paper-scale restores the full counts.
DEFAULT_TRIALS = 3_000
FULL_SCALE_TRIALS = 30_000
DEFAULT_SEQUENCE_SAMPLES = 2_000
FULL_SCALE_SEQUENCE_SAMPLES = 30_000
DEFAULT_GAIN_SAMPLES = 100_000
DEFAULT_SEED = 1
DEFAULT_WORKERS = 1

# Particle culling. Molecules older than the horizon are dropped from the simulation; at the
# default geometry and T = 400 us each dropped molecule would still have hit an observer with
# probability below 1e-6 per sample. This trades that residual ISI for runtime on long sequences.
DEFAULT_CULLING = True
DEFAULT_CULL_HORIZON_BITS = 30.0

# Histories up to this length are enumerated exhaustively when averaging gains
EXHAUSTIVE_HISTORY_LIMIT = 16

# Semi-analytic evaluation: "realization" draws Poisson relay counts, "mean" uses their expectations
DEFAULT_ANALYSIS_MODE = "realization"
ANALYSIS_MODES = ("realization", "mean")

# CSV output
CSV_SIGNIFICANT_DIGITS = 9

# Relay protocols. "schedule_mode" is the kind of amplification schedule the relay consumes.
PROTOCOL_TYPES = {
    "BASELINE": {"ui_name": "Baseline (direct link)", "has_relay": False, "schedule_mode": None},
    "FIXED_GAIN_AF": {"ui_name": "Fixed-gain AF", "has_relay": True, "schedule_mode": "fixed"},
    "VARIABLE_GAIN_AF_TYPE1": {"ui_name": "Variable-gain AF, Type 1", "has_relay": True, "schedule_mode": "online"},
    "VARIABLE_GAIN_AF_TYPE2": {"ui_name": "Variable-gain AF, Type 2", "has_relay": True, "schedule_mode": "per_interval"},
    "DECODE_FORWARD": {"ui_name": "Decode-and-forward (simplified comparison)", "has_relay": True, "schedule_mode": None},
}

# Network nodes. "emits" / "senses" name the molecule species each node releases or counts.
# The baseline destination senses A1 directly; see nodes.build_nodes.
SPECIES = ("A1", "A2")
NODE_TYPES = {
    "SOURCE": {"ui_name": "Source S", "emits": "A1", "senses": None},
    "RELAY": {"ui_name": "Relay R", "emits": "A2", "senses": "A1"},
    "DESTINATION": {"ui_name": "Destination D", "emits": None, "senses": "A2"},
}

# The gain-schedule figure reuses the parameter sets of the gain sweep.
# M = 20 keeps the 200 us sampling window by halving t0.
FIG4_PARAMETER_SETS = [
    {"samples_per_bit": 10, "sample_spacing": 20e-6, "bit_interval": 400e-6, "xi_d": 10},
    {"samples_per_bit": 10, "sample_spacing": 20e-6, "bit_interval": 400e-6, "xi_d": 20},
    {"samples_per_bit": 20, "sample_spacing": 10e-6, "bit_interval": 400e-6, "xi_d": 20},
    {"samples_per_bit": 10, "sample_spacing": 20e-6, "bit_interval": 600e-6, "xi_d": 20},
]

FIGURE_TYPES = {
    "fig2": {
        "ui_name": "Pe of bit 10 vs k, fixed prefix",
        "sweep_axis": "k",
        "sweep_values": list(range(20, 1001, 20)),
        "prefix": "101101001",
        "parameter_sets": [{"samples_per_bit": 10, "sample_spacing": 20e-6, "bit_interval": 400e-6, "xi_d": 20}],
        "protocols": ["FIXED_GAIN_AF"],
    },
    "fig3": {
        "ui_name": "Type-2 gain schedule vs bit interval",
        "sweep_axis": "j",
        "sweep_values": None,  # 2..L+1
        "parameter_sets": FIG4_PARAMETER_SETS,
        "protocols": ["VARIABLE_GAIN_AF_TYPE2"],
    },
    "fig4": {
        "ui_name": "Average Pe vs k, fixed-gain AF",
        "sweep_axis": "k",
        "sweep_values": list(range(25, 601, 25)),
        "parameter_sets": FIG4_PARAMETER_SETS,
        "protocols": ["FIXED_GAIN_AF"],
    },
    "fig5": {
        "ui_name": "Average Pe vs xi_D, fixed-gain AF and baseline",
        "sweep_axis": "xi_d",
        "sweep_values": list(range(4, 41, 2)),
        "parameter_sets": [
            {"samples_per_bit": 10, "sample_spacing": 20e-6, "bit_interval": 400e-6, "gain": 200.0},
            {"samples_per_bit": 10, "sample_spacing": 20e-6, "bit_interval": 600e-6, "gain": 250.0},
        ],
        "protocols": ["FIXED_GAIN_AF", "BASELINE"],
    },
    "fig6": {
        "ui_name": "Average Pe vs T, all protocols",
        "sweep_axis": "bit_interval",
        "sweep_values": [300e-6, 400e-6, 500e-6, 600e-6, 700e-6, 800e-6],
        "parameter_sets": [{"samples_per_bit": 10, "sample_spacing": 20e-6, "xi_d": 20}],
        "protocols": ["FIXED_GAIN_AF", "VARIABLE_GAIN_AF_TYPE1", "VARIABLE_GAIN_AF_TYPE2",
                      "DECODE_FORWARD", "BASELINE"],
    },
}

# Units accepted in config files, as multipliers to SI
UNIT_SCALES = {
    "length": {"m": 1.0, "mm": 1e-3, "um": 1e-6, "µm": 1e-6, "nm": 1e-9},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6, "ns": 1e-9},
    "diffusion": {"m2/s": 1.0, "m^2/s": 1.0, "um2/s": 1e-12, "µm2/s": 1e-12, "nm2/us": 1e-12},
}
SI_UNITS = {"length": "m", "time": "s", "diffusion": "m2/s"}

# key -> (kind, dimension). Dimensioned values must carry a unit suffix.
SYSTEM_FIELDS = {
    "p1": ("float", None),
    "receiver_distance": ("float", "length"),
    "relay_radius": ("float", "length"),
    "destination_radius": ("float", "length"),
    "diffusion_a1": ("float", "diffusion"),
    "diffusion_a2": ("float", "diffusion"),
    "n_a1": ("int", None),
    "seq_len": ("int", None),
    "bit_interval": ("float", "time"),
    "samples_per_bit": ("int", None),
    "sample_spacing": ("float", "time"),
    "xi_d": ("int", None),
    "xi_r": ("int", None),
    "protocol": ("str", None),
    "gain": ("float", None),
    "df_emission": ("int", None),
    "k_max": ("int", None),
    "realization_draws": ("int", None),
    "isi_aware_gain": ("bool", None),
    "culling": ("bool", None),
    "cull_horizon_bits": ("float", None),
}
EXPERIMENT_FIELDS = {
    "trials": ("int", None),
    "sequence_samples": ("int", None),
    "gain_samples": ("int", None),
    "seed": ("int", None),
    "out_dir": ("str", None),
    "workers": ("int", None),
}
# The operating point varies between experiments, so a config file has to state it.
REQUIRED_KEYS = ("bit_interval", "samples_per_bit", "xi_d")

_QUANTITY = re.compile(r"^([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S*)$")


@dataclasses.dataclass(frozen=True)
class SystemConfig:
    """Full physical and protocol parameterisation of one experiment (SI units)."""
    receiver_distance: float = DEFAULT_RECEIVER_DISTANCE
    relay_radius: float = DEFAULT_RELAY_RADIUS
    destination_radius: float = DEFAULT_DESTINATION_RADIUS
    diffusion_a1: float = DEFAULT_DIFFUSION_COEFF
    diffusion_a2: float = DEFAULT_DIFFUSION_COEFF
    p1: float = DEFAULT_P1
    n_a1: int = DEFAULT_N_A1
    seq_len: int = DEFAULT_SEQ_LEN
    bit_interval: float = DEFAULT_BIT_INTERVAL
    samples_per_bit: int = DEFAULT_SAMPLES_PER_BIT
    sample_spacing: float = DEFAULT_SAMPLE_SPACING
    xi_d: int = DEFAULT_XI_D
    xi_r: int = None            # None -> heuristic, see protocols.default_relay_threshold
    protocol: str = DEFAULT_PROTOCOL
    gain: float = None          # explicit fixed-gain k; None -> averaged optimal gain
    df_emission: int = None     # None -> n_a1
    k_max: int = DEFAULT_K_MAX
    realization_draws: int = 1
    isi_aware_gain: bool = False   # optimal gains also count the relay's earlier emissions at D
    culling: bool = DEFAULT_CULLING   # off gives exact long-range ISI at a higher cost per trial
    cull_horizon_bits: float = DEFAULT_CULL_HORIZON_BITS

    def __post_init__(self):
        if not 0.0 <= self.p1 <= 1.0:
            raise ConfigError(f"must lie in [0, 1], got {self.p1}", field="p1")
        for name in ("n_a1", "seq_len", "samples_per_bit", "xi_d", "k_max", "realization_draws"):
            value = getattr(self, name)
            if int(value) != value:
                raise ConfigError(f"must be an integer, got {value}", field=name)
        if self.n_a1 < 0:
            raise ConfigError("must be >= 0", field="n_a1")
        if self.seq_len < 1:
            raise ConfigError("must be >= 1", field="seq_len")
        if self.xi_d < 0:
            raise ConfigError("must be >= 0", field="xi_d")
        if self.xi_r is not None and self.xi_r < 1:
            raise ConfigError("must be >= 1", field="xi_r")
        if self.k_max < 1:
            raise ConfigError("must be >= 1", field="k_max")
        if self.realization_draws < 1:
            raise ConfigError("must be >= 1", field="realization_draws")
        if self.gain is not None and not (self.gain >= 0 and math.isfinite(self.gain)):
            raise ConfigError(f"must be finite and >= 0, got {self.gain}", field="gain")
        if self.df_emission is not None and self.df_emission < 0:
            raise ConfigError("must be >= 0", field="df_emission")
        if self.protocol not in PROTOCOL_TYPES:
            raise ConfigError(f"unknown protocol '{self.protocol}', expected one of {sorted(PROTOCOL_TYPES)}",
                              field="protocol")
        if self.cull_horizon_bits <= 0:
            raise ConfigError("must be > 0", field="cull_horizon_bits")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    # --- geometry: S at the origin, D at (x_D, 0, 0), R halfway between ---

    @property
    def medium(self):
        return DiffusionMedium(self.diffusion_a1, self.diffusion_a2)

    @property
    def source_position(self):
        return (0.0, 0.0, 0.0)

    @property
    def relay_node(self):
        return NodeGeometry((self.receiver_distance / 2.0, 0.0, 0.0), self.relay_radius)

    @property
    def destination_node(self):
        return NodeGeometry((self.receiver_distance, 0.0, 0.0), self.destination_radius)

    @property
    def first_hop(self):
        return LinkGeometry(self.source_position, self.relay_node, self.diffusion_a1)

    @property
    def second_hop(self):
        return LinkGeometry(self.relay_node.center, self.destination_node, self.diffusion_a2)

    @property
    def direct_link(self):
        return LinkGeometry(self.source_position, self.destination_node, self.diffusion_a1)

    @property
    def scheme(self):
        return SamplingScheme(self.bit_interval, self.samples_per_bit, self.sample_spacing)

    @property
    def relay_emission(self):
        """Molecules the DF relay releases for a detected 1."""
        return self.n_a1 if self.df_emission is None else self.df_emission

    @property
    def source_model(self):
        from src.protocols import SourceModel
        return SourceModel(self.p1, self.n_a1, self.seq_len)

    @property
    def detection(self):
        from src.protocols import DetectionConfig, default_relay_threshold
        xi_r = self.xi_r if self.xi_r is not None else default_relay_threshold(self)
        return DetectionConfig(self.xi_d, xi_r)

    @property
    def protocol_kind(self):
        from src.protocols import ProtocolKind
        return ProtocolKind.from_key(self.protocol, self.relay_emission)


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Monte Carlo budgets and output settings around one SystemConfig.

    Simulated runs cull molecules older than system.cull_horizon_bits by default, which keeps
    long sequences tractable at desk scale. Set culling = false in the config file for exact
    long-range ISI; each trial then steps every molecule ever emitted.
    """
    system: SystemConfig = dataclasses.field(default_factory=SystemConfig)
    trials: int = DEFAULT_TRIALS
    sequence_samples: int = DEFAULT_SEQUENCE_SAMPLES
    gain_samples: int = DEFAULT_GAIN_SAMPLES
    seed: int = DEFAULT_SEED
    out_dir: str = DEFAULT_OUT_DIR
    workers: int = DEFAULT_WORKERS

    def __post_init__(self):
        for name in ("trials", "sequence_samples", "gain_samples", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", field=name)
        if self.seed < 0:
            raise ConfigError("must be >= 0", field="seed")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def full_scale(self):
        """Returns a copy with the publication-scale trial and sequence counts."""
        return self.replace(trials=FULL_SCALE_TRIALS, sequence_samples=FULL_SCALE_SEQUENCE_SAMPLES)

    def to_dict(self):
        """Collects every non-default-None setting, SI values, for echoing or saving."""
        data = {k: v for k, v in dataclasses.asdict(self.system).items() if v is not None}
        for name in EXPERIMENT_FIELDS:
            data[name] = getattr(self, name)
        return data

    @classmethod
    def from_dict(cls, data):
        """Restores an ExperimentConfig from to_dict() output. Unknown keys are rejected."""
        system_kwargs, experiment_kwargs = {}, {}
        for key, value in data.items():
            if key in SYSTEM_FIELDS:
                system_kwargs[key] = value
            elif key in EXPERIMENT_FIELDS:
                experiment_kwargs[key] = value
            else:
                raise ConfigError("unknown key", field=key)
        return cls(system=SystemConfig(**system_kwargs), **experiment_kwargs)


def parse_quantity(text, dimension, field=None, line=None):
    """'500 nm' -> 5e-07. Dimensioned quantities must carry a known unit."""
    match = _QUANTITY.match(text.strip())
    if not match:
        raise ConfigError(f"cannot parse quantity '{text}'", line=line, field=field)
    number, unit = float(match.group(1)), match.group(2)
    if dimension is None:
        if unit:
            raise ConfigError(f"unexpected unit '{unit}'", line=line, field=field)
        return number
    scales = UNIT_SCALES[dimension]
    if not unit:
        raise ConfigError(f"missing unit, expected one of {sorted(scales)}", line=line, field=field)
    if unit not in scales:
        raise ConfigError(f"unknown {dimension} unit '{unit}', expected one of {sorted(scales)}",
                          line=line, field=field)
    return number * scales[unit]


def _parse_value(text, kind, dimension, field, line):
    text = text.strip()
    if kind == "str":
        if not text:
            raise ConfigError("empty value", line=line, field=field)
        return text
    if kind == "bool":
        lowered = text.lower()
        if lowered in ("true", "yes", "on", "1"):
            return True
        if lowered in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"expected a boolean, got '{text}'", line=line, field=field)
    value = parse_quantity(text, dimension, field=field, line=line)
    if kind == "int":
        if value != int(value):
            raise ConfigError(f"expected an integer, got '{text}'", line=line, field=field)
        return int(value)
    return value


def parse_config_text(text, require_operating_point=True):
    """Parses key = value lines into an ExperimentConfig."""
    values = {}
    seen_lines = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=line_no)
        key, value_text = (part.strip() for part in line.split("=", 1))
        spec = SYSTEM_FIELDS.get(key) or EXPERIMENT_FIELDS.get(key)
        if spec is None:
            raise ConfigError("unknown key", line=line_no, field=key)
        if key in seen_lines:
            raise ConfigError(f"duplicate key (first set on line {seen_lines[key]})", line=line_no, field=key)
        seen_lines[key] = line_no
        values[key] = _parse_value(value_text, spec[0], spec[1], key, line_no)

    if require_operating_point:
        for key in REQUIRED_KEYS:
            if key not in values:
                raise ConfigError("required field missing", field=key)

    try:
        return ExperimentConfig.from_dict(values)
    except ConfigError as e:
        if e.field in seen_lines and e.line is None:
            raise ConfigError(e.detail, line=seen_lines[e.field], field=e.field) from e
        raise


def load_config(path, require_operating_point=True):
    """Reads an ExperimentConfig from a key = value file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    config = parse_config_text(text, require_operating_point=require_operating_point)
    logger.info("Configuration loaded from %s", path)
    return config


def _format_value(value, kind, dimension):
    if kind == "bool":
        return "true" if value else "false"
    if kind == "str":
        return str(value)
    if kind == "int":
        return str(int(value))
    text = repr(float(value))
    return f"{text} {SI_UNITS[dimension]}" if dimension else text


def format_config(config):
    """Serialises an ExperimentConfig in SI base units; parse_config_text inverts it exactly."""
    lines = ["# two-hop relay experiment configuration (SI units)"]
    data = config.to_dict()
    for key, (kind, dimension) in list(SYSTEM_FIELDS.items()) + list(EXPERIMENT_FIELDS.items()):
        if key in data:
            lines.append(f"{key} = {_format_value(data[key], kind, dimension)}")
    return "\n".join(lines) + "\n"
