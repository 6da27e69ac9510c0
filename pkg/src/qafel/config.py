"""Experiment configuration: a flat ``key = value`` text format with
total validation (every invalid file yields the full list of violations),
canonical serialization, and a reference hyperparameter preset.
"""

from __future__ import annotations

from dataclasses import dataclass

from .protocol import HyperParams, SyncMode
from .quantizers import QuantizerError, QuantizerSpec
from .simulator import DelayModel


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class TaskConfig:
    kind: str = "quadratic"
    n_clients: int = 8
    dim: int = 8
    heterogeneity: float = 0.5
    skew: float = 0.0
    samples_min: int = 8
    samples_max: int = 32
    reg: float = 1e-2
    rows_per_client: int = 0
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskConfig
    hp: HyperParams
    q_client: QuantizerSpec
    q_server: QuantizerSpec
    delay: DelayModel
    t_max: int
    target_loss: float | None
    seeds: tuple[int, ...]
    uniform_assignment: bool = False


# Hyperparameters of the production-scale reference setup (buffer 10,
# momentum 0.3, server rate 1000, client rate 4.7e-6).
PRESETS: dict[str, dict[str, str]] = {
    "reference-production": {
        "hp.K": "10",
        "hp.beta": "0.3",
        "hp.eta_g": "1000",
        "hp.eta_l": "4.7e-6",
    }
}

_KNOWN_KEYS = {
    "preset",
    "task.kind", "task.n_clients", "task.dim", "task.heterogeneity",
    "task.skew", "task.samples_min", "task.samples_max", "task.reg",
    "task.rows_per_client", "task.seed",
    "hp.eta_g", "hp.eta_l", "hp.P", "hp.K", "hp.beta", "hp.staleness_scaling",
    "quant.client", "quant.server",
    "delay.sigma", "delay.rate", "delay.concurrency",
    "run.T_max", "run.target_loss", "run.seeds",
    "mode.broadcast", "mode.c_max", "mode.uniform_assignment",
}

_DEFAULTS = {
    "task.kind": "quadratic",
    "task.n_clients": "8",
    "task.dim": "8",
    "task.heterogeneity": "0.5",
    "task.skew": "0.0",
    "task.samples_min": "8",
    "task.samples_max": "32",
    "task.reg": "0.01",
    "task.rows_per_client": "0",
    "task.seed": "0",
    "hp.eta_g": "1.0",
    "hp.eta_l": "0.05",
    "hp.P": "1",
    "hp.K": "1",
    "hp.beta": "0.0",
    "hp.staleness_scaling": "false",
    "quant.client": "identity",
    "quant.server": "identity",
    "delay.sigma": "1.0",
    "delay.rate": "100.0",
    "delay.concurrency": "100",
    "run.T_max": "100",
    "run.target_loss": "",
    "run.seeds": "0",
    "mode.broadcast": "true",
    "mode.c_max": "16",
    "mode.uniform_assignment": "false",
}


def _parse_lines(text: str) -> tuple[dict[str, str], list[str]]:
    values: dict[str, str] = {}
    errors: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KNOWN_KEYS:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in values:
            errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        values[key] = value
    return values, errors


class _Reader:
    def __init__(self, values: dict[str, str], errors: list[str]):
        self.values = values
        self.errors = errors

    def _convert(self, key: str, cast, kind: str):
        raw = self.values[key]
        try:
            return cast(raw)
        except (ValueError, QuantizerError) as exc:
            self.errors.append(f"{key}: expected {kind}, got {raw!r} ({exc})")
            return None

    def get_int(self, key: str):
        return self._convert(key, int, "integer")

    def get_float(self, key: str):
        return self._convert(key, float, "number")

    def get_bool(self, key: str):
        def cast(raw: str) -> bool:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError("not a boolean")
        return self._convert(key, cast, "boolean")

    def get_float_list(self, key: str):
        return self._convert(
            key, lambda raw: tuple(float(v) for v in raw.split(",") if v.strip()), "number list"
        )

    def get_int_list(self, key: str):
        return self._convert(
            key, lambda raw: tuple(int(v) for v in raw.split(",") if v.strip()), "integer list"
        )

    def get_quant(self, key: str):
        return self._convert(key, QuantizerSpec.parse, "quantizer spec")


def parse_config(text: str) -> ExperimentConfig:
    """Parses and fully validates a config; raises ConfigError carrying
    every violation found."""
    values, errors = _parse_lines(text)

    preset = values.pop("preset", None)
    merged = dict(_DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            errors.append(f"preset: unknown preset {preset!r}")
        else:
            merged.update(PRESETS[preset])
    merged.update(values)

    reader = _Reader(merged, errors)

    def fb(value, default):
        return default if value is None else value

    kind = merged["task.kind"]
    if kind not in ("quadratic", "logistic"):
        errors.append(f"task.kind: must be quadratic or logistic, got {kind!r}")
    task = TaskConfig(
        kind=kind,
        n_clients=fb(reader.get_int("task.n_clients"), 1),
        dim=fb(reader.get_int("task.dim"), 1),
        heterogeneity=fb(reader.get_float("task.heterogeneity"), 0.0),
        skew=fb(reader.get_float("task.skew"), 0.0),
        samples_min=fb(reader.get_int("task.samples_min"), 1),
        samples_max=fb(reader.get_int("task.samples_max"), 1),
        reg=fb(reader.get_float("task.reg"), 0.0),
        rows_per_client=fb(reader.get_int("task.rows_per_client"), 0),
        seed=fb(reader.get_int("task.seed"), 0),
    )
    if task.n_clients < 1:
        errors.append("task.n_clients: must be >= 1")
    if task.dim < 1:
        errors.append("task.dim: must be >= 1")

    eta_l = fb(reader.get_float_list("hp.eta_l"), (0.05,))
    p_steps = fb(reader.get_int("hp.P"), 1)
    if len(eta_l) == 1 and p_steps > 1:
        eta_l = eta_l * p_steps
    elif p_steps > 1 and len(eta_l) != p_steps:
        errors.append("hp.eta_l: schedule length disagrees with hp.P")

    k_buf = fb(reader.get_int("hp.K"), 1)
    if k_buf < 1:
        errors.append("hp.K: must be >= 1")
    broadcast = reader.get_bool("mode.broadcast")
    c_max = fb(reader.get_int("mode.c_max"), 16)
    hp = None
    try:
        hp = HyperParams(
            eta_g=fb(reader.get_float("hp.eta_g"), 1.0),
            eta_l=eta_l,
            K=max(k_buf, 1),
            momentum_beta=fb(reader.get_float("hp.beta"), 0.0),
            staleness_scaling=bool(reader.get_bool("hp.staleness_scaling")),
            mode=SyncMode.BROADCAST if broadcast else SyncMode.NON_BROADCAST,
            c_max=max(c_max, 1),
        )
    except Exception as exc:
        errors.append(f"hp: {exc}")

    q_client = reader.get_quant("quant.client")
    q_server = reader.get_quant("quant.server")
    if q_client is not None and not q_client.unbiased:
        errors.append("quant.client: client quantizer must be unbiased")

    delay = None
    try:
        delay = DelayModel(
            sigma=fb(reader.get_float("delay.sigma"), 1.0),
            arrival_rate=fb(reader.get_float("delay.rate"), 1.0),
            concurrency_cap=fb(reader.get_int("delay.concurrency"), 1),
        )
    except Exception as exc:
        errors.append(f"delay: {exc}")

    t_max = fb(reader.get_int("run.T_max"), 0)
    if t_max < 1:
        errors.append("run.T_max: must be >= 1")
    raw_target = merged["run.target_loss"]
    target_loss = None
    if raw_target.strip():
        target_loss = reader.get_float("run.target_loss")

    seeds = fb(reader.get_int_list("run.seeds"), ())
    if not seeds:
        errors.append("run.seeds: need at least one seed")
    elif len(set(seeds)) != len(seeds):
        errors.append("run.seeds: seeds must be distinct")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        task=task,
        hp=hp,
        q_client=q_client,
        q_server=q_server,
        delay=delay,
        t_max=t_max,
        target_loss=target_loss,
        seeds=seeds,
        uniform_assignment=bool(reader.get_bool("mode.uniform_assignment")),
    )


def serialize_config(config: ExperimentConfig) -> str:
    """Canonical text form; parse(serialize(c)) == c."""
    t = config.task
    lines = [
        f"task.kind = {t.kind}",
        f"task.n_clients = {t.n_clients}",
        f"task.dim = {t.dim}",
        f"task.heterogeneity = {t.heterogeneity!r}",
        f"task.skew = {t.skew!r}",
        f"task.samples_min = {t.samples_min}",
        f"task.samples_max = {t.samples_max}",
        f"task.reg = {t.reg!r}",
        f"task.rows_per_client = {t.rows_per_client}",
        f"task.seed = {t.seed}",
        f"hp.eta_g = {config.hp.eta_g!r}",
        "hp.eta_l = " + ",".join(repr(e) for e in config.hp.eta_l),
        f"hp.K = {config.hp.K}",
        f"hp.beta = {config.hp.momentum_beta!r}",
        f"hp.staleness_scaling = {str(config.hp.staleness_scaling).lower()}",
        f"quant.client = {config.q_client}",
        f"quant.server = {config.q_server}",
        f"delay.sigma = {config.delay.sigma!r}",
        f"delay.rate = {config.delay.arrival_rate!r}",
        f"delay.concurrency = {config.delay.concurrency_cap}",
        f"run.T_max = {config.t_max}",
        "run.target_loss = " + ("" if config.target_loss is None else repr(config.target_loss)),
        "run.seeds = " + ",".join(str(s) for s in config.seeds),
        f"mode.broadcast = {str(config.hp.mode is SyncMode.BROADCAST).lower()}",
        f"mode.c_max = {config.hp.c_max}",
        f"mode.uniform_assignment = {str(config.uniform_assignment).lower()}",
    ]
    return "\n".join(lines) + "\n"


def validate_config(text: str) -> list[str]:
    """Returns the list of violations (empty when the config is valid)."""
    try:
        parse_config(text)
    except ConfigError as exc:
        return exc.errors
    return []


def with_overrides(config: ExperimentConfig, overrides: dict[str, str]) -> ExperimentConfig:
    """Re-parses the config with some keys replaced (used by sweeps)."""
    text = serialize_config(config)
    base, errors = _parse_lines(text)
    if errors:
        raise ConfigError(errors)
    for key, value in overrides.items():
        if key not in _KNOWN_KEYS:
            raise ConfigError([f"sweep key unknown: {key!r}"])
        base[key] = value
    return parse_config("\n".join(f"{k} = {v}" for k, v in base.items()))


__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "TaskConfig",
    "PRESETS",
    "parse_config",
    "serialize_config",
    "validate_config",
    "with_overrides",
]
