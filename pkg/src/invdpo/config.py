"""Plain-text experiment config: ``key = value`` lines, ``#`` comments, dotted section keys."""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError

# key -> default; the default's type decides how values are parsed
DEFAULTS: dict[str, object] = {
    "seed": 0,
    "schedule.T": 80,
    "schedule.alpha_T": 0.01,
    "model.hidden": 128,
    "model.time_dim": 16,
    "data.n_modes": 8,
    "data.radius": 4.0,
    "data.std": 0.3,
    "data.n_samples": 8192,
    "pretrain.epochs": 300,
    "pretrain.batch_size": 256,
    "pretrain.lr": 2e-3,
    "pretrain.weight_decay": 0.0,
    "pretrain.cosine": True,
    "pretrain.log_interval": 640,
    "pretrain.loss_gate": 0.15,
    "pairs.K": 4,
    "pairs.pools_per_condition": 64,
    "pairs.strategy": "all-ordered",
    "pairs.tie_tol": 1e-9,
    "pairs.heldout_fraction": 0.1,
    "dpo.beta": 2000.0,
    "dpo.variant": "inversion-dpo",
    "dpo.inner_sign": 1,
    "dpo.timestep_mode": "default",
    "posttrain.steps": 2000,
    "posttrain.lr": 1e-4,
    "posttrain.weight_decay": 0.01,
    "posttrain.batch_size": 8,
    "posttrain.eval_interval": 50,
    "posttrain.eval_pairs": 256,
    "report.wallclock": False,
    "eval.n_per_condition": 256,
    "compare.reward_delta": 0.005,
    "compare.n_per_condition": 128,
    "diagnose.T_list": "20,40,80",
    "diagnose.n_samples": 256,
    "diagnose.dump_items": 4,
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(key: str, raw: str, line):
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}", line) from None
    return raw


class Config(dict):
    """Flat mapping of dotted keys to typed values, seeded with :data:`DEFAULTS`."""

    def section(self, prefix: str) -> dict:
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.items() if k.startswith(p)}

    def set_from_string(self, assignment: str, line=None) -> None:
        if "=" not in assignment:
            raise ConfigError(f"expected key=value, got {assignment!r}", line)
        key, raw = (part.strip() for part in assignment.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}", line)
        self[key] = _convert(key, raw, line)

    def int_list(self, key: str) -> list[int]:
        try:
            return [int(v) for v in str(self[key]).split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"{key}: expected comma-separated integers") from None


def parse_config(text: str) -> Config:
    cfg = Config(DEFAULTS)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if body:
            cfg.set_from_string(body, lineno)
    return cfg


def load_config(path, overrides=()) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = parse_config(text)
    for item in overrides:
        cfg.set_from_string(item)
    return cfg
