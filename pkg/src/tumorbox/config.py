"""Run configuration: the single documented layer of numeric defaults.

Every tunable knob lives in one of three dataclasses
(ClusterConfig, ExtractParams, EnhanceParams) composed into RunConfig.
Values resolve with precedence: explicit CLI flag > JSON config file >
dataclass default.
"""

import dataclasses
import json
from dataclasses import dataclass, field, replace

from .clustering import DEFAULT_SEED, ClusterConfig
from .errors import ConfigurationError, FormatError
from .evaluate import FORMULA_STANDARD
from .pipeline import ExtractParams
from .preprocess import EnhanceParams


@dataclass
class RunConfig:
    method: str = "em"
    seed: int = DEFAULT_SEED
    dice_formula: str = FORMULA_STANDARD
    strict: bool = False
    loo: bool = False
    jobs: int = 1
    cluster_background: bool = False
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    extract: ExtractParams = field(default_factory=ExtractParams)
    enhance: EnhanceParams = field(default_factory=EnhanceParams)


_NESTED = {"cluster": ClusterConfig, "extract": ExtractParams, "enhance": EnhanceParams}
_TOP_LEVEL = {"method", "seed", "dice_formula", "strict", "loo", "jobs", "cluster_background"}


def _replace_known(instance, overrides: dict, section: str):
    known = {f.name for f in dataclasses.fields(instance)}
    unknown = set(overrides) - known
    if unknown:
        raise ConfigurationError(
            f"unknown {section} config key(s): {', '.join(sorted(unknown))}"
        )
    coerced = dict(overrides)
    for key in ("representative_slices",):
        if key in coerced and coerced[key] is not None:
            coerced[key] = tuple(int(v) for v in coerced[key])
    return replace(instance, **coerced)


def load_config_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"malformed config file {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise FormatError(f"config file {path} must hold a JSON object")
    unknown = set(payload) - _TOP_LEVEL - set(_NESTED)
    if unknown:
        raise ConfigurationError(
            f"unknown config file key(s): {', '.join(sorted(unknown))}"
        )
    return payload


def build_run_config(file_cfg: dict | None = None, flags: dict | None = None) -> RunConfig:
    """Resolve a RunConfig from defaults, a config file dict, and CLI flags.

    ``flags`` entries with value None are treated as "not given". Nested
    flag keys use dotted names, e.g. ``extract.bbox_margin``.
    """
    cfg = RunConfig()
    for source in (file_cfg or {},):
        for key, value in source.items():
            if key in _NESTED:
                if not isinstance(value, dict):
                    raise ConfigurationError(f"config section {key!r} must be an object")
                setattr(cfg, key, _replace_known(getattr(cfg, key), value, key))
            else:
                setattr(cfg, key, value)
    for key, value in (flags or {}).items():
        if value is None:
            continue
        if "." in key:
            section, name = key.split(".", 1)
            setattr(cfg, section, _replace_known(getattr(cfg, section), {name: value}, section))
        else:
            if key not in _TOP_LEVEL:
                raise ConfigurationError(f"unknown flag key {key!r}")
            setattr(cfg, key, value)
    # The seed and strict flag live on RunConfig but act inside the nested
    # configs; push them down so callers can pass cfg.cluster / cfg.extract.
    cfg.cluster = replace(cfg.cluster, seed=int(cfg.seed))
    cfg.extract = replace(cfg.extract, strict=bool(cfg.strict))
    return cfg
