"""Pipeline configuration: one flat key=value namespace with dotted section
prefixes (``dp.tau1=0.3``), shared by the config-file parser and the CLI.
"""

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .dp_labeler import DpConfig
from .filtering import BandpassConfig, FftFilterConfig
from .onset import OnsetParams
from .siamese import SiameseHyper


class ConfigError(ValueError):
    """Unknown key or unparseable value in a configuration source."""


@dataclass(frozen=True)
class TrainParams:
    learning_rate: float = 0.5
    epochs: int = 30
    batch_size: int = 64


@dataclass(frozen=True)
class PipelineConfig:
    sample_rate: int = 4000  # canonical processing rate; S1/S2 content is < 250 Hz
    seed: int = 0
    threshold: float = 0.5  # one-class similarity decision threshold
    bandpass: BandpassConfig = field(default_factory=BandpassConfig)
    fft_filter: FftFilterConfig = field(default_factory=FftFilterConfig)
    onset: OnsetParams = field(default_factory=OnsetParams)
    dp: DpConfig = field(default_factory=DpConfig)
    siamese: SiameseHyper = field(default_factory=SiameseHyper)
    train: TrainParams = field(default_factory=TrainParams)


_SECTIONS = {
    "bandpass": BandpassConfig,
    "fft": FftFilterConfig,
    "onset": OnsetParams,
    "dp": DpConfig,
    "siamese": SiameseHyper,
    "train": TrainParams,
}
_SECTION_ATTR = {
    "bandpass": "bandpass",
    "fft": "fft_filter",
    "onset": "onset",
    "dp": "dp",
    "siamese": "siamese",
    "train": "train",
}
_TOP_LEVEL = {"sample_rate": int, "seed": int, "threshold": float}


def config_schema() -> dict[str, str]:
    """Every accepted key with its default, for --help and the README."""
    schema = {}
    defaults = PipelineConfig()
    for key, _ in _TOP_LEVEL.items():
        schema[key] = repr(getattr(defaults, key))
    for section, cls in _SECTIONS.items():
        section_defaults = getattr(defaults, _SECTION_ATTR[section])
        for f in fields(cls):
            schema[f"{section}.{f.name}"] = repr(getattr(section_defaults, f.name))
    return schema


def _coerce(raw: str, target_type, key: str):
    try:
        if target_type is bool:
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if target_type is int:
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {key}={raw!r} as {target_type.__name__}")


def apply_setting(config: PipelineConfig, key: str, raw: str) -> PipelineConfig:
    """Return a config with one dotted key replaced by a parsed value."""
    if key in _TOP_LEVEL:
        return replace(config, **{key: _coerce(raw, _TOP_LEVEL[key], key)})
    if "." not in key:
        raise ConfigError(f"unknown configuration key {key!r}")
    section, name = key.split(".", 1)
    cls = _SECTIONS.get(section)
    if cls is None:
        raise ConfigError(f"unknown configuration section {section!r}")
    field_types = {f.name: f.type for f in fields(cls)}
    if name not in field_types:
        raise ConfigError(f"unknown configuration key {key!r}")
    declared = field_types[name]
    if "int" in str(declared):
        target = int
    elif "bool" in str(declared):
        target = bool
    else:
        target = float
    if raw.strip().lower() == "none" and "None" in str(declared):
        value = None
    else:
        value = _coerce(raw, target, key)
    attr = _SECTION_ATTR[section]
    try:
        updated = replace(getattr(config, attr), **{name: value})
    except ValueError as exc:
        raise ConfigError(f"invalid value for {key}: {exc}")
    return replace(config, **{attr: updated})


def load_config_file(path, base: PipelineConfig | None = None) -> PipelineConfig:
    """Parse ``key=value`` lines (# comments and blanks ignored) on top of
    the defaults or a given base config."""
    config = base if base is not None else PipelineConfig()
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}: line {line_no}: expected key=value")
        key, raw = stripped.split("=", 1)
        config = apply_setting(config, key.strip(), raw.strip())
    return config
