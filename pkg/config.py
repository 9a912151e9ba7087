import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

from dotenv import load_dotenv

from services.dataset import PROFILES
from services.kiae_model import REPR_ACTIVATIONS, SEQUENCE_MODES, KiaeConfig
from services.knowledge import GammaTable
from utils.errors import ConfigError, DomainError
from utils.validators import require_fraction, require_unit_interval

load_dotenv()

VARIANTS = ("ae", "kiae", "noisy_kiae")
SPLITS = ("fit", "train", "test")
MISSING_POLICIES = ("fill", "ignore")
SYNTHETIC_PREFIX = "synthetic:"

# biology_like default: groups (0,1) closest, (1,2) farthest
BIOLOGY_GAMMA = {(0, 1): 1.0, (0, 2): 2.0, (1, 2): 3.0}
DEFAULT_SEPARATION = 4.0

# experiment defaults per synthetic profile; explicit settings win
PROFILE_DEFAULTS: Dict[str, Dict[str, object]] = {
    "physics_like": {"epochs": 40, "learning_rate": 2e-3},
    "biology_like": {"repr_dim": 8, "epochs": 400, "learning_rate": 2e-3, "separation": 8.0},
}


class AppConfig:
    LOG_ENV_VAR = "KIAE_LOG"
    OUTPUT_ENV_VAR = "KIAE_OUTPUT_DIR"
    LOG_FORMAT = "%(asctime)s - %(levelname)s - - %(message)s"

    @staticmethod
    def log_level(name: Optional[str] = None) -> int:
        name = (name or os.getenv(AppConfig.LOG_ENV_VAR) or "INFO").upper()
        level = logging.getLevelName(name)
        if not isinstance(level, int):
            logging.warning(f"Unknown log level {name!r}; using INFO")
            return logging.INFO
        return level

    @staticmethod
    def configure_logging(name: Optional[str] = None) -> None:
        logging.basicConfig(level=AppConfig.log_level(name), format=AppConfig.LOG_FORMAT, force=True)

    @staticmethod
    def default_output_dir() -> Path:
        return Path(os.getenv(AppConfig.OUTPUT_ENV_VAR) or "kiae_out")


# section -> key -> (kind, default, description)
SCHEMA: Dict[str, Dict[str, Tuple[str, object, str]]] = {
    "experiment": {
        "dataset": ("str", None, "CSV path or synthetic:<profile> (required)"),
        "variants": ("variants", None, "comma list of ae, kiae, noisy_kiae (required)"),
        "splits": ("splits", SPLITS, "comma list of fit, train, test"),
        "seed": ("int", 0, "master seed"),
        "output": ("str", None, f"output directory (env {AppConfig.OUTPUT_ENV_VAR}, else kiae_out)"),
        "name": ("str", None, "dataset name in results (profile name or CSV stem)"),
        "label_column": ("str", "label", "label column of a CSV dataset"),
        "id_column": ("str", None, "sample id column of a CSV dataset"),
        "categorical_columns": ("list", (), "categorical-coded feature columns"),
        "knowledge": ("str", None, "CSV file with an expert knowledge matrix for kiae"),
        "known_fraction": ("unit", 1.0, "share of label-derived pairs kept as known"),
        "missing_policy": ("policy", "fill", "fill missing pairs with the distance regressor, or ignore them"),
    },
    "synthetic": {
        "n": ("int", None, "sample count (profile default)"),
        "d": ("int", None, "feature count (profile default)"),
        "k": ("int", None, "category count (profile default)"),
        "separation": ("float", None, "distance between cluster means (4.0; biology_like 8.0)"),
    },
    "model": {
        "lstm_hidden": ("int", 32, "LSTM hidden size h"),
        "fc_a": ("int", 64, "first FC size a"),
        "fc_b": ("int", 32, "second FC size b"),
        "repr_dim": ("int", 4, "representation size r (biology_like 8)"),
        "omega1": ("unit", None, "reconstruction weight (0.5, or 1 - omega2)"),
        "omega2": ("unit", None, "knowledge weight (0.5, or 1 - omega1)"),
        "batch_size": ("int", 16, "minibatch size"),
        "epochs": ("int", 10, "training epochs (physics_like 40, biology_like 400)"),
        "learning_rate": ("float", 1e-3, "Adam learning rate (physics_like and biology_like 2e-3)"),
        "sequence_mode": ("sequence_mode", "single_step", "single_step or per_feature"),
        "window": ("int", None, "sliding window length L (none: whole sample)"),
        "jump": ("int", 1, "sliding window jump"),
        "repr_activation": ("repr_activation", "relu", "relu or identity on the representation layer"),
    },
    "knowledge": {
        "alpha1": ("float", 0.0, "lower bound for same-category distances"),
        "alpha2": ("float", 1.0, "upper bound for same-category distances"),
        "gamma": ("gamma", None, "cross-category offset, or i-j:value pairs (1.0; biology_like 0-1:1, 0-2:2, 1-2:3)"),
        "k_neighbors": ("int", 5, "neighbours used by the distance regressor"),
    },
    "evaluation": {
        "train_fraction": ("fraction", 0.8, "training share of the train/test split"),
        "folds": ("int", 5, "cross-validation folds"),
        "subsample": ("int", 90, "points kept for the scatter plot"),
    },
}

REQUIRED = (("experiment", "dataset"), ("experiment", "variants"))
MODEL_KEYS = (
    "lstm_hidden", "repr_dim", "batch_size", "epochs", "learning_rate",
    "sequence_mode", "window", "jump", "repr_activation",
)


def describe_defaults() -> str:
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (_, default, description) in keys.items():
            shown = ", ".join(default) if isinstance(default, tuple) else default
            lines.append(f"  {key} = {'' if shown is None else shown}  # {description}")
    return "\n".join(lines)


@dataclass(frozen=True)
class ExperimentSpec:
    dataset: str
    variants: Tuple[str, ...]
    splits: Tuple[str, ...] = SPLITS
    seed: int = 0
    output_dir: Path = field(default_factory=AppConfig.default_output_dir)
    name: Optional[str] = None
    label_column: Optional[str] = "label"
    id_column: Optional[str] = None
    categorical_columns: Tuple[str, ...] = ()
    knowledge_path: Optional[Path] = None
    known_fraction: float = 1.0
    missing_policy: str = "fill"
    synthetic_n: Optional[int] = None
    synthetic_d: Optional[int] = None
    synthetic_k: Optional[int] = None
    separation: Optional[float] = None
    model_options: Dict[str, object] = field(default_factory=dict)
    alpha1: float = 0.0
    alpha2: float = 1.0
    gamma: object = None
    k_neighbors: int = 5
    train_fraction: float = 0.8
    folds: int = 5
    subsample: int = 90

    @property
    def is_synthetic(self) -> bool:
        return self.dataset.startswith(SYNTHETIC_PREFIX)

    @property
    def profile(self) -> Optional[str]:
        return self.dataset[len(SYNTHETIC_PREFIX):] if self.is_synthetic else None

    @property
    def dataset_name(self) -> str:
        return self.name or self.profile or Path(self.dataset).stem

    @property
    def profile_defaults(self) -> Dict[str, object]:
        return dict(PROFILE_DEFAULTS.get(self.profile, {}))

    @property
    def synthetic_separation(self) -> float:
        if self.separation is not None:
            return self.separation
        return float(self.profile_defaults.get("separation", DEFAULT_SEPARATION))

    def kiae_config(self, input_dim: int, variant: str) -> KiaeConfig:
        """Model config for one variant; ae always trains without knowledge."""
        options = {k: v for k, v in self.profile_defaults.items() if k != "separation"}
        options.update(self.model_options)
        if variant == "ae":
            options.update(omega1=1.0, omega2=0.0)
        return KiaeConfig(input_dim=input_dim, seed=self.seed, **options)

    def gamma_table(self, K: int) -> GammaTable:
        gamma = self.gamma
        if gamma is None:
            gamma = BIOLOGY_GAMMA if self.profile == "biology_like" and K == 3 else 1.0
        if isinstance(gamma, dict):
            return GammaTable.from_pairs(K, gamma, alpha1=self.alpha1, alpha2=self.alpha2)
        return GammaTable.uniform(K, float(gamma), alpha1=self.alpha1, alpha2=self.alpha2)

    def check_paths(self) -> None:
        """Resolve every referenced path before any training starts."""
        if not self.is_synthetic and not Path(self.dataset).exists():
            raise FileNotFoundError(f"dataset file not found: {self.dataset}")
        if self.is_synthetic and self.profile not in PROFILES:
            raise DomainError(f"unknown synthetic profile {self.profile!r}")
        if self.knowledge_path is not None and not Path(self.knowledge_path).exists():
            raise FileNotFoundError(f"knowledge file not found: {self.knowledge_path}")
        Path(self.output_dir).mkdir(parents=True, exist_ok=True)

    def with_overrides(self, **changes) -> "ExperimentSpec":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


def _split_list(value: str) -> Tuple[str, ...]:
    return tuple(item.strip() for item in value.split(",") if item.strip())


def _convert(kind: str, key: str, value: str, line: int):
    if value.lower() == "none" and kind in ("str", "int"):
        return None
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"{key} expects {'an integer' if kind == 'int' else 'a number'}, got {value!r}", line)
    if kind in ("unit", "fraction"):
        try:
            number = float(value)
        except ValueError:
            raise ConfigError(f"{key} expects a number, got {value!r}", line)
        check = require_unit_interval if kind == "unit" else require_fraction
        try:
            check(key, number)
        except DomainError as e:
            raise ConfigError(str(e), line)
        return number
    if kind in ("variants", "splits"):
        allowed = VARIANTS if kind == "variants" else SPLITS
        items = _split_list(value)
        bad = [item for item in items if item not in allowed]
        if bad or not items:
            raise ConfigError(f"{key} accepts {', '.join(allowed)}, got {value!r}", line)
        return tuple(dict.fromkeys(items))
    if kind == "list":
        return _split_list(value)
    if kind in ("policy", "sequence_mode", "repr_activation"):
        allowed = {"policy": MISSING_POLICIES, "sequence_mode": SEQUENCE_MODES, "repr_activation": REPR_ACTIVATIONS}[kind]
        if value not in allowed:
            raise ConfigError(f"{key} accepts {', '.join(allowed)}, got {value!r}", line)
        return value
    if kind == "gamma":
        if ":" not in value:
            try:
                return float(value)
            except ValueError:
                raise ConfigError(f"gamma expects a number or i-j:value pairs, got {value!r}", line)
        pairs = {}
        for item in _split_list(value):
            try:
                left, number = item.split(":")
                x, y = (int(v) for v in left.split("-"))
                pairs[(x, y)] = float(number)
            except ValueError:
                raise ConfigError(f"gamma pair {item!r} is not of the form i-j:value", line)
        return pairs
    return value


def _read_sections(path: Path):
    values: Dict[Tuple[str, str], Tuple[object, int]] = {}
    section = None
    lines = path.read_text(encoding="utf-8").splitlines()
    for number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", number)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", number)
        if section is None:
            raise ConfigError("key outside of any [section]", number)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", number)
        if (section, key) in values:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", number)
        kind = SCHEMA[section][key][0]
        values[(section, key)] = (_convert(kind, key, value, number), number)
    return values, len(lines)


def parse_config(path) -> ExperimentSpec:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    values, last_line = _read_sections(path)
    for section, key in REQUIRED:
        if (section, key) not in values or values[(section, key)][0] is None:
            raise ConfigError(f"missing required key {key!r} in [{section}]", last_line)

    def get(section: str, key: str):
        if (section, key) in values:
            return values[(section, key)][0]
        return SCHEMA[section][key][1]

    omega1, omega2 = get("model", "omega1"), get("model", "omega2")
    if omega1 is None and omega2 is None:
        omega1 = omega2 = 0.5
    elif omega2 is None:
        omega2 = 1.0 - omega1
    elif omega1 is None:
        omega1 = 1.0 - omega2
    elif abs(omega1 + omega2 - 1.0) > 1e-9:
        raise ConfigError(f"omega1 + omega2 must equal 1, got {omega1} + {omega2}", values[("model", "omega2")][1])

    # only explicit keys: profile defaults fill the rest when the model is built
    model_options: Dict[str, object] = {"omega1": omega1, "omega2": omega2}
    for key in MODEL_KEYS:
        if ("model", key) in values:
            model_options[key] = get("model", key)
    if ("model", "fc_a") in values or ("model", "fc_b") in values:
        model_options["fc_dims"] = (get("model", "fc_a"), get("model", "fc_b"))
    try:
        KiaeConfig(input_dim=1, **model_options)
    except DomainError as e:
        raise ConfigError(f"invalid [model] settings: {e}", last_line)

    output = get("experiment", "output")
    knowledge = get("experiment", "knowledge")
    spec = ExperimentSpec(
        dataset=get("experiment", "dataset"),
        variants=get("experiment", "variants"),
        splits=get("experiment", "splits"),
        seed=get("experiment", "seed"),
        output_dir=Path(output) if output else AppConfig.default_output_dir(),
        name=get("experiment", "name"),
        label_column=get("experiment", "label_column"),
        id_column=get("experiment", "id_column"),
        categorical_columns=get("experiment", "categorical_columns"),
        knowledge_path=Path(knowledge) if knowledge else None,
        known_fraction=get("experiment", "known_fraction"),
        missing_policy=get("experiment", "missing_policy"),
        synthetic_n=get("synthetic", "n"),
        synthetic_d=get("synthetic", "d"),
        synthetic_k=get("synthetic", "k"),
        separation=get("synthetic", "separation"),
        model_options=model_options,
        alpha1=get("knowledge", "alpha1"),
        alpha2=get("knowledge", "alpha2"),
        gamma=get("knowledge", "gamma"),
        k_neighbors=get("knowledge", "k_neighbors"),
        train_fraction=get("evaluation", "train_fraction"),
        folds=get("evaluation", "folds"),
        subsample=get("evaluation", "subsample"),
    )
    if spec.is_synthetic and spec.profile not in PROFILES:
        raise ConfigError(f"unknown synthetic profile {spec.profile!r}", values[("experiment", "dataset")][1])
    logging.debug(f"Parsed experiment config {path}")
    return spec
