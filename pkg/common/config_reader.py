import hashlib
import json
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, TypeVar, Union

import yaml


T = TypeVar("T")


class ConfigError(ValueError):
    """Raised when a configuration file or value violates its contract.

    Always a user-facing problem (bad key, out-of-range value, unwritable
    path), so the CLI maps it to its own exit code.
    """


def _base_dir() -> Path:
    """Project root (parent of 'common/')."""
    return Path(__file__).resolve().parent.parent


def resource_path(relative: Union[str, Path]) -> Path:
    return _base_dir() / Path(relative)


def config_hash(obj: Any) -> str:
    """Stable sha256 over the canonical JSON form of a config dataclass or dict."""
    if is_dataclass(obj) and not isinstance(obj, type):
        obj = asdict(obj)
    canonical = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ConfigReader:
    """YAML Config reader class"""

    def __init__(
        self, config_file: Optional[Union[str, Path]] = None, data: Optional[dict] = None
    ):
        self.path: Optional[Path] = None
        if data is not None:
            self.config = data
            return

        self.config: Dict[str, Any] = {}
        if config_file is None:
            return

        cfg_path = Path(config_file)
        if not cfg_path.exists() and not cfg_path.is_absolute():
            cfg_path = resource_path(config_file)
        if cfg_path.exists():
            with open(cfg_path, "r", encoding="utf-8") as f:
                loaded = yaml.safe_load(f)
            if loaded is not None and not isinstance(loaded, dict):
                raise ConfigError(f"{cfg_path}: top level must be a mapping")
            self.config = loaded or {}
            self.path = cfg_path

    def section(self, name: str) -> "ConfigReader":
        """Reader over a nested mapping. A missing section reads as empty."""
        value = self.config.get(name) if self.config else None
        if value is None:
            return ConfigReader(data={})
        if not isinstance(value, dict):
            raise ConfigError(f"Section '{name}' must be a mapping")
        return ConfigReader(data=value)

    def get_config_def(
        self,
        field: str,
        t: Union[Callable[[Any], T], List[Callable[[Any], T]]],
        default: T,
    ) -> T:
        """Get config value

        Args:
            field (str): config key
            t: type to which the value is casted. A list of types is tried in order.
            default: returned when the key is missing or "none"

        Returns:
            T: Value, or default
        """
        if self.config is None or not self.config:
            return default

        if field in self.config:
            if isinstance(t, list):
                for typ in t:
                    try:
                        return self.get_config_def(field, typ, default)
                    except (TypeError, ValueError):
                        pass
                return default
            val = self.config[field]
            if val is None or (isinstance(val, str) and val.lower() == "none"):
                return default
            try:
                return t(val)  # type: ignore
            except (TypeError, ValueError) as e:
                raise ConfigError(f"Field '{field}': {e}") from e
        else:
            return default
