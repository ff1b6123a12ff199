#!/usr/bin/env python3
"""
Settings - Shared Utility
JSON configuration loading with default merging, and logging setup
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from core.errors import ConfigError

CONFIG_DIR = Path(__file__).parent.parent / "config"

LOGGING_DEFAULTS = {
    'level': 'INFO',
    'log_to_file': False,
    'log_file': 'logs/lpcrash.log',
    'format': '%(asctime)s %(levelname)s %(name)s: %(message)s'
}


def load_json_config(path) -> Dict[str, Any]:
    """Read a JSON settings file; a missing file is an error, an empty one is {}"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        text = path.read_text(encoding='utf-8')
        return json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e


def load_app_config(name: str, config_dir: Optional[Path] = None) -> Dict[str, Any]:
    """Load config/<name>.json, returning {} when the file is absent"""
    config_file = Path(config_dir or CONFIG_DIR) / f"{name}.json"
    try:
        if config_file.exists():
            return load_json_config(config_file)
        return {}
    except ConfigError as e:
        logging.error(f"Error loading app config {name}: {e}")
        return {}


def merge_config(defaults: Dict[str, Any], overrides: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    """Recursive {**defaults, **overrides}; nested sections merge key by key"""
    merged = dict(defaults)
    for key, value in (overrides or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_config(merged[key], value)
        else:
            merged[key] = value
    return merged


def setup_logging(logging_config: Optional[Dict[str, Any]] = None, verbose: bool = False):
    """Configure the root logger from the app_config "logging" block"""
    settings = {**LOGGING_DEFAULTS, **(logging_config or {})}
    level = logging.DEBUG if verbose else getattr(logging, str(settings['level']).upper(), logging.INFO)

    handlers = [logging.StreamHandler()]
    if settings.get('log_to_file'):
        log_file = Path(settings['log_file'])
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding='utf-8'))

    logging.basicConfig(level=level, format=settings['format'], handlers=handlers, force=True)
    logging.captureWarnings(True)
    return level
