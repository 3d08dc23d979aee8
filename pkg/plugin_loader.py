import importlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from errors import BadConfig, UnknownMethod
from plugins.voltage_method import VoltageMethod

logger = logging.getLogger(__name__)


@dataclass
class MethodConfig:
    """One entry of the voltage method registry"""
    name: str
    path: str
    classname: str
    enabled: bool = True
    aliases: List[str] = field(default_factory=list)


class MethodLoader:

    def __init__(self, method_config: Union[str, Path], options: Optional[Dict[str, Any]] = None):
        self.method_config_path = method_config
        self.options = dict(options or {})

        self.method_configs: List[MethodConfig] = []
        self.loaded_methods: Dict[str, VoltageMethod] = {}

        logger.debug("Method Loader initialized")

    def load_config(self) -> List[MethodConfig]:
        if self.method_configs:
            return self.method_configs
        try:
            with open(self.method_config_path, 'r', encoding='utf-8') as config_file:
                config_data = yaml.safe_load(config_file) or {}

            self.method_configs = [
                MethodConfig(
                    name=method.get('name', ''),
                    path=method.get('path', ''),
                    classname=method.get('classname', ''),
                    enabled=method.get('enabled', True),
                    aliases=list(method.get('aliases', [])),
                )
                for method in config_data.get('methods', [])
            ]
            logger.debug(f"Loaded configuration for {len(self.method_configs)} methods")
        except FileNotFoundError:
            logger.error(f"Method configuration file can not be found: {self.method_config_path}")
            raise
        except yaml.YAMLError as e:
            logger.error(f"YAML parsing error: {e}")
            raise BadConfig(f"Method configuration {self.method_config_path} is not valid YAML: {e}") from e
        return self.method_configs

    def names(self) -> List[str]:
        return [config.name for config in self.load_config() if config.enabled]

    def resolve(self, name: str) -> MethodConfig:
        """Registry entry for a method name or alias; disabled entries are unknown"""
        for config in self.load_config():
            if config.enabled and (name == config.name or name in config.aliases):
                return config
        raise UnknownMethod(f"Unknown method '{name}', expected one of {self.names()}")

    def _load_method(self, config: MethodConfig, options: Optional[Dict[str, Any]] = None) -> VoltageMethod:
        logger.debug(f"Loading method module {config.name} ({config.classname})")
        try:
            module = importlib.import_module(config.path)
        except ImportError as e:
            logger.error(f"Failed to import module {config.path} for method {config.name}: {e}")
            raise BadConfig(f"Method {config.name}: module {config.path} can not be imported") from e
        if not hasattr(module, config.classname):
            logger.error(f"Class {config.classname} not found in module {config.path}")
            raise BadConfig(f"Method {config.name}: class {config.classname} not found in {config.path}")

        method_logger = logging.getLogger(config.classname)
        method_cls = getattr(module, config.classname)
        return (
            method_cls()
            .set_name(config.name)
            .set_logger(method_logger)
            .set_options({**self.options, **(options or {})})
        )

    def get(self, name: str, options: Optional[Dict[str, Any]] = None) -> VoltageMethod:
        """A fresh, unprepared instance of the named method"""
        return self._load_method(self.resolve(name), options)

    def load_methods(self) -> Dict[str, VoltageMethod]:
        for config in self.load_config():
            if not config.enabled:
                logger.info(f"Skipping disabled method: {config.name}")
                continue
            self.loaded_methods[config.name] = self._load_method(config)
        return self.loaded_methods
