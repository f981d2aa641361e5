import ast
import copy
import importlib.util
import logging
import os.path
import pprint
import types

from inflect.errors import ConfigError

logger = logging.getLogger(__name__)

LOCAL_CONFIG_PATH = os.path.join('configs', 'conf_local.py')
LOADER_KEYS = ['config_file_name', 'config_dir', 'save']


def deep_update(target: dict, source: dict) -> dict:
    """Merge ``source`` into ``target``; dict sections merge key by key, everything else is replaced."""
    for key, value in source.items():
        if isinstance(value, dict) and isinstance(target.get(key), dict):
            deep_update(target[key], value)
        else:
            target[key] = copy.deepcopy(value)
    return target


class Config:
    """
    Attribute-style access to an experiment configuration.

    A configuration is a Python module whose public top-level names become
    attributes. Nested sections are plain dicts (``model = dict(num_layers=6)``).
    A module may list parent configs in ``_base_``; parents are applied first,
    in order, and the module's own names override them; dict sections merge
    key by key. An untracked ``configs/conf_local.py`` is applied last when
    present.

    Methods:
        load_from_file(config_path): Load a configuration module.
        load_from_dict(dictionary): Build a configuration from a dict.
        save_to_file(run_dir): Write the resolved configuration next to run artifacts.
    """

    def __init__(self, dictionary=None, config_file_name=None, config_dir=None, save=True):
        if dictionary:
            for key, value in dictionary.items():
                setattr(self, key, value)
        self.save = save
        self.config_file_name = config_file_name
        self.config_dir = config_dir

    @classmethod
    def load_from_file(cls, config_path, apply_local=True):
        if not os.path.isfile(config_path):
            raise ConfigError(f"Config file not found: {config_path}")

        model_config = cls.import_config_from_path(config_path)
        config_dir = os.path.dirname(os.path.abspath(config_path))
        config = {}

        for base_path in getattr(model_config, '_base_', []):
            # Base paths are resolved relative to the including file
            if not os.path.isabs(base_path):
                base_path = os.path.join(config_dir, base_path)
            base_config = cls.load_from_file(base_path, apply_local=False)
            deep_update(config, base_config.to_clean_dict())

        deep_update(config, cls.filter_keys(vars(model_config).items()))

        if apply_local and os.path.exists(LOCAL_CONFIG_PATH):
            local_config = cls.import_config_from_path(LOCAL_CONFIG_PATH)
            deep_update(config, cls.filter_keys(vars(local_config).items()))
            logger.info(f"Applied local overrides from {LOCAL_CONFIG_PATH}")

        if not config:
            raise ConfigError(f"Config file {config_path} defines no settings")

        return cls(config, os.path.basename(config_path), config_dir=config_dir)

    @classmethod
    def load_from_dict(cls, dictionary):
        """
        Initialize a Config object from a dictionary.

        Handles ``_base_`` entries the same way as `load_from_file`; the
        dictionary's own keys win over any base. No local overrides are
        applied, so a config rebuilt from a checkpoint stays exactly as saved.
        """
        config = {}
        for base_path in dictionary.get('_base_', []):
            deep_update(config, cls.load_from_file(base_path, apply_local=False).to_clean_dict())
        deep_update(config, cls.filter_keys(dictionary.items()))
        return cls(config, None, save=False)

    def apply_overrides(self, overrides):
        """
        Apply ``section.key=value`` strings on top of the loaded configuration.

        Values are parsed as Python literals and fall back to plain strings.
        """
        for item in overrides or []:
            if '=' not in item:
                raise ConfigError(f"Override '{item}' is not of the form key=value")
            dotted, raw = item.split('=', 1)
            try:
                value = ast.literal_eval(raw)
            except (ValueError, SyntaxError):
                value = raw

            *sections, key = dotted.strip().split('.')
            if not sections:
                setattr(self, key, value)
                continue
            target = getattr(self, sections[0], None)
            if not isinstance(target, dict):
                raise ConfigError(f"Override '{item}' targets unknown section '{sections[0]}'")
            for section in sections[1:]:
                target = target.setdefault(section, {})
            target[key] = value
        return self

    def save_to_file(self, run_dir, file_name=None):
        """
        Write the resolved configuration as a Python module.

        Each parameter becomes one ``key = repr(value)`` line, so the written
        file can be loaded again with `load_from_file`.
        """
        if not self.save:
            raise ConfigError("Only a derived config has been loaded, which cannot be saved.")

        file_name = file_name or self.config_file_name
        if file_name is None:
            raise ConfigError("Target file name not specified and original config name unknown.")

        os.makedirs(run_dir, exist_ok=True)
        file_path = os.path.join(run_dir, file_name)
        with open(file_path, 'w') as f:
            for key, value in sorted(self.to_clean_dict().items()):
                f.write(f'{key} = {repr(value)}\n')
        return file_path

    def to_clean_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k not in LOADER_KEYS}

    def section(self, name, default=None) -> dict:
        value = getattr(self, name, default)
        if value is None:
            return {}
        if not isinstance(value, dict):
            raise ConfigError(f"Config section '{name}' must be a dict, got {type(value).__name__}")
        return dict(value)

    def __str__(self):
        return pprint.pformat(self.to_clean_dict(), indent=4, width=1)

    @staticmethod
    def filter_keys(items):
        return {k: v for k, v in items
                if not k.startswith('_') and not isinstance(v, (types.ModuleType, types.FunctionType, type))}

    @staticmethod
    def import_config_from_path(path):
        module_name = os.path.basename(path).split('.')[0]
        spec = importlib.util.spec_from_file_location(module_name, path)
        if spec is None or spec.loader is None:
            raise ConfigError(f"Config file {path} is not an importable Python module")
        module = importlib.util.module_from_spec(spec)
        try:
            spec.loader.exec_module(module)
        except Exception as e:
            raise ConfigError(f"Could not evaluate config {path}: {e}") from e
        return module
