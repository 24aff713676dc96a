"""
Loads the YAML files under config/macrolimit
"""
import functools
import os

import yaml

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'config', 'macrolimit')


def load_yaml_config(config_filepath):
    with open(config_filepath, 'r') as stream:
        config = yaml.safe_load(stream)
    return config or {}


@functools.lru_cache(maxsize=None)
def get_config(name='config'):
    """`name` is the file stem: 'config' for runtime defaults, 'rubric' for acceptance constants."""
    return load_yaml_config(os.path.join(CONFIG_DIR, name + '.yaml'))


def setting(path, default=None, name='config'):
    """Dotted lookup, e.g. setting('prbox.psd_tolerance')."""
    node = get_config(name)
    for key in path.split('.'):
        if not isinstance(node, dict) or key not in node:
            return default
        node = node[key]
    return node
