import os


def config_path(*append) -> str:
    """Path of a packaged configuration file such as ``default.yaml``."""
    return os.path.join(os.path.dirname(__file__), *append)
