# config package
from .settings import configure_logging, get_jobs, get_log_level, get_output_root

__all__ = ["configure_logging", "get_jobs", "get_log_level", "get_output_root", "load_run_config"]


def __getattr__(name):
    # Imported lazily: run_config depends on models.configs, which imports config.settings.
    if name == "load_run_config":
        from .run_config import load_run_config
        return load_run_config
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
