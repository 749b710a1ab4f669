"""Leveraged value investors, margin calls and the statistics of the prices they make."""

__version__ = "0.1.0"

from .config import ConfigError, FundParams, LeveragePolicy, ModelConfig, default_funds  # noqa: E402
from .engine import RunArtifact, run, step  # noqa: E402

__all__ = ["ConfigError", "FundParams", "LeveragePolicy", "ModelConfig", "RunArtifact",
           "default_funds", "run", "step", "__version__"]
