"""
Runtime settings and shared defaults.

Settings are read from the environment (prefix ``SEMFUSION_``) and from a
``.env`` file in the working directory.
"""

from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict

# Configuration
DEFAULT_POINTS_PER_VOXEL = 32
DEFAULT_NUM_CLASSES = 4
AAF_LOCAL_CHANNELS = 64     # C1
AAF_GLOBAL_CHANNELS = 128   # C2
AAF_ATTENTION_HIDDEN = 64
DFF_IN_CHANNELS = 16        # C (desk scale; 256 in the detector setting)
DFF_OUT_CHANNELS = 32       # C' (desk scale; 512 in the detector setting)
DFF_BLOCK_CHANNELS = 128
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
ONE_CYCLE_DIV_START = 25.0
ONE_CYCLE_DIV_END = 1e4


class Settings(BaseSettings):
    """Process-wide knobs that do not change experiment results."""

    model_config = SettingsConfigDict(
        env_prefix="SEMFUSION_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    workers: int = 1
    log_level: str = "INFO"
    dump_dir: Path = Path("dump")
    progress: bool = True


def get_settings() -> Settings:
    return Settings()
