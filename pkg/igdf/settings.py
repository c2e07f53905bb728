# igdf/settings.py
import logging
from typing import Optional

from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load environment variables from .env file
load_dotenv()

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


# Pydantic Settings for process-level configuration
class Settings(BaseSettings):
    log_level: str = "INFO"
    log_file: Optional[str] = None  # Also log to this file when set
    output_root: str = "runs"
    database_url: Optional[str] = None  # Defaults to <output_dir>/runs.sqlite

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="IGDF_",
        extra="ignore",
    )


def configure_logging(settings: Optional[Settings] = None) -> None:
    """
    Install the stream handler (and the optional file handler) on the igdf logger.

    Safe to call more than once; handlers are replaced rather than stacked.
    """
    settings = settings or Settings()
    level = getattr(logging, settings.log_level.upper(), logging.INFO)
    formatter = logging.Formatter(LOG_FORMAT)

    root = logging.getLogger("igdf")
    root.setLevel(level)
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()

    stream_handler = logging.StreamHandler()
    stream_handler.setLevel(level)
    stream_handler.setFormatter(formatter)
    root.addHandler(stream_handler)

    if settings.log_file:
        file_handler = logging.FileHandler(settings.log_file)
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)
