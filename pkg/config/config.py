import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()

# Project root directory (where config.py resides)
PROJECT_ROOT = Path(__file__).parent.parent


def get_env_with_default(key: str, default: str) -> str:
    """Get env variable with default"""
    return os.getenv(key, default)


LOG_LEVEL = get_env_with_default("BOOST_RPF_LOG_LEVEL", "INFO").upper()

# Default output directory of the CLI commands
OUT_DIR = Path(get_env_with_default("BOOST_RPF_OUT_DIR", "out"))

# Voltage method registry (OS-agnostic, relative paths resolve against the project root)
METHOD_CONFIG_PATH = (PROJECT_ROOT / get_env_with_default("BOOST_RPF_METHOD_CONFIG", "config/method_config.yml")).resolve()
