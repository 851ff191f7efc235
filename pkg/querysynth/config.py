"""
Process-wide settings.

Secrets and endpoints come from the environment (a `.env` file is loaded first);
everything else lives in RunConfig (models/run.py).
"""
from typing import Optional

from dotenv import load_dotenv
from pydantic import AliasChoices, Field
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv()


class BackendSettings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="QUERYSYNTH_", extra="ignore")

    api_key: Optional[str] = Field(
        default=None,
        validation_alias=AliasChoices("QUERYSYNTH_API_KEY", "OPENAI_API_KEY"),
    )
    base_url: Optional[str] = None
    model: str = "gpt-4o"
    request_timeout: float = 120.0
    max_retries: int = 3
    temperature: float = 0.2
    max_tokens: int = 2048
    count_with_tiktoken: bool = True


class StorageSettings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="QUERYSYNTH_STORAGE_", extra="ignore")

    zone_map_block_size: int = 2048
    use_mmap: bool = False
    dictionary_ndv_limit: int = 1 << 16
    delimiter: str = "|"
    null_token: str = ""


class KernelSettings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="QUERYSYNTH_KERNEL_", extra="ignore")

    morsel_size: int = 65536
    load_factor_cap: float = 0.7
    hash_seed: int = 0
    prefetch_batch: int = 1024


def backend_settings() -> BackendSettings:
    return BackendSettings()


def storage_settings() -> StorageSettings:
    return StorageSettings()


def kernel_settings() -> KernelSettings:
    return KernelSettings()
