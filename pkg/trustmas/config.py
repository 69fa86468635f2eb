from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix='trustmas_')

    out: str = '.'
    db_url: str = 'sqlite+aiosqlite:///trustmas.sqlite3'
    log_level: str = 'WARNING'
    oracle_max_nodes: int = 12
    walk_hit_max_roster: int = 20
