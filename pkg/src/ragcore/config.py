"""Application configuration: one JSON file wiring every component.

Paths inside the file are resolved relative to the file itself. The
shape is validated against the published JSON schema (shipped at
``ragcore/data/config.schema.json``) and then semantically: referenced
files must exist at load time, and nested configs must parse.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import Decimal
from importlib import resources
from pathlib import Path

import jsonschema

from .agent import BotSpec, load_bot_registry
from .errors import ConfigInvalid
from .gateway import ProviderConfig
from .guardrails import DEFAULT_FAILURE, GuardrailPolicy
from .pipeline import PipelineConfig


def _schema() -> dict:
    text = resources.files("ragcore").joinpath("data/config.schema.json").read_text("utf-8")
    return json.loads(text)


@dataclass
class AppConfig:
    path: Path
    data_dir: Path
    listen_host: str
    listen_port: int
    corpora: dict[str, Path]
    bots: dict[str, BotSpec]
    default_bot_id: str
    policy: GuardrailPolicy
    providers: list[ProviderConfig]
    default_pipeline: PipelineConfig
    templates_dir: Path | None
    embedding_dim: int
    failure_message: str
    subscriptions: list[dict] = field(default_factory=list)

    @classmethod
    def load(cls, config_path) -> "AppConfig":
        config_path = Path(config_path)
        if not config_path.is_file():
            raise ConfigInvalid(f"config file not found: {config_path}")
        try:
            raw = json.loads(config_path.read_text("utf-8"), parse_float=Decimal)
        except json.JSONDecodeError as e:
            raise ConfigInvalid(f"{config_path}:{e.lineno}: invalid JSON: {e.msg}") from None

        try:
            jsonschema.validate(
                raw, _schema(),
                cls=jsonschema.validators.Draft202012Validator,
            )
        except jsonschema.ValidationError as e:
            where = "/".join(str(p) for p in e.absolute_path) or "(root)"
            raise ConfigInvalid(f"{config_path}: {where}: {e.message}") from None

        base = config_path.parent

        def resolve(rel: str, fieldname: str, must_exist: bool = True) -> Path:
            p = (base / rel).resolve()
            if must_exist and not p.exists():
                raise ConfigInvalid(f"{config_path}: {fieldname}: file not found: {p}")
            return p

        corpora = {
            cid: resolve(rel, f"corpora.{cid}") for cid, rel in raw["corpora"].items()
        }
        policy_path = resolve(raw["guardrail_policy"], "guardrail_policy")
        try:
            policy = GuardrailPolicy.load(policy_path)
        except (ConfigInvalid, json.JSONDecodeError) as e:
            raise ConfigInvalid(f"{config_path}: guardrail_policy: {e}") from None

        try:
            default_pipeline = PipelineConfig.from_dict(raw.get("default_pipeline", {}))
        except ConfigInvalid as e:
            raise ConfigInvalid(f"{config_path}: default_pipeline: {e}") from None

        registry_path = resolve(raw["bot_registry"], "bot_registry")
        bots = load_bot_registry(registry_path, default_pipeline)
        if not bots:
            raise ConfigInvalid(f"{config_path}: bot_registry: no bots defined")
        for bot in bots.values():
            if bot.corpus_id not in corpora:
                raise ConfigInvalid(
                    f"{config_path}: bot {bot.bot_id!r} references unknown "
                    f"corpus {bot.corpus_id!r}"
                )
        default_bot_id = raw.get("default_bot_id", next(iter(bots)))
        if default_bot_id not in bots:
            raise ConfigInvalid(
                f"{config_path}: default_bot_id: unknown bot {default_bot_id!r}"
            )

        providers = []
        for i, entry in enumerate(raw["providers"]):
            if "script_path" in entry:
                resolve(entry["script_path"], f"providers[{i}].script_path")
            try:
                providers.append(ProviderConfig.from_dict(entry, base_dir=base))
            except (ConfigInvalid, KeyError) as e:
                raise ConfigInvalid(f"{config_path}: providers[{i}]: {e}") from None

        templates_dir = None
        if raw.get("templates_dir"):
            templates_dir = resolve(raw["templates_dir"], "templates_dir")

        listen = raw.get("listen", "127.0.0.1:8080")
        host, _, port_text = listen.partition(":")
        try:
            port = int(port_text or "8080")
        except ValueError:
            raise ConfigInvalid(f"{config_path}: listen: bad port {port_text!r}") from None

        return cls(
            path=config_path,
            data_dir=(base / raw["data_dir"]).resolve(),
            listen_host=host or "127.0.0.1",
            listen_port=port,
            corpora=corpora,
            bots=bots,
            default_bot_id=default_bot_id,
            policy=policy,
            providers=providers,
            default_pipeline=default_pipeline,
            templates_dir=templates_dir,
            embedding_dim=int(raw.get("embedding_dim", 1024)),
            failure_message=raw.get("failure_message", DEFAULT_FAILURE),
            subscriptions=[
                {
                    "subscription_id": s["subscription_id"],
                    "quota_units": s.get("quota_units"),
                    "requests_per_minute": s.get("requests_per_minute"),
                }
                for s in raw.get("subscriptions", [])
            ],
        )
