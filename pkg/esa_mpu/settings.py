from dataclasses import MISSING, InitVar, dataclass, field, fields
from typing import Any, Literal

from django.conf import settings
from django.utils.functional import empty


class MissingSettingsError(Exception):
    keys: list[str]

    def __init__(self, members: str | list[str] | list["MissingSettingsError"], *args):
        super().__init__(*args)
        keys = []
        if not isinstance(members, list):
            members = [members]
        for member in members:
            if isinstance(member, MissingSettingsError):
                keys.extend(member.keys)
            else:
                keys.append(member)
        self.keys = keys

    def __str__(self):
        return ", ".join(self.keys)


@dataclass
class SettingsBase:
    user_settings: InitVar[Any]

    def __post_init__(self, user_settings: Any):
        errors = []

        for own_field in fields(self):
            if isinstance(user_settings, dict):
                user_setting = user_settings.get(own_field.name, empty)
            elif user_settings is not None:
                user_setting = user_settings
            else:
                user_setting = empty

            if isinstance(own_field.type, type) and issubclass(own_field.type, SettingsBase):
                try:
                    setattr(self, own_field.name, own_field.type(user_settings=user_setting))
                except MissingSettingsError as e:
                    errors.append(MissingSettingsError([f"{own_field.name}.{key}" for key in e.keys]))
            elif user_setting is not empty:
                setattr(self, own_field.name, user_setting)
            else:
                if own_field.default is MISSING and own_field.default_factory is MISSING:
                    errors.append(MissingSettingsError(own_field.name))
        if errors:
            raise MissingSettingsError(errors)


@dataclass
class TrainingSettings(SettingsBase):
    LOSS: Literal["square_quarter", "logistic", "margin_square"] = field(init=False, default="margin_square")
    OPTIMIZER: Literal["sgd", "adadelta"] = field(init=False, default="adadelta")
    LEARNING_RATE: float = field(init=False, default=0.08)
    MOMENTUM: float = field(init=False, default=0.0)
    RHO: float = field(init=False, default=0.95)
    EPSILON: float = field(init=False, default=1e-6)
    EPOCHS: int = field(init=False, default=50)
    BATCH_SIZE: int = field(init=False, default=128)
    HIDDEN_LAYERS: tuple[int, ...] = field(init=False, default=(128,))
    SIGMA_M: float = field(init=False, default=0.0)
    SIGMA_U: float = field(init=False, default=0.0)
    SIEVE_START_EPOCH: int = field(init=False, default=1)


@dataclass
class VerifySettings(SettingsBase):
    TRIALS: int = field(init=False, default=10_000)
    DECAY_SIZES: tuple[int, ...] = field(init=False, default=(10, 100, 1000))
    RANDOM_INSTANCES: int = field(init=False, default=100)
    RANDOM_DOMAINS: int = field(init=False, default=50)
    SEED: int = field(init=False, default=0)


@dataclass
class OutputSettings(SettingsBase):
    FLOAT_FORMAT: str = field(init=False, default="%.10g")
    REPORT_FORMAT: Literal["text", "json"] = field(init=False, default="text")


@dataclass
class Settings(SettingsBase):
    TRAINING: TrainingSettings = field(init=False)
    VERIFY: VerifySettings = field(init=False)
    OUTPUT: OutputSettings = field(init=False)


esa_settings = Settings(getattr(settings, "ESA_MPU", None))
