"""Named SDE models selectable from an experiment config."""

import inspect
from dataclasses import dataclass
from typing import Any, Callable, Dict, Union

from sdeoperator.utils.errors import ConfigError
from sdeoperator.utils.particles import McKeanVlasovModel, burgers_model, interaction_free_model
from sdeoperator.utils.solvers import (SdeModel, brownian_model, gaussian_langevin_model,
                                       gbm_model, ou_model)

AnyModel = Union[SdeModel, McKeanVlasovModel]


@dataclass(frozen=True)
class ModelEntry:
    factory: Callable[..., AnyModel]
    kind: str
    summary: str

    @property
    def mean_field(self) -> bool:
        return self.kind == "mckean-vlasov"

    def defaults(self) -> Dict[str, Any]:
        return {name: p.default for name, p in inspect.signature(self.factory).parameters.items()
                if p.default is not inspect.Parameter.empty}


MODEL_REGISTRY: Dict[str, ModelEntry] = {
    "gbm": ModelEntry(gbm_model, "sde", "dX = aX dt + bX dB"),
    "ou": ModelEntry(ou_model, "sde", "dX = -aX dt + b dB"),
    "brownian": ModelEntry(brownian_model, "sde", "dX = sigma dB"),
    "langevin": ModelEntry(gaussian_langevin_model, "sde",
                           "dX = 1/2 grad log p(X) dt + dB, p = N(mean, std^2)"),
    "burgers": ModelEntry(burgers_model, "mckean-vlasov",
                          "dX = (int H(X - y) mu(dy)) dt + sigma dB"),
    "free": ModelEntry(interaction_free_model, "mckean-vlasov", "dX = drift dt + sigma dB"),
}


def get_entry(name: str) -> ModelEntry:
    try:
        return MODEL_REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(MODEL_REGISTRY))
        raise ConfigError(f"Unknown model '{name}'. Known models: {known}")


def build_model(name: str, params: Dict[str, Any]) -> AnyModel:
    """Instantiate a registered model; parameter names must match the factory."""
    entry = get_entry(name)
    accepted = set(inspect.signature(entry.factory).parameters)
    unknown = sorted(set(params) - accepted)
    if unknown:
        raise ConfigError(
            f"Model '{name}' does not take {unknown}. Parameters: {', '.join(sorted(accepted))}")
    try:
        return entry.factory(**params)
    except TypeError as exc:
        raise ConfigError(f"Model '{name}': {exc}")
