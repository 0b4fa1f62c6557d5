"""
Algorithm plugins, looked up by name.

Lookup ignores case and punctuation, so "Per-FedAvg", "perfedavg" and
"PER_FEDAVG" resolve to the same plugin.
"""

import re
from typing import Dict, List, Optional, Type

from ..errors import UnknownAlgorithmError
from .aggregation import Apfl, FedAla, FedAmp
from .base import AlgorithmPlugin
from .distillation import FedDistill, FedProto
from .meta import PerFedAvg
from .regularized import Ditto, PFedMe
from .splitting import FedBabu, FedPer, FedRep, FedRod, LgFedAvg
from .tfl import FedAvg, FedProx, Scaffold

PLUGINS: List[Type[AlgorithmPlugin]] = [
    FedAvg,
    FedProx,
    Scaffold,
    PerFedAvg,
    PFedMe,
    Ditto,
    Apfl,
    FedAmp,
    FedAla,
    FedPer,
    FedRep,
    LgFedAvg,
    FedBabu,
    FedRod,
    FedProto,
    FedDistill,
]

ALIASES = {"perfedavgfo": "perfedavg"}


def normalize_name(name: str) -> str:
    key = re.sub(r"[^a-z0-9]", "", name.lower())
    return ALIASES.get(key, key)


REGISTRY: Dict[str, Type[AlgorithmPlugin]] = {normalize_name(p.name): p for p in PLUGINS}


def available_algorithms() -> List[str]:
    return [p.name for p in PLUGINS]


def get_plugin_class(name: str) -> Type[AlgorithmPlugin]:
    try:
        return REGISTRY[normalize_name(name)]
    except KeyError:
        raise UnknownAlgorithmError(name, available_algorithms()) from None


def create_plugin(name: str, hyperparams: Optional[Dict[str, float]] = None) -> AlgorithmPlugin:
    return get_plugin_class(name)(hyperparams)


__all__ = [
    "AlgorithmPlugin",
    "PLUGINS",
    "REGISTRY",
    "available_algorithms",
    "create_plugin",
    "get_plugin_class",
    "normalize_name",
]
