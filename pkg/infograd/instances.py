"""
Canonical instances used by the verify suites, the golden fixtures and the tests.

S1: scalar Poisson, X in {1, 3} equiprobable, phi = 1, dark = 0.5.
V1: 2 x 2 Poisson, atoms (1,0), (0,1), (1,1) with probs (0.4, 0.4, 0.2).
V1-Gaussian: V1's prior and scaling matrix through the Gaussian channel.
D1: 10-word vocabulary, 4 topic profiles, 3 measurements, box-constrained design.
"""

import json
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from shared.errors import ValidationError
from infograd.design.projection import Constraint, DesignProblem
from infograd.models.channels import GaussianChannel, PoissonChannel
from infograd.models.input_model import FiniteDistribution

V1_PHI = [[1.0, 0.5], [0.2, 1.0]]

D1_TOPICS = ((0, 1, 2), (3, 4, 5), (6, 7), (8, 9))
D1_SEED = 11


def s1() -> Tuple[PoissonChannel, FiniteDistribution]:
    return PoissonChannel([[1.0]], [0.5]), FiniteDistribution(np.array([1.0, 3.0]), np.array([0.5, 0.5]))


def v1_prior() -> FiniteDistribution:
    return FiniteDistribution(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]), np.array([0.4, 0.4, 0.2]))


def v1() -> Tuple[PoissonChannel, FiniteDistribution]:
    return PoissonChannel(V1_PHI, [0.1, 0.1]), v1_prior()


def v1_gaussian() -> Tuple[GaussianChannel, FiniteDistribution]:
    return GaussianChannel(V1_PHI), v1_prior()


def d1_prior() -> FiniteDistribution:
    """Each atom is a topic's word-rate profile: 0.6 on its words, 0.05 elsewhere."""
    atoms = np.full((len(D1_TOPICS), 10), 0.05)
    for k, words in enumerate(D1_TOPICS):
        atoms[k, list(words)] = 0.6
    return FiniteDistribution(atoms, np.full(len(D1_TOPICS), 1.0 / len(D1_TOPICS)))


def d1() -> DesignProblem:
    return DesignProblem(prior=d1_prior(), m=3, dark=np.full(3, 0.1), constraint=Constraint.parse('box01'),
                         seed=D1_SEED)


INSTANCES = {'S1': s1, 'V1': v1, 'V1-Gaussian': v1_gaussian}


def write_instance(name: str, directory: Union[str, Path]) -> Dict[str, Path]:
    """Write an instance as channel.json and prior.json; returns the two paths."""
    if name not in INSTANCES:
        raise ValidationError(f"unknown instance {name!r}; choose from {', '.join(INSTANCES)}")
    ch, d = INSTANCES[name]()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"channel": directory / 'channel.json', "prior": directory / 'prior.json'}
    paths["channel"].write_text(json.dumps(ch.to_dict()), encoding='utf-8')
    paths["prior"].write_text(json.dumps(d.to_dict()), encoding='utf-8')
    return paths
