"""
Finite-support prior of the channel input X.

Finite support keeps P(y), E[X|Y] and I(X;Y) computable by exact enumeration.
"""

import json
import math
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
from numpy.typing import NDArray

from shared.errors import ValidationError
from shared.numerics import Mat, RngStream, Vec, as_mat, as_vec

logger = logging.getLogger(__name__)

PROB_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class FiniteDistribution:
    """
    Finite-support distribution over input vectors.

    Attributes:
        atoms: K x n array, one support point per row
        probs: length-K probabilities summing to one
    """
    atoms: Mat
    probs: Vec

    def __post_init__(self):
        atoms = self.atoms
        if np.ndim(atoms) == 1:
            atoms = np.reshape(atoms, (-1, 1))
        atoms = as_mat(atoms, name='atoms')
        probs = as_vec(self.probs, name='probs')

        if atoms.shape[0] != probs.shape[0]:
            raise ValidationError(
                f"got {atoms.shape[0]} atoms but {probs.shape[0]} probabilities")
        if np.any(probs < 0):
            raise ValidationError("probabilities must be nonnegative")
        total = math.fsum(probs.tolist())
        if abs(total - 1.0) > PROB_TOLERANCE:
            raise ValidationError(f"probabilities must sum to 1 within {PROB_TOLERANCE}, got {total!r}")
        if len({row.tobytes() for row in atoms}) != atoms.shape[0]:
            raise ValidationError("atoms must be pairwise distinct; use FiniteDistribution.merged")

        atoms.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, 'atoms', atoms)
        object.__setattr__(self, 'probs', probs)

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def log_probs(self) -> Vec:
        with np.errstate(divide='ignore'):
            return np.log(self.probs)

    @property
    def is_deterministic(self) -> bool:
        return int(np.count_nonzero(self.probs)) == 1

    def require_nonnegative(self) -> None:
        """Poisson inputs must have nonnegative entries."""
        if np.any(self.atoms < 0):
            raise ValidationError("Poisson channel inputs must have nonnegative entries")

    @classmethod
    def merged(cls, atoms: Any, probs: Any) -> 'FiniteDistribution':
        """Build a distribution after merging duplicate atoms (probabilities add)."""
        atoms = as_mat(atoms, name='atoms')
        probs = as_vec(probs, name='probs')
        merged: Dict[bytes, int] = {}
        rows = []
        weights = []
        for row, p in zip(atoms, probs):
            key = row.tobytes()
            if key in merged:
                weights[merged[key]] += float(p)
            else:
                merged[key] = len(rows)
                rows.append(row)
                weights.append(float(p))
        return cls(np.array(rows), np.array(weights))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'FiniteDistribution':
        if 'atoms' not in data or 'probs' not in data:
            raise ValidationError("prior JSON needs 'atoms' and 'probs'")
        return cls(np.array(data['atoms'], dtype=np.float64), np.array(data['probs'], dtype=np.float64))

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> 'FiniteDistribution':
        try:
            data = json.loads(Path(path).read_text(encoding='utf-8'))
        except (OSError, json.JSONDecodeError) as e:
            raise ValidationError(f"cannot read prior {path}: {e}")
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return {"atoms": self.atoms.tolist(), "probs": self.probs.tolist()}


def sample(d: FiniteDistribution, rng: RngStream) -> Vec:
    """Return atom k with probability probs[k]."""
    index = int(rng.generator.choice(d.size, p=d.probs))
    return d.atoms[index].copy()


def sample_indices(d: FiniteDistribution, rng: RngStream, count: int) -> NDArray[np.int64]:
    return rng.generator.choice(d.size, size=int(count), p=d.probs)


def mean(d: FiniteDistribution) -> Vec:
    return d.probs @ d.atoms
