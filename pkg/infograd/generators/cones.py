from dataclasses import dataclass
from enum import Enum

import numpy as np

from shared.errors import ValidationError

DEFAULT_TOLERANCE = 1e-12


class ConeKind(str, Enum):
    ENTRYWISE_NONNEG = 'entrywise_nonneg'
    PSD_SQUARE = 'psd_square'


@dataclass(frozen=True)
class ConeOrder:
    """
    Partial order A <=_K B iff B - A lies in the proper cone K.

    entrywise_nonneg: the nonnegative orthant of matrices.
    psd_square: positive semidefinite square matrices; the symmetric part is tested.
    """
    kind: ConeKind

    @classmethod
    def parse(cls, value: str) -> 'ConeOrder':
        try:
            return cls(ConeKind(value))
        except ValueError:
            raise ValidationError(f"unknown cone {value!r}; use entrywise_nonneg or psd_square")

    def margin(self, mat) -> float:
        """Smallest entry (entrywise) or smallest eigenvalue (PSD); negative means outside the cone."""
        arr = np.asarray(mat, dtype=np.float64)
        if self.kind is ConeKind.ENTRYWISE_NONNEG:
            return float(arr.min())
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValidationError(f"the PSD cone needs square matrices, got shape {arr.shape}")
        return float(np.linalg.eigvalsh(0.5 * (arr + arr.T)).min())

    def margins(self, mats) -> np.ndarray:
        """Batched margin over leading axes of a (..., r, c) stack."""
        arr = np.asarray(mats, dtype=np.float64)
        if self.kind is ConeKind.ENTRYWISE_NONNEG:
            return arr.min(axis=(-2, -1))
        if arr.shape[-1] != arr.shape[-2]:
            raise ValidationError(f"the PSD cone needs square matrices, got shape {arr.shape[-2:]}")
        sym = 0.5 * (arr + np.swapaxes(arr, -1, -2))
        return np.linalg.eigvalsh(sym)[..., 0]

    def contains(self, mat, tol: float = DEFAULT_TOLERANCE) -> bool:
        return self.margin(mat) >= -tol

    def leq(self, a, b, tol: float = DEFAULT_TOLERANCE) -> bool:
        """a <=_K b."""
        return self.contains(np.asarray(b) - np.asarray(a), tol)


ENTRYWISE = ConeOrder(ConeKind.ENTRYWISE_NONNEG)
PSD = ConeOrder(ConeKind.PSD_SQUARE)
