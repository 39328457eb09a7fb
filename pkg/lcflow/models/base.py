import logging
from abc import ABC, abstractmethod

import numpy as np

logger = logging.getLogger(__name__)


class ModelMetric(ABC):
    """Abstract base class for rotationally symmetric model metrics g(s) i dz^dz-bar."""

    name: str = ""

    @abstractmethod
    def coefficient(self, s: np.ndarray) -> np.ndarray:
        """Return the metric coefficient g(s) at the given log-radii."""

    @abstractmethod
    def potential(self, s: np.ndarray) -> np.ndarray:
        """Return a radial potential P with P_ss = g * e^s."""

    def einstein_constant(self) -> float:
        """Return lambda in Ric = lambda * g (-1 for the negative KE models)."""
        return -1.0

    @abstractmethod
    def get_info_summary(self) -> dict:
        """Return a dict of key-value pairs describing the model."""
