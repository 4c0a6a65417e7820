from abc import ABC, abstractmethod

import numpy as np
from pydantic import BaseModel, ConfigDict


class Shape(BaseModel, ABC):
    model_config = ConfigDict(extra="forbid", frozen=True)

    @abstractmethod
    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        """Signed distance to the shape boundary for (n, 2) points, positive inside."""
        pass

    @abstractmethod
    def bounding_box(self) -> tuple[float, float, float, float] | None:
        """(xmin, xmax, ymin, ymax), or None for shapes defined on the whole domain."""
        pass
