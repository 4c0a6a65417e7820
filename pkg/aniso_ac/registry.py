from typing import Callable, Type

from .anisotropy import AnisotropySpec, hexagon, isotropic, regularized_l1
from .base import Shape
from .shapes import Circle, Constant, FullDomain, Hexagon, ShapeUnion, Square, Star

ANISOTROPY_REGISTRY: dict[str, Callable[..., AnisotropySpec]] = {
    "isotropic": isotropic,
    "l1": regularized_l1,
    "hexagon": hexagon,
}

SHAPE_REGISTRY: dict[str, Type[Shape]] = {
    "circle": Circle,
    "square": Square,
    "hexagon": Hexagon,
    "star": Star,
    "union": ShapeUnion,
    "full_domain": FullDomain,
    "constant": Constant,
}
