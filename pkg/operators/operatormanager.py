import importlib
import logging
import threading

from base.config import Configuration
from operators.operator import OPERATOR_KINDS, OperatorDescriptor, SchrodingerOperator
from schrodinger.errors import ConfigurationError
from schrodinger.spectral import SpectralModel
from schrodinger.tgrid import TGrid

logger = logging.getLogger("schroedinger-lab")


class OperatorManager:
    """Builds operators of every registered kind for one spectral model and keeps them by descriptor checksum"""

    def __init__(self, model: SpectralModel, config: Configuration | None = None):
        self.model = model
        self.config = config or Configuration()
        self.objects: dict[str, SchrodingerOperator] = dict()
        self.lock = threading.Lock()
        self.module = importlib.import_module('operators')

    def operator_class(self, kind: str) -> type[SchrodingerOperator]:
        class_label = OPERATOR_KINDS.get(kind)
        operator_class = getattr(self.module, class_label, None) if class_label else None
        if operator_class is None:
            logger.error('No operator class found for "%s"' % kind)
            raise ConfigurationError(f"unknown operator kind '{kind}'")
        return operator_class

    def get(self, descriptor: OperatorDescriptor, tgrid: TGrid | None = None) -> SchrodingerOperator:
        key = descriptor.checksum if tgrid is None else f"{descriptor.checksum}/{id(tgrid)}"
        with self.lock:
            if key not in self.objects:
                operator_class = self.operator_class(descriptor.kind)
                logger.debug(f"Creating operator {descriptor.label} with class {operator_class.__name__}")
                self.objects[key] = operator_class(descriptor, self.model, config=self.config, tgrid=tgrid,
                                                   manager=self)
            return self.objects[key]

    def for_model(self, model: SpectralModel) -> "OperatorManager":
        """a manager with the same configuration on another model (refined or shrunk grids)"""
        return OperatorManager(model, self.config)
