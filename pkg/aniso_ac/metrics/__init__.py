from .logger import MetricsLogger
