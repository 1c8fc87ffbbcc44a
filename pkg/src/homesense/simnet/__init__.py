from .core import LOSS_PRESETS, Channel, Delivery, FaultKind, FaultWindow, LossModel, VirtualClock, deliver
from .scenario import (
    GATEWAY,
    MetricsReport,
    ProvisioningResult,
    Simulation,
    drain_time,
    inject_fault,
    run_provisioning,
    run_scenario,
)

__all__ = [
    "LOSS_PRESETS",
    "Channel",
    "Delivery",
    "FaultKind",
    "FaultWindow",
    "LossModel",
    "VirtualClock",
    "deliver",
    "GATEWAY",
    "MetricsReport",
    "ProvisioningResult",
    "Simulation",
    "drain_time",
    "inject_fault",
    "run_provisioning",
    "run_scenario",
]
