"""In-home air-quality sensor network: covert-channel WiFi provisioning,
durable sensor queues and a gateway that pulls, stores and uploads samples."""

from . import errors
from .collect_proto import DedupSink, PullRequest, PullResponse, SchedulerState, SensorDescriptor
from .config import DeploymentConfig, ScenarioConfig, builtin_scenario, load_config, parse_config
from .covert_frame import CovertFrame, FrameHeader, build_frame, pack_header, parse_frame, unpack_header
from .cred_envelope import Credentials, FecParams, KeyPair, LossTable, SealedMessage, fec_params, seal, unseal
from .durable_queue import DataSample, DurableQueue
from .provisioner import EventKind, GatewayProvisionState, SensorProvisionState
from .simnet import FaultWindow, LossModel, MetricsReport, run_provisioning, run_scenario

__version__ = "0.1.0"

__all__ = [
    "errors",
    "DedupSink",
    "PullRequest",
    "PullResponse",
    "SchedulerState",
    "SensorDescriptor",
    "DeploymentConfig",
    "ScenarioConfig",
    "builtin_scenario",
    "load_config",
    "parse_config",
    "CovertFrame",
    "FrameHeader",
    "build_frame",
    "pack_header",
    "parse_frame",
    "unpack_header",
    "Credentials",
    "FecParams",
    "KeyPair",
    "LossTable",
    "SealedMessage",
    "fec_params",
    "seal",
    "unseal",
    "DataSample",
    "DurableQueue",
    "EventKind",
    "GatewayProvisionState",
    "SensorProvisionState",
    "FaultWindow",
    "LossModel",
    "MetricsReport",
    "run_provisioning",
    "run_scenario",
]
