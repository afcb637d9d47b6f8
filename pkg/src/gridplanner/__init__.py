"""Instruction-to-subtask planning over scene and robot graphs."""
from .baseline import EchoOracleClient, HTTPChatClient, ParseFailure, PromptConfig, ScriptedClient, baseline_eval, build_prompt, format_subtask, parse_planner_response
from .dataset import ConfigInfeasible, SceneConfig, generate_dataset, write_dataset
from .encoders import EncoderConfig, ExternalEncoder, ToyEncoder, make_encoder
from .estimator import GridPlanner
from .evaluation import LengthMismatch, MajorityPlanner, MetricsReport, OraclePlanner, evaluate, subtask_metrics, task_accuracy
from .graphs import (
    Action,
    Edge,
    InvalidGraph,
    Node,
    ParseError,
    PreconditionViolated,
    RobotGraph,
    SceneGraph,
    Subtask,
    Trace,
    apply_subtask,
    graph_to_text,
    read_traces,
    replay,
    validate_graph,
    write_traces,
)
from .network import GridNetwork, ModelConfig, forward, load_checkpoint, predict, save_checkpoint
from .training import LossConfig, TrainConfig, grid_loss, one_cycle_lr, train

__version__ = "0.1.0"

__all__ = [
    "Action",
    "ConfigInfeasible",
    "EchoOracleClient",
    "Edge",
    "EncoderConfig",
    "ExternalEncoder",
    "GridNetwork",
    "GridPlanner",
    "HTTPChatClient",
    "InvalidGraph",
    "LengthMismatch",
    "LossConfig",
    "MajorityPlanner",
    "MetricsReport",
    "ModelConfig",
    "Node",
    "OraclePlanner",
    "ParseError",
    "ParseFailure",
    "PreconditionViolated",
    "PromptConfig",
    "RobotGraph",
    "SceneConfig",
    "SceneGraph",
    "ScriptedClient",
    "Subtask",
    "ToyEncoder",
    "Trace",
    "TrainConfig",
    "apply_subtask",
    "baseline_eval",
    "build_prompt",
    "evaluate",
    "format_subtask",
    "forward",
    "generate_dataset",
    "graph_to_text",
    "grid_loss",
    "load_checkpoint",
    "make_encoder",
    "one_cycle_lr",
    "parse_planner_response",
    "predict",
    "read_traces",
    "replay",
    "save_checkpoint",
    "subtask_metrics",
    "task_accuracy",
    "train",
    "validate_graph",
    "write_dataset",
    "write_traces",
]
