"""Protocol-layer multiview traffic representations and the PACC classifier.

Subpackages map onto the pipeline stages: :mod:`pacc.pcap` (capture parsing
and flow assembly), :mod:`pacc.views` (bit-level layer views), :mod:`pacc.info`
(redundancy measures), :mod:`pacc.autograd` (reverse-mode differentiation and
Adam), :mod:`pacc.model`, :mod:`pacc.trainer`, :mod:`pacc.evaluation` and
:mod:`pacc.cli`.
"""
from .errors import PaccError, PaccInputError, PaccRuntimeError
from .evaluation import MetricsReport, evaluate, export_embeddings, metrics
from .info import redundancy_report, nonredundancy_check, silhouette
from .model import ModelConfig, PACCModel, predict, total_loss
from .pcap import FlowKey, FlowRecord, assemble_flows, ingest, parse_packet, read_pcap
from .trainer import ABLATIONS, TrainConfig, run_ablations, split, train
from .views import (Layer, MaskSpec, MultiviewDataset, ViewConfig, build_views, export_views,
                    import_views)

__all__ = [
    "ABLATIONS", "FlowKey", "FlowRecord", "Layer", "MaskSpec", "MetricsReport", "ModelConfig",
    "MultiviewDataset", "PACCModel", "PaccError", "PaccInputError", "PaccRuntimeError",
    "TrainConfig", "ViewConfig", "assemble_flows", "build_views", "evaluate", "export_embeddings",
    "export_views", "import_views", "ingest", "metrics", "nonredundancy_check", "parse_packet",
    "predict", "read_pcap", "redundancy_report", "run_ablations", "silhouette", "split",
    "total_loss", "train",
]

__version__ = "0.1.0"
