"""Latent-space texture editing, texture QA, generative metrics, a software
head renderer and detection-dataset tooling for synthetic pedestrian assets."""

__version__ = "0.1.0"

from .detection import (BoundingBox, DatasetManifest, DetClass, MixSpec, Source, average_precision, build_mix,
                        iou, map_at_50)
from .direction import LabeledLatentSet, LinearSVM, SvmConfig, learn_direction_pipeline, train_linear_svm
from .exceptions import (CapacityError, ConfigError, DegenerateDataError, InfeasibleError, InvalidArgumentError,
                         LookupMissError, ParseError, UvforgeError)
from .generator import CorpusGenerator, SampleRecord, Texture, ToyGenerator, plan_demographic_batch
from .latent import (AttributeDirection, LatentEditor, LatentVec, Space, StepPolicy, TruncationConfig,
                     adaptive_step, edit, manipulate, signed_distance, truncate)
from .metrics import CorpusStats, MetricResult, PixelStatExtractor, corpus_stats, fid, kid, precision_recall
from .pipeline import InstanceManifest, PipelineConfig, assemble_instances, run_pipeline
from .qa import MahalanobisScorer, QaConfig, QaReport, TintClassifier, validate_texture
from .render import Mesh, ViewSpec, head_mesh, parse_obj, render, three_d_fid, three_d_kid

__all__ = [name for name in dir() if not name.startswith("_")]
