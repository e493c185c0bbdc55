"""Unplanned hospital readmission prediction from loosely structured EHR event logs."""
from .baseline import TfidfLogisticBaseline
from .cohort import Example, build_cohort, build_examples, oversample_positives, split_by_patient
from .featurize import EHRFeaturizer, Vocabulary, build_vocab
from .metrics import EvalReport, auroc, evaluate, precision_recall
from .records import Admission, EventRecord, group_by_patient, parse_admissions, parse_records
from .seqmodel import ReadmissionLSTMClassifier
from .synth import SynthConfig, generate, verify_labels

__version__ = "0.1.0"

__all__ = [
    "Admission",
    "EHRFeaturizer",
    "EvalReport",
    "EventRecord",
    "Example",
    "ReadmissionLSTMClassifier",
    "SynthConfig",
    "TfidfLogisticBaseline",
    "Vocabulary",
    "auroc",
    "build_cohort",
    "build_examples",
    "build_vocab",
    "evaluate",
    "generate",
    "group_by_patient",
    "oversample_positives",
    "parse_admissions",
    "parse_records",
    "precision_recall",
    "split_by_patient",
    "verify_labels",
]
