"""Causal auditing of demographic bias in peer-review outcomes, plus a fairness-regularized ranker."""

__version__ = "0.1.0"

from .data import Dataset, PaperRecord, TreatmentSpec, parse_csv, summarize, write_csv  # noqa: E402
from .errors import CausalAuditError  # noqa: E402
from .estimators import CausalEstimate, estimate, intersectional_ate, stratified_ate  # noqa: E402
from .fairrank import FairnessConfig, TrainHyper, ablation, lambda_sweep, train  # noqa: E402
from .scm import ScmConfig, simulate, true_ate  # noqa: E402
