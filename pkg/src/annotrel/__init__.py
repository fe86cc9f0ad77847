"""Annotation reliability toolkit: competence estimation, agreement and label aggregation."""

from .aggregate import LabelStatistics, label_statistics, majority_vote, union_vote
from .agreement import AlphaReport, CoincidenceMatrix, alpha_by_class, alpha_threshold_sweep, coincidences, nominal_alpha
from .core import (
    AnnotationFormatError,
    AnnotationMatrix,
    CampaignRecord,
    ItemId,
    LabelVocabulary,
    expand_to_items,
    filter_annotators,
    parse_campaign,
    subset_by_label,
)
from .mace import GroundTruthEstimate, MaceConfig, MaceModel, em_fit, log_likelihood, predict, threshold_at
from .simulate import CampaignSpec, SyntheticCampaign, generate_campaign, generate_spammers

__version__ = "0.1.0"
