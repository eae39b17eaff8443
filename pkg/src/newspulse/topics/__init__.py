"""Topic modeling: vocabulary, spline prevalence basis, model fitting and evaluation."""
from .agreement import TopicLabel, krippendorff_alpha, label_table, load_labels
from .evaluate import (expected_topic_share, heldout_loglik, outlet_topic_shares, permute_topics,
                       select_k, split_heldout, top_words, weekly_topic_shares)
from .io import load_model, save_model
from .spline import BSplineBasis, spline_basis, spline_knots
from .stm import StructuralTopicModel, TopicModel, fit_model, infer_theta
from .vocab import StemmedVectorizer, Vocabulary, build_vocab

__all__ = [
    "BSplineBasis", "StemmedVectorizer", "StructuralTopicModel", "TopicLabel", "TopicModel", "Vocabulary",
    "build_vocab", "expected_topic_share", "fit_model", "heldout_loglik", "infer_theta",
    "krippendorff_alpha", "label_table", "load_labels", "load_model", "outlet_topic_shares",
    "permute_topics", "save_model", "select_k", "spline_basis", "spline_knots", "split_heldout",
    "top_words", "weekly_topic_shares",
]
