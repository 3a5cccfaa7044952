"""Readers, AUC and MRMC statistics."""
from .observer import (CaseSet, Reader, ReaderStudy, channel_bank, channel_responses, load_reader,
                       prepare_image, read_scores_csv, run_study, save_reader, score, score_cases,
                       train_reader, write_scores_csv)
from .stats import auc, image_moments, mrmc_bootstrap, mrmc_ci

__all__ = ["CaseSet", "Reader", "ReaderStudy", "channel_bank", "channel_responses", "load_reader",
           "prepare_image", "read_scores_csv", "run_study", "save_reader", "score", "score_cases",
           "train_reader", "write_scores_csv", "auc", "image_moments", "mrmc_bootstrap", "mrmc_ci"]
