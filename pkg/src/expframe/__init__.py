"""expframe: classical pipeline for extracting experiment frames from scientific text.

Submodules:
    corpus      data model, JSONL interchange, BIO codec, splits
    features    sparse and dense feature extraction, embedding tables
    linear      logistic regression and linear SVM sentence classifiers
    crf         linear-chain CRF tagger with exact inference
    evaluation  span/classification metrics, agreement, cross-validation
    cli         command line interface
"""

__version__ = "0.1.0"
