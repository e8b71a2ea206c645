"""Streaming sentiment analytics: text prep, LSTM scoring, log, index, reports."""
from ._mlsa import (
    ArchiveError,
    ConfigError,
    EmptyTextError,
    Error,
    EvalReport,
    ExtractionError,
    Hyperparams,
    Index,
    InvalidCommit,
    LogIoError,
    MessageLog,
    Model,
    ModelLoadError,
    ModelShapeError,
    Pipeline,
    QueryError,
    SourceError,
    TopicExists,
    TrainDataError,
    UnknownTopic,
    Vocabulary,
    extract,
    fingerprint,
    label_counts_csv,
    load_sentiment140,
    tokenize,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
