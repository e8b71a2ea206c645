#pragma once

#include <stdexcept>
#include <string>

namespace mlsa {

// Base class for every error raised by the engine. Subclasses carry no extra
// state; callers dispatch on type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ingest
class SourceError : public Error { using Error::Error; };
class ExtractionError : public Error { using Error::Error; };
class EmptyTextError : public Error { using Error::Error; };

// mqlog
class TopicExists : public Error { using Error::Error; };
class UnknownTopic : public Error { using Error::Error; };
class InvalidCommit : public Error { using Error::Error; };
class LogIoError : public Error { using Error::Error; };

// archive
class ArchiveError : public Error { using Error::Error; };

// sentiment_model
class ModelShapeError : public Error { using Error::Error; };
class ModelLoadError : public Error { using Error::Error; };
class TrainDataError : public Error { using Error::Error; };

// analytics / cli
class QueryError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };

}  // namespace mlsa
