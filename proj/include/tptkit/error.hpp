#pragma once

#include <stdexcept>
#include <string>

namespace tptkit {

/// Base for every error raised by the library. `kind()` is a stable tag used
/// in the CLI's structured error report.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

private:
  std::string kind_;
};

#define TPTKIT_DEFINE_ERROR(Name, Tag)                                         \
  class Name : public Error {                                                  \
  public:                                                                      \
    explicit Name(const std::string& what) : Error(Tag, what) {}               \
  };

TPTKIT_DEFINE_ERROR(RangeError, "range")
TPTKIT_DEFINE_ERROR(ConfigError, "config")
TPTKIT_DEFINE_ERROR(IngestError, "ingest")
TPTKIT_DEFINE_ERROR(InputError, "input")
TPTKIT_DEFINE_ERROR(ShapeError, "shape")
TPTKIT_DEFINE_ERROR(NumericError, "numeric")
TPTKIT_DEFINE_ERROR(DegenerateError, "degenerate")
TPTKIT_DEFINE_ERROR(LookupError, "lookup")
TPTKIT_DEFINE_ERROR(UnrecoverableSeriesError, "unrecoverable_series")
TPTKIT_DEFINE_ERROR(MissingArtifactError, "missing_artifact")

#undef TPTKIT_DEFINE_ERROR

/// Training diverged; carries the epoch at which the loss became non-finite.
class TrainingError : public Error {
public:
  TrainingError(int epoch, const std::string& what)
      : Error("training", what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

private:
  int epoch_;
};

} // namespace tptkit
