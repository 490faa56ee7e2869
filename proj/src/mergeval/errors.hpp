#pragma once

#include <stdexcept>
#include <string>

namespace mergeval {

// Error families map 1:1 onto CLI exit codes (see tools/mergeval_main.cpp).
enum class ErrorFamily {
    Config = 1,    // bad flags, bad config file
    Format = 2,    // malformed checkpoint / manifest / labels file
    Contract = 3,  // merge preconditions violated (shapes, name sets, ranks)
    Scoring = 4,   // scoring preconditions violated
    Endpoint = 5,  // endpoint failures that survived retries
    Io = 6,        // filesystem failures
};

struct Error : std::runtime_error {
    ErrorFamily family;
    Error(ErrorFamily f, const std::string& msg) : std::runtime_error(msg), family(f) {}
};

// tensorstore
struct MalformedHeader : Error {
    explicit MalformedHeader(const std::string& m) : Error(ErrorFamily::Format, m) {}
};
struct OverlapError : Error {
    explicit OverlapError(const std::string& m) : Error(ErrorFamily::Format, m) {}
};
struct DuplicateName : Error {
    explicit DuplicateName(const std::string& m) : Error(ErrorFamily::Format, m) {}
};
struct UnknownTensor : Error {
    explicit UnknownTensor(const std::string& m) : Error(ErrorFamily::Format, m) {}
};
struct TruncatedPayload : Error {
    explicit TruncatedPayload(const std::string& m) : Error(ErrorFamily::Format, m) {}
};

// merge-core
struct ShapeMismatch : Error {
    explicit ShapeMismatch(const std::string& m) : Error(ErrorFamily::Contract, m) {}
};
struct NameSetMismatch : Error {
    explicit NameSetMismatch(const std::string& m) : Error(ErrorFamily::Contract, m) {}
};
struct UnresolvedTarget : Error {
    explicit UnresolvedTarget(const std::string& m) : Error(ErrorFamily::Contract, m) {}
};
struct RankMismatch : Error {
    explicit RankMismatch(const std::string& m) : Error(ErrorFamily::Contract, m) {}
};
struct OrphanHalf : Error {
    explicit OrphanHalf(const std::string& m) : Error(ErrorFamily::Contract, m) {}
};
struct InvalidMergeSpec : Error {
    explicit InvalidMergeSpec(const std::string& m) : Error(ErrorFamily::Contract, m) {}
};

// eval-scoring
struct TruthNotInLabelSet : Error {
    explicit TruthNotInLabelSet(const std::string& m) : Error(ErrorFamily::Scoring, m) {}
};
struct DuplicateSample : Error {
    explicit DuplicateSample(const std::string& m) : Error(ErrorFamily::Scoring, m) {}
};
struct InvalidLabelSet : Error {
    explicit InvalidLabelSet(const std::string& m) : Error(ErrorFamily::Scoring, m) {}
};
struct EmptySummary : Error {
    explicit EmptySummary(const std::string& m) : Error(ErrorFamily::Scoring, m) {}
};

// prompt-harness
struct MissingField : Error {
    explicit MissingField(const std::string& m) : Error(ErrorFamily::Contract, m) {}
};
struct PoolExhausted : Error {
    explicit PoolExhausted(const std::string& m) : Error(ErrorFamily::Contract, m) {}
};
struct PoolOverlap : Error {
    explicit PoolOverlap(const std::string& m) : Error(ErrorFamily::Contract, m) {}
};
struct ManifestError : Error {
    explicit ManifestError(const std::string& m) : Error(ErrorFamily::Format, m) {}
};
struct UnknownSampleId : Error {
    explicit UnknownSampleId(const std::string& m) : Error(ErrorFamily::Format, m) {}
};
struct MissingGroundTruth : Error {
    explicit MissingGroundTruth(const std::string& m) : Error(ErrorFamily::Format, m) {}
};
struct EndpointError : Error {
    explicit EndpointError(const std::string& m) : Error(ErrorFamily::Endpoint, m) {}
};

// filesystem
struct IoError : Error {
    explicit IoError(const std::string& m) : Error(ErrorFamily::Io, m) {}
};
struct OutputExists : Error {
    explicit OutputExists(const std::string& m) : Error(ErrorFamily::Io, m) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error(ErrorFamily::Config, m) {}
};

}  // namespace mergeval
