#pragma once

#include <stdexcept>
#include <string>

namespace sonate {

// Stable machine-readable failure codes. The CLI prints these on stderr as
// "E_<name>: <message>" so scripts can branch on them.
enum class Errc {
    MissingSection,
    UnknownTag,
    TagMismatch,
    UnmappableCharacter,
    VocabMiss,
    ShapeMismatch,
    SegmentCountExceeded,
    OddHeadWidth,
    InsufficientData,
    EmptyInput,
    MissingNoiseSource,
    ZeroVector,
    ConstructionFailure,
    DurationTooShort,
    BadMagic,
    VersionMismatch,
    TruncatedFile,
    DimOverflow,
    DegenerateCovariance,
    SchemaError,
    CorruptCheckpoint,
    UsageError,
    IoError,
};

inline const char* errc_name(Errc c) {
    switch (c) {
        case Errc::MissingSection: return "MissingSection";
        case Errc::UnknownTag: return "UnknownTag";
        case Errc::TagMismatch: return "TagMismatch";
        case Errc::UnmappableCharacter: return "UnmappableCharacter";
        case Errc::VocabMiss: return "VocabMiss";
        case Errc::ShapeMismatch: return "ShapeMismatch";
        case Errc::SegmentCountExceeded: return "SegmentCountExceeded";
        case Errc::OddHeadWidth: return "OddHeadWidth";
        case Errc::InsufficientData: return "InsufficientData";
        case Errc::EmptyInput: return "EmptyInput";
        case Errc::MissingNoiseSource: return "MissingNoiseSource";
        case Errc::ZeroVector: return "ZeroVector";
        case Errc::ConstructionFailure: return "ConstructionFailure";
        case Errc::DurationTooShort: return "DurationTooShort";
        case Errc::BadMagic: return "BadMagic";
        case Errc::VersionMismatch: return "VersionMismatch";
        case Errc::TruncatedFile: return "TruncatedFile";
        case Errc::DimOverflow: return "DimOverflow";
        case Errc::DegenerateCovariance: return "DegenerateCovariance";
        case Errc::SchemaError: return "SchemaError";
        case Errc::CorruptCheckpoint: return "CorruptCheckpoint";
        case Errc::UsageError: return "UsageError";
        case Errc::IoError: return "IoError";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool cond, Errc code, const std::string& message) {
    if (!cond) raise(code, message);
}

}  // namespace sonate
