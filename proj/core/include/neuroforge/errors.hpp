#pragma once

#include <stdexcept>
#include <string>

namespace nf {

// Caller passed something structurally invalid (bad shape, bad id, bad config value).
class RejectedInput : public std::runtime_error {
public:
    explicit RejectedInput(const std::string& what) : std::runtime_error(what) {}
};

// A computation produced a non-finite value. Carries where it happened.
class NumericFailure : public std::runtime_error {
public:
    NumericFailure(const std::string& what, int where = -1)
        : std::runtime_error(what), where_(where) {}
    // layer index or epoch index, depending on context; -1 if unknown
    int where() const { return where_; }

private:
    int where_;
};

// A backdoor injection did not reach its contract (divergence, detector too weak).
class InjectionFailure : public std::runtime_error {
public:
    InjectionFailure(const std::string& what, int epoch = -1)
        : std::runtime_error(what), epoch_(epoch) {}
    int epoch() const { return epoch_; }

private:
    int epoch_;
};

// A required artifact from an earlier pipeline stage is absent.
class UpstreamMissing : public std::runtime_error {
public:
    explicit UpstreamMissing(const std::string& what) : std::runtime_error(what) {}
};

// On-disk artifact does not match its format contract.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what, long long offset = -1)
        : std::runtime_error(what), offset_(offset) {}
    long long offset() const { return offset_; }

private:
    long long offset_;
};

}  // namespace nf
