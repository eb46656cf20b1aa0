#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace nf {

// Incremental SHA-256, used for parameter-audit hashes and artifact digests.
class Sha256 {
public:
    Sha256();
    void update(const void* data, std::size_t len);
    // hex digest; finalizes a copy, so update() may continue afterwards
    std::string hex() const;

    static std::string of_bytes(const void* data, std::size_t len);
    static std::string of_floats(const std::vector<float>& v);
    static std::string of_file(const std::string& path);

private:
    void compress(const std::uint8_t* block);

    std::uint32_t state_[8];
    std::uint64_t total_ = 0;
    std::uint8_t buffer_[64];
    std::size_t buffered_ = 0;
};

}  // namespace nf
