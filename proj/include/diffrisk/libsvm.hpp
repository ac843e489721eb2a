#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>

#include "diffrisk/types.hpp"

namespace diffrisk {

/// Reads `label idx:val ...` lines (1-indexed features, `#` comments). Labels +1/-1/1 pass
/// through and 0 maps to -1; anything else raises LabelDomain. Without `expected_dim` the
/// dimension is the largest index seen.
Dataset read_libsvm(std::istream& in, std::optional<std::size_t> expected_dim = std::nullopt);
Dataset load_libsvm(const std::string& path, std::optional<std::size_t> expected_dim = std::nullopt);

/// Writes nonzero entries with round-trip precision.
void write_libsvm(std::ostream& out, const Dataset& data);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double x);

}  // namespace diffrisk
