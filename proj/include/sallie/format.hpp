#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

namespace sallie {

/// Fixed-point rendering with the given number of decimals.
std::string fixed(double v, int decimals);
/// Same, or "undef" when the value is undefined.
std::string fixed(const std::optional<double>& v, int decimals);

/// Left-aligned columns padded to the given widths; a width of 0 means no padding.
std::string fmt_row(const std::vector<std::string>& cells, const std::vector<std::size_t>& widths);

}  // namespace sallie
