#include "sallie/format.hpp"

#include <cstdio>

namespace sallie {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s(buf);
  if (s == "-0" || s.find_first_not_of("-0.") == std::string::npos) {
    if (s.front() == '-') s.erase(0, 1);  // no negative zero in reports
  }
  return s;
}

std::string fixed(const std::optional<double>& v, int decimals) { return v ? fixed(*v, decimals) : "undef"; }

std::string fmt_row(const std::vector<std::string>& cells, const std::vector<std::size_t>& widths) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::string cell = cells[i];
    const std::size_t w = i < widths.size() ? widths[i] : 0;
    if (cell.size() < w) cell.append(w - cell.size(), ' ');
    if (i + 1 < cells.size()) cell += "  ";
    out += cell;
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

}  // namespace sallie
