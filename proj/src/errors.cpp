#include "filmedgan/errors.hpp"

#include <sstream>
#include <vector>

namespace filmedgan {

std::string shape_string(const std::vector<int64_t>& sizes) {
  std::ostringstream out;
  out << '[';
  for (size_t i = 0; i < sizes.size(); ++i) {
    if (i) out << ", ";
    out << sizes[i];
  }
  out << ']';
  return out.str();
}

}  // namespace filmedgan
