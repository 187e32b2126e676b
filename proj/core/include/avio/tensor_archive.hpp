#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "avio/lie.hpp"

namespace avio {

/// Named-tensor text archive. Values are written as C hexfloats so that a
/// save/load round trip is bit-exact.
void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, const MatX*>>& blocks);

std::map<std::string, MatX> load_tensors(const std::string& path);

}  // namespace avio
