#pragma once

#include <string>

#include "gradselect/model.hpp"

namespace gradselect {

// Binary model snapshot: little-endian header + raw parameter doubles.
// Exact round trip, used so scoring and retraining can run as separate
// CLI stages.
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

}  // namespace gradselect
