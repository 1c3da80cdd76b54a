#pragma once

#include <vector>

#include "ppol/genome.hpp"

namespace ppol::seed {

const std::vector<AxisSpec>& axes();
extern const char* const population_system;
extern const char* const population_template;
extern const char* const roleplay_system;
extern const char* const roleplay_template;
/// Placeholders: metrics_block, task_context_block, pairs_block.
extern const char* const reflection_template;

}  // namespace ppol::seed
