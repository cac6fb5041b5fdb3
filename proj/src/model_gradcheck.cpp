#include "pros/gradcheck.hpp"

namespace pros {

// placeholder until encoder and loss land
std::vector<GradCheckCase> loss_gradcheck_cases(uint64_t) { return {}; }

}  // namespace pros
