#pragma once

// Offline stand-in for every model role. Each reply is a pure function of the
// seed and the request, so runs are reproducible under any thread schedule.

#include <cstdint>
#include <memory>
#include <string>

#include "ppol/llm_gateway.hpp"

namespace ppol {

struct MockOptions {
    std::uint64_t seed = 7;
    std::string stop_marker = "###STOP###";
};

std::string mock_respond(const CompletionRequest& request, const MockOptions& options);
std::shared_ptr<LlmClient> make_mock_client(MockOptions options = {});

}  // namespace ppol
