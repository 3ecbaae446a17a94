#pragma once

#include <string_view>
#include <utility>
#include <vector>

namespace fairmonitor::detail {

/// (name, body) for every file under prompts/, embedded at build time.
const std::vector<std::pair<std::string_view, std::string_view>>& builtin_prompt_sources();

} // namespace fairmonitor::detail
