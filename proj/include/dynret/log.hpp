#pragma once

#include <string_view>

// Minimal stderr logging. Quiet mode suppresses info but never warnings.
namespace dynret::log {

void set_quiet(bool quiet);
bool quiet();
void info(std::string_view msg);
void warn(std::string_view msg);

}  // namespace dynret::log
