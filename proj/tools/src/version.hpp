#pragma once

namespace nowcast::cli {

inline constexpr const char* kToolVersion = NOWCAST_VERSION;
inline constexpr int kFormatVersion = 1;

}  // namespace nowcast::cli
