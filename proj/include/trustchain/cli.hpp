#pragma once

// Placeholder until the full command tree lands.
namespace trustchain::cli {
inline int run(int, char**) { return 0; }
}  // namespace trustchain::cli
