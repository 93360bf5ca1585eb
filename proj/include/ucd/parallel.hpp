#pragma once

#include <cstddef>
#include <functional>

namespace ucd {

// Process-wide cap on worker threads (the CLI `--workers` flag). Every
// parallel region in the library writes disjoint outputs, so results do not
// depend on this value.
void set_workers(std::size_t n);
std::size_t workers();

// Calls body(begin, end) over contiguous chunks of [0, n). Runs inline when
// one worker is configured or n is small.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t min_chunk = 1);

}  // namespace ucd
