#pragma once

#include <functional>

namespace nf {

// Runs fn(0), ..., fn(count-1) across up to `jobs` worker threads. Task order
// is unspecified beyond index handout; the first escaped exception is
// rethrown on the calling thread after all workers finish.
void run_tasks(int count, int jobs, const std::function<void(int)>& fn);

}  // namespace nf
