#pragma once

#include <functional>
#include <string>

#include "c123/config.hpp"

namespace c123 {

// Shared by the CLI binary and the test suites. Each command works inside a
// run directory (--out): dataset/, ckpt_base.c123, ckpt_consistency.c123,
// loss_<stage>.csv, samples/, eval_<mode>.csv, ablate_<axis>.csv. The
// effective config is written next to every output.
void cmd_dataset(const RunConfig& cfg, const std::string& run_dir, int jobs);
void cmd_train(const RunConfig& cfg, const std::string& run_dir);
void cmd_sample(const RunConfig& cfg, const std::string& run_dir);
void cmd_eval(const RunConfig& cfg, const std::string& run_dir, int jobs);
void cmd_ablate(const RunConfig& cfg, const std::string& run_dir, const std::string& axis,
                int jobs);

// Data-parallel map over [0,n) with `jobs` workers; exceptions propagate.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

}  // namespace c123
