#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocloc/checkpoint.hpp"
#include "ocloc/config.hpp"
#include "ocloc/loss.hpp"
#include "ocloc/scene.hpp"

namespace ocloc {

// Raised when the objective or its gradient stops being finite; carries a
// diagnostic dump of the step's loss terms.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainStats {
  LossBreakdown loss;       // batch-mean terms
  double grad_norm = 0.0;   // batch-mean gradient norm, before clipping
  double lr = 0.0;
  double temperature = 0.0;
  int64_t M = 0;
  int64_t step = 0;         // the step this record describes
};

// Single-threaded optimization loop. All randomness for step s comes from
// one per-step stream seeded by the master rng, so a resumed run replays
// the remaining steps exactly.
class Trainer {
 public:
  Trainer(const Config& config, std::vector<Scene> dataset);
  Trainer(const Checkpoint& ck, std::vector<Scene> dataset);

  TrainStats step();

  int64_t current_step() const { return step_; }
  const Config& config() const { return cfg_; }
  ParamStore<float>& params() { return params_; }
  const ParamStore<float>& params() const { return params_; }
  Checkpoint checkpoint() const;

  // Steps to total_steps, appending one JSON record per step to
  // <out_dir>/train_log.jsonl (echoed to stdout when echo is set), with
  // periodic checkpoints. Returns the final checkpoint path.
  std::string run(const std::string& out_dir, bool echo);

  static std::string log_record(const TrainStats& st);

 private:
  void check_dataset() const;

  Config cfg_;
  std::vector<Scene> dataset_;
  ParamStore<float> params_;
  AdamState adam_;
  Rng master_;
  int64_t step_ = 0;
};

}  // namespace ocloc
