#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "tsn/trajectory.hpp"

namespace tsn {

struct StepResult {
  std::vector<float> observation;  // padded to shared_obs_dim
  float reward = 0.0f;
  bool done = false;
};

// Deterministic synthetic environment: a pure state machine under its episode
// seed. Observations and rewards are float32-quantized at the source so that
// offline datasets replay bit-exactly.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual const TaskSpec& spec() const = 0;

  // Starts a new episode; the seed fully determines the episode layout.
  virtual std::vector<float> reset(uint64_t episode_seed) = 0;

  // Restores internal state from an observation (synthetic observations
  // encode the full state). Used by dataset replay validation.
  virtual std::vector<float> reset_from_observation(const std::vector<float>& obs) = 0;

  // Discrete control reads action[0] as an index; continuous control reads
  // the native prefix of the (possibly padded) action vector.
  virtual StepResult step(const std::vector<float>& action) = 0;
};

struct ReplayReport {
  struct Entry {
    int trajectory_index = 0;
    double dataset_return = 0.0;
    double replayed_return = 0.0;
    double gap = 0.0;
    bool flagged = false;
  };
  std::vector<Entry> entries;
  double tolerance = 0.0;

  int flagged_count() const {
    int n = 0;
    for (const auto& e : entries) n += e.flagged;
    return n;
  }
  double max_gap() const {
    double g = 0.0;
    for (const auto& e : entries) g = std::max(g, e.gap);
    return g;
  }
  bool all_ok() const { return flagged_count() == 0; }
};

// Replays each trajectory's recorded actions from its recorded initial state
// and compares the obtained return against the dataset return.
inline ReplayReport validate_by_replay(const TrajectoryDataset& dataset, Environment& env,
                                       double tolerance = 1e-6) {
  const TaskSpec& ds_spec = dataset.spec;
  const TaskSpec& env_spec = env.spec();
  require_input(ds_spec.task_id == env_spec.task_id &&
                    ds_spec.control_kind == env_spec.control_kind &&
                    ds_spec.shared_obs_dim == env_spec.shared_obs_dim &&
                    ds_spec.native_action_dim == env_spec.native_action_dim,
                "replay validation: environment does not match dataset task_spec");

  ReplayReport report;
  report.tolerance = tolerance;
  const int d_obs = ds_spec.shared_obs_dim;
  const int a_cols = action_cols(ds_spec);
  for (size_t i = 0; i < dataset.trajectories.size(); ++i) {
    const Trajectory& tr = dataset.trajectories[i];
    const int64_t len = tr.length(d_obs);
    std::vector<float> first_obs(tr.observations.begin(), tr.observations.begin() + d_obs);
    env.reset_from_observation(first_obs);
    double replayed = 0.0;
    for (int64_t k = 0; k < len; ++k) {
      std::vector<float> action(tr.actions.begin() + k * a_cols,
                                tr.actions.begin() + (k + 1) * a_cols);
      StepResult sr = env.step(action);
      replayed += static_cast<double>(sr.reward);
      if (sr.done && k + 1 < len) break;  // premature termination shows up as a gap
    }
    double dataset_return = 0.0;
    for (float r : tr.rewards) dataset_return += static_cast<double>(r);

    ReplayReport::Entry e;
    e.trajectory_index = static_cast<int>(i);
    e.dataset_return = dataset_return;
    e.replayed_return = replayed;
    e.gap = std::abs(replayed - dataset_return);
    e.flagged = e.gap > tolerance;
    report.entries.push_back(e);
  }
  return report;
}

}  // namespace tsn
