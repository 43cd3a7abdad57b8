#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "tsn/config.hpp"
#include "tsn/env.hpp"
#include "tsn/rng.hpp"
#include "tsn/trajectory.hpp"

namespace tsn {

// Uniform hash of (cell, seed) into [0, 1); drives the per-cell action
// permutation dial.
inline double cell_hash01(int64_t cell, uint64_t seed) {
  Rng r(derive_seed(seed, "cell-permutation", static_cast<uint64_t>(cell)));
  return r.uniform();
}

// Discrete-control family: an N x N gridworld with a goal cell, four movement
// actions, terminal reward +1 and step reward 0. The permutation dial theta
// selects the fraction of cells whose action semantics follow a fixed
// derangement instead of the identity, so theta interpolates task similarity
// from identical dynamics (0) to fully remapped actions (1).
class GridKeyEnv : public Environment {
 public:
  static constexpr int kActions = 4;  // up, down, left, right

  GridKeyEnv(const std::string& task_id, int grid_n, uint64_t layout_seed, double theta,
             int max_horizon) {
    require_input(theta >= 0.0 && theta <= 1.0, "gridkey: theta must be in [0, 1]");
    require_input(grid_n >= 2, "gridkey: grid too small");
    grid_n_ = grid_n;
    layout_seed_ = layout_seed;
    theta_ = theta;
    spec_.task_id = task_id;
    spec_.control_kind = ControlKind::kDiscrete;
    spec_.native_action_dim = kActions;
    spec_.shared_action_dim = kActions;
    spec_.native_obs_dim = 2 * grid_n * grid_n;
    spec_.shared_obs_dim = 2 * grid_n * grid_n;
    spec_.max_horizon = max_horizon;
    spec_.family = "gridkey";
    spec_.extra["grid_n"] = std::to_string(grid_n);
    spec_.extra["layout_seed"] = std::to_string(layout_seed);
    spec_.extra["theta"] = detail::format_double(theta);
  }

  const TaskSpec& spec() const override { return spec_; }
  void set_target_return(double r) { spec_.target_return = r; }

  std::vector<float> reset(uint64_t episode_seed) override {
    Rng rng(derive_seed(episode_seed, "gridkey-episode"));
    const int cells = grid_n_ * grid_n_;
    pos_ = static_cast<int>(rng.next_below(static_cast<uint64_t>(cells)));
    do {
      goal_ = static_cast<int>(rng.next_below(static_cast<uint64_t>(cells)));
    } while (goal_ == pos_);
    steps_ = 0;
    done_ = false;
    return observation();
  }

  std::vector<float> reset_from_observation(const std::vector<float>& obs) override {
    require_input(static_cast<int>(obs.size()) == spec_.shared_obs_dim,
                  "gridkey: bad observation size");
    const int cells = grid_n_ * grid_n_;
    pos_ = goal_ = -1;
    for (int i = 0; i < cells; ++i) {
      if (obs[static_cast<size_t>(i)] == 1.0f) pos_ = i;
      if (obs[static_cast<size_t>(cells + i)] == 1.0f) goal_ = i;
    }
    require_input(pos_ >= 0 && goal_ >= 0, "gridkey: observation does not encode a state");
    steps_ = 0;
    done_ = false;
    return observation();
  }

  StepResult step(const std::vector<float>& action) override {
    require(!done_, "gridkey: step after termination");
    require_input(!action.empty(), "gridkey: empty action");
    const int a = static_cast<int>(action[0]);
    require_input(a >= 0 && a < kActions, "gridkey: action out of range");
    pos_ = next_cell(pos_, a);
    ++steps_;
    StepResult out;
    if (pos_ == goal_) {
      out.reward = 1.0f;
      done_ = true;
    } else if (steps_ >= spec_.max_horizon) {
      done_ = true;
    }
    out.done = done_;
    out.observation = observation();
    return out;
  }

  // Effective movement for `action` taken in `cell` under the theta dial.
  int next_cell(int cell, int action) const {
    static constexpr int kDerangement[kActions] = {1, 0, 3, 2};
    const int effective =
        cell_hash01(cell, layout_seed_) < theta_ ? kDerangement[action] : action;
    int row = cell / grid_n_, col = cell % grid_n_;
    switch (effective) {
      case 0: row = std::max(0, row - 1); break;
      case 1: row = std::min(grid_n_ - 1, row + 1); break;
      case 2: col = std::max(0, col - 1); break;
      default: col = std::min(grid_n_ - 1, col + 1); break;
    }
    return row * grid_n_ + col;
  }

  // Scripted expert: breadth-first shortest path to the goal under the true
  // (permuted) dynamics, deterministic tie-breaking by action index.
  int expert_action() const {
    const int cells = grid_n_ * grid_n_;
    std::vector<int> first_action(static_cast<size_t>(cells), -1);
    std::vector<uint8_t> seen(static_cast<size_t>(cells), 0);
    std::deque<int> queue;
    seen[static_cast<size_t>(pos_)] = 1;
    for (int a = 0; a < kActions; ++a) {
      const int nxt = next_cell(pos_, a);
      if (nxt == goal_) return a;
      if (!seen[static_cast<size_t>(nxt)]) {
        seen[static_cast<size_t>(nxt)] = 1;
        first_action[static_cast<size_t>(nxt)] = a;
        queue.push_back(nxt);
      }
    }
    while (!queue.empty()) {
      const int cur = queue.front();
      queue.pop_front();
      for (int a = 0; a < kActions; ++a) {
        const int nxt = next_cell(cur, a);
        if (nxt == goal_) return first_action[static_cast<size_t>(cur)];
        if (!seen[static_cast<size_t>(nxt)]) {
          seen[static_cast<size_t>(nxt)] = 1;
          first_action[static_cast<size_t>(nxt)] = first_action[static_cast<size_t>(cur)];
          queue.push_back(nxt);
        }
      }
    }
    throw ContractViolation("gridkey: goal unreachable");
  }

  int position() const { return pos_; }
  int goal() const { return goal_; }

 private:
  std::vector<float> observation() const {
    std::vector<float> obs(static_cast<size_t>(spec_.shared_obs_dim), 0.0f);
    obs[static_cast<size_t>(pos_)] = 1.0f;
    obs[static_cast<size_t>(grid_n_ * grid_n_ + goal_)] = 1.0f;
    return obs;
  }

  TaskSpec spec_;
  int grid_n_ = 6;
  uint64_t layout_seed_ = 0;
  double theta_ = 0.0;
  int pos_ = 0, goal_ = 0, steps_ = 0;
  bool done_ = false;
};

// Continuous-control family: a point mass in the unit box, velocity actions
// clipped to [-1, 1] per dimension, dense reward -||pos - goal||_2 after each
// move, fixed horizon. The dynamics seed draws a signed axis permutation of
// the action vector, and the native action dimensionality equals the box
// dimension, exercising the padded shared action interface.
class PointReachEnv : public Environment {
 public:
  static constexpr double kDt = 0.5;

  PointReachEnv(const std::string& task_id, int goal_dim, uint64_t dynamics_seed,
                int max_horizon, int shared_obs_dim = 6, int shared_action_dim = 3) {
    require_input(goal_dim >= 1 && goal_dim <= shared_action_dim,
                  "pointreach: goal_dim exceeds shared action dimension");
    dim_ = goal_dim;
    dynamics_seed_ = dynamics_seed;
    spec_.task_id = task_id;
    spec_.control_kind = ControlKind::kContinuous;
    spec_.native_action_dim = goal_dim;
    spec_.shared_action_dim = shared_action_dim;
    spec_.native_obs_dim = 2 * goal_dim;
    spec_.shared_obs_dim = shared_obs_dim;
    spec_.max_horizon = max_horizon;
    spec_.family = "pointreach";
    spec_.extra["goal_dim"] = std::to_string(goal_dim);
    spec_.extra["dynamics_seed"] = std::to_string(dynamics_seed);

    // signed axis permutation: v_eff[i] = sign[i] * a[axis[i]]
    Rng rng(derive_seed(dynamics_seed, "pointreach-dynamics"));
    axis_.resize(static_cast<size_t>(dim_));
    sign_.resize(static_cast<size_t>(dim_));
    for (int i = 0; i < dim_; ++i) axis_[static_cast<size_t>(i)] = i;
    for (int i = dim_ - 1; i > 0; --i)
      std::swap(axis_[static_cast<size_t>(i)],
                axis_[static_cast<size_t>(rng.next_below(static_cast<uint64_t>(i + 1)))]);
    for (int i = 0; i < dim_; ++i) sign_[static_cast<size_t>(i)] = rng.uniform() < 0.5 ? -1.0 : 1.0;
  }

  const TaskSpec& spec() const override { return spec_; }
  void set_target_return(double r) { spec_.target_return = r; }

  std::vector<float> reset(uint64_t episode_seed) override {
    Rng rng(derive_seed(episode_seed, "pointreach-episode"));
    pos_.resize(static_cast<size_t>(dim_));
    goal_.resize(static_cast<size_t>(dim_));
    for (int i = 0; i < dim_; ++i) pos_[static_cast<size_t>(i)] = static_cast<float>(rng.uniform());
    for (int i = 0; i < dim_; ++i) goal_[static_cast<size_t>(i)] = static_cast<float>(rng.uniform());
    steps_ = 0;
    done_ = false;
    return observation();
  }

  std::vector<float> reset_from_observation(const std::vector<float>& obs) override {
    require_input(static_cast<int>(obs.size()) == spec_.shared_obs_dim,
                  "pointreach: bad observation size");
    pos_.assign(obs.begin(), obs.begin() + dim_);
    goal_.assign(obs.begin() + dim_, obs.begin() + 2 * dim_);
    steps_ = 0;
    done_ = false;
    return observation();
  }

  StepResult step(const std::vector<float>& action) override {
    require(!done_, "pointreach: step after termination");
    require_input(static_cast<int>(action.size()) >= dim_, "pointreach: action too short");
    for (int i = 0; i < dim_; ++i) {
      const double a = std::clamp(static_cast<double>(action[static_cast<size_t>(axis_[static_cast<size_t>(i)])]),
                                  -1.0, 1.0);
      const double moved = static_cast<double>(pos_[static_cast<size_t>(i)]) +
                           kDt * sign_[static_cast<size_t>(i)] * a;
      pos_[static_cast<size_t>(i)] = static_cast<float>(std::clamp(moved, 0.0, 1.0));
    }
    ++steps_;
    StepResult out;
    out.reward = static_cast<float>(-distance_to_goal());
    done_ = steps_ >= spec_.max_horizon;
    out.done = done_;
    out.observation = observation();
    return out;
  }

  // Scripted expert: proportional controller through the inverse action map.
  std::vector<float> expert_action() const {
    std::vector<float> a(static_cast<size_t>(dim_), 0.0f);
    for (int i = 0; i < dim_; ++i) {
      const double desired =
          (static_cast<double>(goal_[static_cast<size_t>(i)]) - pos_[static_cast<size_t>(i)]) / kDt;
      const double v = std::clamp(desired, -1.0, 1.0);
      a[static_cast<size_t>(axis_[static_cast<size_t>(i)])] =
          static_cast<float>(v / sign_[static_cast<size_t>(i)]);
    }
    return a;
  }

  double distance_to_goal() const {
    double s = 0.0;
    for (int i = 0; i < dim_; ++i) {
      const double d = static_cast<double>(pos_[static_cast<size_t>(i)]) - goal_[static_cast<size_t>(i)];
      s += d * d;
    }
    return std::sqrt(s);
  }

 private:
  std::vector<float> observation() const {
    std::vector<float> obs(static_cast<size_t>(spec_.shared_obs_dim), 0.0f);
    for (int i = 0; i < dim_; ++i) obs[static_cast<size_t>(i)] = pos_[static_cast<size_t>(i)];
    for (int i = 0; i < dim_; ++i) obs[static_cast<size_t>(dim_ + i)] = goal_[static_cast<size_t>(i)];
    return obs;
  }

  TaskSpec spec_;
  int dim_ = 2;
  uint64_t dynamics_seed_ = 0;
  std::vector<int> axis_;
  std::vector<double> sign_;
  std::vector<float> pos_, goal_;
  int steps_ = 0;
  bool done_ = false;
};

inline std::unique_ptr<GridKeyEnv> make_gridkey_task(const std::string& task_id,
                                                     uint64_t layout_seed, double theta,
                                                     int grid_n = 6, int max_horizon = 40) {
  return std::make_unique<GridKeyEnv>(task_id, grid_n, layout_seed, theta, max_horizon);
}

inline std::unique_ptr<PointReachEnv> make_pointreach_task(const std::string& task_id,
                                                           int goal_dim, uint64_t dynamics_seed,
                                                           int max_horizon = 50) {
  return std::make_unique<PointReachEnv>(task_id, goal_dim, dynamics_seed, max_horizon);
}

// Rebuilds the environment a dataset was generated on from its task_spec.
inline std::unique_ptr<Environment> make_env(const TaskSpec& spec) {
  const std::string where = "task_spec of " + spec.task_id;
  if (spec.family == "gridkey") {
    auto env = make_gridkey_task(
        spec.task_id, std::stoull(io::kv_get(spec.extra, "layout_seed", where)),
        std::stod(io::kv_get(spec.extra, "theta", where)),
        std::stoi(io::kv_get(spec.extra, "grid_n", where)), spec.max_horizon);
    env->set_target_return(spec.target_return);
    return env;
  }
  if (spec.family == "pointreach") {
    auto env = make_pointreach_task(
        spec.task_id, std::stoi(io::kv_get(spec.extra, "goal_dim", where)),
        std::stoull(io::kv_get(spec.extra, "dynamics_seed", where)), spec.max_horizon);
    env->set_target_return(spec.target_return);
    return env;
  }
  throw InvalidInput("unknown benchmark family: " + spec.family);
}

// Rolls out the scripted expert; the recorded action is the float32-quantized
// action actually applied, so replay validation reproduces returns exactly.
// The target return R* is set to the mean expert return.
inline TrajectoryDataset generate_expert_dataset(Environment& env, int n_trajectories,
                                                 uint64_t seed) {
  require(n_trajectories > 0, "generate: need at least one trajectory");
  TrajectoryDataset ds;
  ds.spec = env.spec();
  auto* gridkey = dynamic_cast<GridKeyEnv*>(&env);
  auto* pointreach = dynamic_cast<PointReachEnv*>(&env);
  require(gridkey || pointreach, "generate: no scripted expert for this environment");

  for (int i = 0; i < n_trajectories; ++i) {
    std::vector<float> obs = env.reset(derive_seed(seed, "expert-episode", static_cast<uint64_t>(i)));
    Trajectory tr;
    int64_t t = 0;
    while (true) {
      std::vector<float> action =
          gridkey ? std::vector<float>{static_cast<float>(gridkey->expert_action())}
                  : pointreach->expert_action();
      if (pointreach)
        action = pad_to_shared(action, ds.spec.shared_action_dim, "action");
      tr.observations.insert(tr.observations.end(), obs.begin(), obs.end());
      tr.actions.insert(tr.actions.end(), action.begin(), action.end());
      tr.timesteps.push_back(t++);
      StepResult sr = env.step(action);
      tr.rewards.push_back(sr.reward);
      obs = sr.observation;
      if (sr.done) break;
      if (t >= ds.spec.max_horizon)
        throw ContractViolation("generate: expert exceeded max_horizon");
    }
    ds.trajectories.push_back(std::move(tr));
  }
  ds.spec.target_return = ds.mean_return();
  ds.compute_returns_to_go();
  ds.validate();
  return ds;
}

// Bundled benchmark description: task list, similarity parameters, and which
// continual metric the family reports.
struct BenchmarkManifest {
  std::string name;
  std::string family;
  std::string metric;  // norm_avg | avg_gap
  int grid_n = 6;
  int max_horizon = 0;
  int n_trajectories = 200;
  struct TaskEntry {
    std::string name;
    io::KvMap params;
  };
  std::vector<TaskEntry> tasks;

  int shared_obs_dim() const { return family == "gridkey" ? 2 * grid_n * grid_n : 6; }
  int shared_action_dim() const { return family == "gridkey" ? GridKeyEnv::kActions : 3; }
};

inline BenchmarkManifest load_manifest(const std::filesystem::path& path) {
  const SectionedConfig cfg = parse_sections(path);
  const ConfigSection* head = cfg.find("benchmark");
  require_input(head != nullptr, "manifest missing [benchmark] section: " + path.string());
  BenchmarkManifest m;
  m.name = cfg_get(head->values, "name", path.stem().string());
  m.family = io::kv_get(head->values, "family", path.string());
  m.metric = io::kv_get(head->values, "metric", path.string());
  require_input(m.metric == "norm_avg" || m.metric == "avg_gap",
                "manifest metric must be norm_avg or avg_gap");
  m.grid_n = cfg_get_int(head->values, "grid_n", 6);
  m.max_horizon = cfg_get_int(head->values, "max_horizon", m.family == "gridkey" ? 40 : 50);
  m.n_trajectories = cfg_get_int(head->values, "n_trajectories", 200);
  for (const ConfigSection* ts : cfg.all("task")) {
    BenchmarkManifest::TaskEntry e;
    e.name = io::kv_get(ts->values, "name", path.string());
    e.params = ts->values;
    m.tasks.push_back(std::move(e));
  }
  require_input(!m.tasks.empty(), "manifest has no tasks: " + path.string());
  return m;
}

inline std::unique_ptr<Environment> make_env_from_manifest(const BenchmarkManifest& m,
                                                           const BenchmarkManifest::TaskEntry& task) {
  if (m.family == "gridkey") {
    return make_gridkey_task(task.name,
                             std::stoull(io::kv_get(task.params, "layout_seed", task.name)),
                             std::stod(io::kv_get(task.params, "theta", task.name)), m.grid_n,
                             m.max_horizon);
  }
  if (m.family == "pointreach") {
    return make_pointreach_task(task.name,
                                std::stoi(io::kv_get(task.params, "goal_dim", task.name)),
                                std::stoull(io::kv_get(task.params, "dynamics_seed", task.name)),
                                m.max_horizon);
  }
  throw InvalidInput("unknown benchmark family: " + m.family);
}

}  // namespace tsn
