#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "tsn/common.hpp"
#include "tsn/io.hpp"
#include "tsn/rng.hpp"
#include "tsn/tensor.hpp"

namespace tsn {

enum class ControlKind { kDiscrete, kContinuous };

inline std::string to_string(ControlKind k) {
  return k == ControlKind::kDiscrete ? "discrete" : "continuous";
}

inline ControlKind control_kind_from(const std::string& s) {
  if (s == "discrete") return ControlKind::kDiscrete;
  if (s == "continuous") return ControlKind::kContinuous;
  throw InvalidInput("unknown control_kind: " + s);
}

// Static description of one task under the shared cross-task interface.
// shared_action_dim is the action vocabulary size for discrete control and
// the global padded action dimension for continuous control.
struct TaskSpec {
  std::string task_id;
  ControlKind control_kind = ControlKind::kDiscrete;
  int native_action_dim = 0;
  int native_obs_dim = 0;
  int shared_obs_dim = 0;
  int shared_action_dim = 0;
  double target_return = 0.0;
  int max_horizon = 0;
  std::string family;   // benchmark family that produced the task
  io::KvMap extra;      // family parameters (seeds, similarity dial, ...)

  // m_a: all-ones over the vocabulary slot for discrete tasks, the native
  // prefix for continuous tasks.
  MaskVec action_dim_mask() const {
    MaskVec m(static_cast<size_t>(shared_action_dim), 0);
    int active = control_kind == ControlKind::kDiscrete ? shared_action_dim : native_action_dim;
    for (int i = 0; i < active; ++i) m[static_cast<size_t>(i)] = 1;
    return m;
  }

  void validate() const {
    require_input(!task_id.empty(), "task_spec: empty task_id");
    require_input(native_action_dim > 0 && native_obs_dim > 0, "task_spec: dims must be positive");
    require_input(shared_obs_dim >= native_obs_dim, "task_spec: native_obs_dim exceeds shared_obs_dim");
    require_input(max_horizon > 0, "task_spec: max_horizon must be positive");
    if (control_kind == ControlKind::kDiscrete) {
      require_input(native_action_dim <= shared_action_dim,
                    "task_spec: discrete action count exceeds shared vocabulary");
    } else {
      require_input(native_action_dim <= shared_action_dim,
                    "task_spec: native_action_dim exceeds shared action dimension");
    }
  }
};

// One expert episode. Fields are stored as float32 flats so that the on-disk
// container round-trips bit-exactly.
struct Trajectory {
  std::vector<float> observations;  // [len * shared_obs_dim]
  std::vector<float> actions;       // [len] discrete index or [len * shared_action_dim]
  std::vector<float> rewards;       // [len]
  std::vector<int64_t> timesteps;   // [len], strictly increasing from 0

  int64_t length(int obs_dim) const {
    return obs_dim > 0 ? static_cast<int64_t>(observations.size()) / obs_dim : 0;
  }
};

inline int action_cols(const TaskSpec& spec) {
  return spec.control_kind == ControlKind::kDiscrete ? 1 : spec.shared_action_dim;
}

inline void validate_trajectory(const Trajectory& tr, const TaskSpec& spec) {
  const int64_t len = tr.length(spec.shared_obs_dim);
  require_input(len >= 1, "trajectory: must contain at least one step");
  require_input(tr.observations.size() == static_cast<size_t>(len * spec.shared_obs_dim),
                "trajectory: observation size mismatch");
  require_input(tr.actions.size() == static_cast<size_t>(len * action_cols(spec)),
                "trajectory: action length mismatch");
  require_input(tr.rewards.size() == static_cast<size_t>(len), "trajectory: reward length mismatch");
  require_input(tr.timesteps.size() == static_cast<size_t>(len), "trajectory: timestep length mismatch");
  for (int64_t k = 0; k < len; ++k)
    require_input(tr.timesteps[static_cast<size_t>(k)] == k,
                  "trajectory: timesteps must increase strictly from 0");
  if (spec.control_kind == ControlKind::kContinuous) {
    for (int64_t k = 0; k < len; ++k)
      for (int d = spec.native_action_dim; d < spec.shared_action_dim; ++d)
        require_input(tr.actions[static_cast<size_t>(k * spec.shared_action_dim + d)] == 0.0f,
                      "trajectory: padded action entries must be zero");
  } else {
    for (float a : tr.actions)
      require_input(a >= 0.0f && a < static_cast<float>(spec.shared_action_dim) &&
                        a == static_cast<float>(static_cast<int>(a)),
                    "trajectory: discrete action out of vocabulary");
  }
}

// Offline dataset for one task, with undiscounted returns-to-go populated.
struct TrajectoryDataset {
  TaskSpec spec;
  std::vector<Trajectory> trajectories;
  std::vector<std::vector<double>> returns_to_go;  // suffix sums of rewards

  int64_t total_steps() const {
    int64_t n = 0;
    for (const auto& t : trajectories) n += t.length(spec.shared_obs_dim);
    return n;
  }

  double mean_return() const {
    double sum = 0.0;
    for (const auto& t : trajectories)
      for (float r : t.rewards) sum += static_cast<double>(r);
    return trajectories.empty() ? 0.0 : sum / static_cast<double>(trajectories.size());
  }

  void compute_returns_to_go() {
    returns_to_go.clear();
    returns_to_go.reserve(trajectories.size());
    for (const auto& t : trajectories) {
      std::vector<double> rtg(t.rewards.size(), 0.0);
      double acc = 0.0;
      for (int64_t k = static_cast<int64_t>(t.rewards.size()) - 1; k >= 0; --k) {
        acc += static_cast<double>(t.rewards[static_cast<size_t>(k)]);
        rtg[static_cast<size_t>(k)] = acc;
      }
      returns_to_go.push_back(std::move(rtg));
    }
  }

  void validate() const {
    spec.validate();
    require_input(!trajectories.empty(), "dataset: no trajectories");
    for (const auto& t : trajectories) validate_trajectory(t, spec);
  }
};

// Zero-pads raw per-task vectors into the shared interface; the native values
// are preserved as a prefix.
inline std::vector<float> pad_to_shared(const std::vector<float>& raw, int shared_dim,
                                        const char* what) {
  require_input(static_cast<int>(raw.size()) <= shared_dim,
                std::string(what) + " exceeds shared dimension");
  std::vector<float> out(static_cast<size_t>(shared_dim), 0.0f);
  std::copy(raw.begin(), raw.end(), out.begin());
  return out;
}

inline std::pair<std::vector<float>, std::vector<float>> pad_to_shared_interface(
    const std::vector<float>& raw_obs, const std::vector<float>& raw_action,
    const TaskSpec& spec, int shared_obs_dim, int shared_action_dim) {
  require_input(static_cast<int>(raw_obs.size()) == spec.native_obs_dim,
                "pad: raw observation has wrong native dimension");
  return {pad_to_shared(raw_obs, shared_obs_dim, "observation"),
          pad_to_shared(raw_action, shared_action_dim, "action")};
}

// Teacher-forcing minibatch. valid marks Omega; padded positions carry zeros.
struct Batch {
  int batch_size = 0;
  int length = 0;
  int obs_dim = 0;
  ControlKind control_kind = ControlKind::kDiscrete;
  std::vector<double> observations;     // [B*L*obs_dim]
  std::vector<int> actions_discrete;    // [B*L]
  std::vector<double> actions_cont;     // [B*L*d_max]
  std::vector<double> returns_to_go;    // [B*L]
  std::vector<int64_t> timesteps;       // [B*L]
  MaskVec valid;                        // [B*L]

  int64_t valid_count() const { return mask_count(valid); }
};

// Samples fixed-length windows uniformly over (trajectory, start) pairs.
// Deterministic under a fixed seed; windows shorter than L are right-padded.
class BatchStream {
 public:
  BatchStream(const TrajectoryDataset& dataset, int context_length, int batch_size,
              uint64_t seed)
      : dataset_(dataset),
        length_(context_length),
        batch_size_(batch_size),
        rng_(seed) {
    require(context_length >= 1 && batch_size >= 1, "batch stream: L and B must be >= 1");
    require_input(!dataset.trajectories.empty(), "batch stream: empty dataset");
    cumulative_.reserve(dataset.trajectories.size() + 1);
    cumulative_.push_back(0);
    for (const auto& t : dataset.trajectories)
      cumulative_.push_back(cumulative_.back() + t.length(dataset.spec.shared_obs_dim));
  }

  Batch next() {
    const TaskSpec& spec = dataset_.spec;
    const int d_obs = spec.shared_obs_dim;
    const int a_cols = action_cols(spec);
    Batch b;
    b.batch_size = batch_size_;
    b.length = length_;
    b.obs_dim = d_obs;
    b.control_kind = spec.control_kind;
    b.observations.assign(static_cast<size_t>(batch_size_) * length_ * d_obs, 0.0);
    b.returns_to_go.assign(static_cast<size_t>(batch_size_) * length_, 0.0);
    b.timesteps.assign(static_cast<size_t>(batch_size_) * length_, 0);
    b.valid.assign(static_cast<size_t>(batch_size_) * length_, 0);
    if (spec.control_kind == ControlKind::kDiscrete)
      b.actions_discrete.assign(static_cast<size_t>(batch_size_) * length_, 0);
    else
      b.actions_cont.assign(static_cast<size_t>(batch_size_) * length_ * a_cols, 0.0);

    for (int row = 0; row < batch_size_; ++row) {
      const int64_t pair = static_cast<int64_t>(rng_.next_below(
          static_cast<uint64_t>(cumulative_.back())));
      const size_t ti = static_cast<size_t>(
          std::upper_bound(cumulative_.begin(), cumulative_.end(), pair) -
          cumulative_.begin() - 1);
      const int64_t start = pair - cumulative_[ti];
      const Trajectory& tr = dataset_.trajectories[ti];
      const int64_t len = tr.length(d_obs);
      const int64_t take = std::min<int64_t>(length_, len - start);
      for (int64_t k = 0; k < take; ++k) {
        const int64_t src = start + k;
        const size_t dst = static_cast<size_t>(row) * length_ + static_cast<size_t>(k);
        for (int d = 0; d < d_obs; ++d)
          b.observations[dst * d_obs + d] =
              static_cast<double>(tr.observations[static_cast<size_t>(src * d_obs + d)]);
        if (spec.control_kind == ControlKind::kDiscrete) {
          b.actions_discrete[dst] = static_cast<int>(tr.actions[static_cast<size_t>(src)]);
        } else {
          for (int d = 0; d < a_cols; ++d)
            b.actions_cont[dst * a_cols + d] =
                static_cast<double>(tr.actions[static_cast<size_t>(src * a_cols + d)]);
        }
        b.returns_to_go[dst] = dataset_.returns_to_go[ti][static_cast<size_t>(src)];
        b.timesteps[dst] = tr.timesteps[static_cast<size_t>(src)];
        b.valid[dst] = 1;
      }
    }
    return b;
  }

 private:
  const TrajectoryDataset& dataset_;
  int length_;
  int batch_size_;
  Rng rng_;
  std::vector<int64_t> cumulative_;
};

// Fixed pool of observations kept per task for routing and latent statistics
// only; never used for gradient updates.
struct TaskMemory {
  std::string task_id;
  int obs_dim = 0;
  std::vector<float> observations;  // [count * obs_dim]

  int count() const { return obs_dim > 0 ? static_cast<int>(observations.size()) / obs_dim : 0; }

  std::vector<double> observation(int i) const {
    std::vector<double> o(static_cast<size_t>(obs_dim));
    for (int d = 0; d < obs_dim; ++d)
      o[static_cast<size_t>(d)] =
          static_cast<double>(observations[static_cast<size_t>(i) * obs_dim + d]);
    return o;
  }
};

// Uniform sample of K observations, with replacement when the dataset holds
// fewer than K steps.
inline TaskMemory sample_task_memory(const TrajectoryDataset& dataset, int k, uint64_t seed) {
  require(k > 0, "task memory: K must be positive");
  require_input(!dataset.trajectories.empty(), "task memory: empty dataset");
  const int d_obs = dataset.spec.shared_obs_dim;
  std::vector<int64_t> cumulative{0};
  for (const auto& t : dataset.trajectories)
    cumulative.push_back(cumulative.back() + t.length(d_obs));
  const int64_t total = cumulative.back();

  TaskMemory mem;
  mem.task_id = dataset.spec.task_id;
  mem.obs_dim = d_obs;
  mem.observations.reserve(static_cast<size_t>(k) * d_obs);
  Rng rng(seed);
  for (int i = 0; i < k; ++i) {
    const int64_t flat = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(total)));
    const size_t ti = static_cast<size_t>(
        std::upper_bound(cumulative.begin(), cumulative.end(), flat) - cumulative.begin() - 1);
    const int64_t step = flat - cumulative[ti];
    const float* src =
        dataset.trajectories[ti].observations.data() + step * d_obs;
    mem.observations.insert(mem.observations.end(), src, src + d_obs);
  }
  return mem;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// --- on-disk container ------------------------------------------------------
//
// A dataset directory holds task_spec.txt plus one flat binary array per
// field: observations, actions, rewards, timesteps, and trajectory-boundary
// offsets. Round-trips are bit-exact.

inline void save_task_spec(const TaskSpec& spec, const std::filesystem::path& path) {
  std::vector<std::pair<std::string, std::string>> items{
      {"task_id", spec.task_id},
      {"control_kind", to_string(spec.control_kind)},
      {"native_action_dim", std::to_string(spec.native_action_dim)},
      {"native_obs_dim", std::to_string(spec.native_obs_dim)},
      {"shared_obs_dim", std::to_string(spec.shared_obs_dim)},
      {"shared_action_dim", std::to_string(spec.shared_action_dim)},
      {"target_return", detail::format_double(spec.target_return)},
      {"max_horizon", std::to_string(spec.max_horizon)},
      {"family", spec.family},
  };
  for (const auto& [k, v] : spec.extra) items.emplace_back("extra." + k, v);
  io::write_kv(path, items);
}

inline TaskSpec load_task_spec(const std::filesystem::path& path) {
  const auto kv = io::read_kv(path);
  const std::string where = path.string();
  TaskSpec spec;
  spec.task_id = io::kv_get(kv, "task_id", where);
  spec.control_kind = control_kind_from(io::kv_get(kv, "control_kind", where));
  spec.native_action_dim = std::stoi(io::kv_get(kv, "native_action_dim", where));
  spec.native_obs_dim = std::stoi(io::kv_get(kv, "native_obs_dim", where));
  spec.shared_obs_dim = std::stoi(io::kv_get(kv, "shared_obs_dim", where));
  spec.shared_action_dim = std::stoi(io::kv_get(kv, "shared_action_dim", where));
  spec.target_return = std::stod(io::kv_get(kv, "target_return", where));
  spec.max_horizon = std::stoi(io::kv_get(kv, "max_horizon", where));
  if (auto it = kv.find("family"); it != kv.end()) spec.family = it->second;
  for (const auto& [k, v] : kv)
    if (k.rfind("extra.", 0) == 0) spec.extra[k.substr(6)] = v;
  spec.validate();
  return spec;
}

inline void save_dataset(const TrajectoryDataset& dataset, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_task_spec(dataset.spec, dir / "task_spec.txt");

  const int d_obs = dataset.spec.shared_obs_dim;
  const int a_cols = action_cols(dataset.spec);
  std::vector<float> obs, act, rew;
  std::vector<int64_t> ts, offsets{0};
  for (const auto& t : dataset.trajectories) {
    obs.insert(obs.end(), t.observations.begin(), t.observations.end());
    act.insert(act.end(), t.actions.begin(), t.actions.end());
    rew.insert(rew.end(), t.rewards.begin(), t.rewards.end());
    ts.insert(ts.end(), t.timesteps.begin(), t.timesteps.end());
    offsets.push_back(offsets.back() + t.length(d_obs));
  }
  const int64_t total = offsets.back();
  io::write_f32(dir / "observations.bin", obs, {total, d_obs});
  io::write_f32(dir / "actions.bin", act, {total, a_cols});
  io::write_f32(dir / "rewards.bin", rew, {total});
  io::write_i64(dir / "timesteps.bin", ts, {total});
  io::write_i64(dir / "offsets.bin", offsets,
                {static_cast<int64_t>(offsets.size())});
}

inline TrajectoryDataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  require_input(fs::exists(dir / "task_spec.txt"), "dataset container missing task_spec.txt: " + dir.string());
  TrajectoryDataset ds;
  ds.spec = load_task_spec(dir / "task_spec.txt");
  const int d_obs = ds.spec.shared_obs_dim;
  const int a_cols = action_cols(ds.spec);

  std::vector<int64_t> obs_shape, act_shape, rew_shape, ts_shape, off_shape;
  const auto obs = io::read_f32(dir / "observations.bin", &obs_shape);
  const auto act = io::read_f32(dir / "actions.bin", &act_shape);
  const auto rew = io::read_f32(dir / "rewards.bin", &rew_shape);
  const auto ts = io::read_i64(dir / "timesteps.bin", &ts_shape);
  const auto offsets = io::read_i64(dir / "offsets.bin", &off_shape);

  require_input(obs_shape.size() == 2 && obs_shape[1] == d_obs,
                "dataset: observation dimension mismatch with task_spec");
  require_input(act_shape.size() == 2 && act_shape[1] == a_cols,
                "dataset: action dimension mismatch with task_spec");
  require_input(offsets.size() >= 2 && offsets.front() == 0,
                "dataset: malformed offsets");
  const int64_t total = offsets.back();
  require_input(obs_shape[0] == total && rew_shape[0] == total && ts_shape[0] == total,
                "dataset: field lengths disagree with offsets");

  for (size_t i = 0; i + 1 < offsets.size(); ++i) {
    const int64_t a = offsets[i], b = offsets[i + 1];
    require_input(b > a, "dataset: empty trajectory in offsets");
    Trajectory tr;
    tr.observations.assign(obs.begin() + a * d_obs, obs.begin() + b * d_obs);
    tr.actions.assign(act.begin() + a * a_cols, act.begin() + b * a_cols);
    tr.rewards.assign(rew.begin() + a, rew.begin() + b);
    tr.timesteps.assign(ts.begin() + a, ts.begin() + b);
    ds.trajectories.push_back(std::move(tr));
  }
  ds.validate();
  ds.compute_returns_to_go();
  return ds;
}

}  // namespace tsn
