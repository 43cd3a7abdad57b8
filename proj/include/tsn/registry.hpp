#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "tsn/dt_model.hpp"
#include "tsn/trajectory.hpp"

namespace tsn {

// Inference-time state restored when a task is activated: observation
// normalization, action-dimension mask, native output width, and the
// return-conditioning target.
struct PerTaskState {
  std::string task_id;
  ControlKind control_kind = ControlKind::kDiscrete;
  std::vector<double> obs_mean, obs_std;
  MaskVec action_dim_mask;
  int native_action_dim = 0;
  double target_return = 0.0;
};

// Diagonal-Gaussian fit of encoder latents.
struct LatentStats {
  std::vector<double> mean;
  std::vector<double> var;  // floored, so downstream KL stays finite
};

inline PerTaskState make_task_state(const TrajectoryDataset& ds) {
  PerTaskState st;
  st.task_id = ds.spec.task_id;
  st.control_kind = ds.spec.control_kind;
  st.action_dim_mask = ds.spec.action_dim_mask();
  st.native_action_dim = ds.spec.native_action_dim;
  st.target_return = ds.spec.target_return;

  const int d = ds.spec.shared_obs_dim;
  st.obs_mean.assign(static_cast<size_t>(d), 0.0);
  st.obs_std.assign(static_cast<size_t>(d), 0.0);
  int64_t n = 0;
  for (const auto& tr : ds.trajectories) {
    const int64_t len = tr.length(d);
    for (int64_t k = 0; k < len; ++k)
      for (int j = 0; j < d; ++j)
        st.obs_mean[static_cast<size_t>(j)] +=
            static_cast<double>(tr.observations[static_cast<size_t>(k * d + j)]);
    n += len;
  }
  for (double& m : st.obs_mean) m /= static_cast<double>(n);
  for (const auto& tr : ds.trajectories) {
    const int64_t len = tr.length(d);
    for (int64_t k = 0; k < len; ++k)
      for (int j = 0; j < d; ++j) {
        const double diff =
            static_cast<double>(tr.observations[static_cast<size_t>(k * d + j)]) -
            st.obs_mean[static_cast<size_t>(j)];
        st.obs_std[static_cast<size_t>(j)] += diff * diff;
      }
  }
  for (double& s : st.obs_std) s = std::max(std::sqrt(s / static_cast<double>(n)), 1e-6);
  return st;
}

// Population of model copies with the permanent task -> copy assignment g(t)
// and all per-task inference state. Tasks are keyed by their position in the
// continual sequence.
class CopyRegistry {
 public:
  CopyRegistry(DtConfig template_config, int max_copies)
      : template_config_(std::move(template_config)), max_copies_(max_copies) {}

  int max_copies() const { return max_copies_; }
  int copy_count() const { return static_cast<int>(copies_.size()); }
  bool budget_exhausted() const {
    return max_copies_ > 0 && copy_count() >= max_copies_;
  }

  // Fresh randomly initialized model with empty masks and occupancy.
  int spawn_copy(uint64_t seed) {
    require(!budget_exhausted(), "spawn_copy: copy budget exhausted");
    const int id = copy_count();
    copies_.push_back(std::make_unique<DtModel>(
        template_config_, derive_seed(seed, "copy-init", static_cast<uint64_t>(id))));
    return id;
  }

  void assign(int task, int copy) {
    require(copy >= 0 && copy < copy_count(), "assign: unknown copy");
    require(!assignment_.count(task), "assign: task already assigned");
    assignment_[task] = copy;
  }

  int copy_of(int task) const {
    auto it = assignment_.find(task);
    require(it != assignment_.end(), "copy_of: task has no assignment");
    return it->second;
  }

  bool is_assigned(int task) const { return assignment_.count(task) > 0; }

  DtModel& model(int copy) { return *copies_.at(static_cast<size_t>(copy)); }

  // Tasks assigned to `copy` before `task`, in sequence order.
  int tasks_before_on_copy(int task, int copy) const {
    int n = 0;
    for (const auto& [t, c] : assignment_)
      if (t < task && c == copy) ++n;
    return n;
  }

  void record_task_state(int task, PerTaskState state) { per_task_[task] = std::move(state); }
  const PerTaskState& task_state(int task) const {
    auto it = per_task_.find(task);
    require(it != per_task_.end(), "task_state: unknown task");
    return it->second;
  }

  void record_latent_stats(int task, LatentStats stats) { latent_stats_[task] = std::move(stats); }
  const LatentStats& latent_stats(int task) const {
    auto it = latent_stats_.find(task);
    require(it != latent_stats_.end(), "latent_stats: not stored for task");
    return it->second;
  }
  bool has_latent_stats(int task) const { return latent_stats_.count(task) > 0; }

  void record_memory(int task, TaskMemory memory) { memories_[task] = std::move(memory); }
  const TaskMemory& memory(int task) const {
    auto it = memories_.find(task);
    require(it != memories_.end(), "memory: not stored for task");
    return it->second;
  }

  // Selects the task's copy, activates its mask (when masked inference is
  // requested) and restores its normalization statistics; returns the model.
  DtModel& activate_for_inference(int task, bool masked = true) {
    const int copy = copy_of(task);
    DtModel& m = model(copy);
    if (masked)
      m.activate_task(task);
    else
      m.set_dense();
    const PerTaskState& st = task_state(task);
    m.set_obs_stats(st.obs_mean, st.obs_std);
    return m;
  }

  // --- checkpointing ---------------------------------------------------------

  void save(const std::filesystem::path& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "state");
    std::vector<std::pair<std::string, std::string>> meta{
        {"n_copies", std::to_string(copy_count())},
        {"max_copies", std::to_string(max_copies_)},
    };
    std::string tasks;
    for (const auto& [t, c] : assignment_) {
      tasks += (tasks.empty() ? "" : ",") + std::to_string(t);
      meta.emplace_back("task_" + std::to_string(t) + ".copy", std::to_string(c));
      const PerTaskState& st = per_task_.at(t);
      meta.emplace_back("task_" + std::to_string(t) + ".id", st.task_id);
      meta.emplace_back("task_" + std::to_string(t) + ".control_kind", to_string(st.control_kind));
      meta.emplace_back("task_" + std::to_string(t) + ".native_action_dim",
                        std::to_string(st.native_action_dim));
      meta.emplace_back("task_" + std::to_string(t) + ".target_return",
                        detail::format_double(st.target_return));
    }
    meta.emplace_back("tasks", tasks);
    io::write_kv(dir / "manifest.txt", meta);

    for (int c = 0; c < copy_count(); ++c)
      copies_[static_cast<size_t>(c)]->save(dir / "copies" / ("copy_" + std::to_string(c)));

    for (const auto& [t, st] : per_task_) {
      const std::string p = "task_" + std::to_string(t);
      const int64_t d = static_cast<int64_t>(st.obs_mean.size());
      io::write_f64(dir / "state" / (p + ".obs_mean.bin"), st.obs_mean, {d});
      io::write_f64(dir / "state" / (p + ".obs_std.bin"), st.obs_std, {d});
      io::write_bits(dir / "state" / (p + ".action_mask.bin"), st.action_dim_mask,
                     {static_cast<int64_t>(st.action_dim_mask.size())});
    }
    for (const auto& [t, ls] : latent_stats_) {
      const std::string p = "task_" + std::to_string(t);
      const int64_t h = static_cast<int64_t>(ls.mean.size());
      io::write_f64(dir / "state" / (p + ".latent_mean.bin"), ls.mean, {h});
      io::write_f64(dir / "state" / (p + ".latent_var.bin"), ls.var, {h});
    }
    for (const auto& [t, mem] : memories_) {
      const std::string p = "task_" + std::to_string(t);
      io::write_f32(dir / "state" / (p + ".memory.bin"), mem.observations,
                    {static_cast<int64_t>(mem.count()), mem.obs_dim});
      std::vector<std::pair<std::string, std::string>> mm{{"task_id", mem.task_id}};
      io::write_kv(dir / "state" / (p + ".memory.txt"), mm);
    }
  }

  static CopyRegistry load(const std::filesystem::path& dir) {
    const auto kv = io::read_kv(dir / "manifest.txt");
    const std::string where = (dir / "manifest.txt").string();

    std::vector<int> task_ids;
    const std::string tasks = io::kv_get(kv, "tasks", where);
    for (size_t pos = 0; pos < tasks.size();) {
      size_t comma = tasks.find(',', pos);
      if (comma == std::string::npos) comma = tasks.size();
      if (comma > pos) task_ids.push_back(std::stoi(tasks.substr(pos, comma - pos)));
      pos = comma + 1;
    }
    const int n_copies = std::stoi(io::kv_get(kv, "n_copies", where));
    require_input(n_copies > 0, "registry checkpoint has no copies");

    auto first = DtModel::load(dir / "copies" / "copy_0");
    CopyRegistry reg(first->cfg, std::stoi(io::kv_get(kv, "max_copies", where)));
    reg.copies_.push_back(std::move(first));
    for (int c = 1; c < n_copies; ++c)
      reg.copies_.push_back(DtModel::load(dir / "copies" / ("copy_" + std::to_string(c))));

    for (int t : task_ids) {
      const std::string p = "task_" + std::to_string(t);
      reg.assignment_[t] = std::stoi(io::kv_get(kv, p + ".copy", where));
      PerTaskState st;
      st.task_id = io::kv_get(kv, p + ".id", where);
      st.control_kind = control_kind_from(io::kv_get(kv, p + ".control_kind", where));
      st.native_action_dim = std::stoi(io::kv_get(kv, p + ".native_action_dim", where));
      st.target_return = std::stod(io::kv_get(kv, p + ".target_return", where));
      st.obs_mean = io::read_f64(dir / "state" / (p + ".obs_mean.bin"));
      st.obs_std = io::read_f64(dir / "state" / (p + ".obs_std.bin"));
      st.action_dim_mask = io::read_bits(dir / "state" / (p + ".action_mask.bin"));
      reg.per_task_[t] = std::move(st);
      if (std::filesystem::exists(dir / "state" / (p + ".latent_mean.bin"))) {
        LatentStats ls;
        ls.mean = io::read_f64(dir / "state" / (p + ".latent_mean.bin"));
        ls.var = io::read_f64(dir / "state" / (p + ".latent_var.bin"));
        reg.latent_stats_[t] = std::move(ls);
      }
      if (std::filesystem::exists(dir / "state" / (p + ".memory.bin"))) {
        TaskMemory mem;
        std::vector<int64_t> shape;
        mem.observations = io::read_f32(dir / "state" / (p + ".memory.bin"), &shape);
        mem.obs_dim = static_cast<int>(shape[1]);
        mem.task_id = io::kv_get(io::read_kv(dir / "state" / (p + ".memory.txt")), "task_id", p);
        reg.memories_[t] = std::move(mem);
      }
    }
    return reg;
  }

 private:
  DtConfig template_config_;
  int max_copies_ = 0;  // 0 = unlimited
  std::vector<std::unique_ptr<DtModel>> copies_;
  std::map<int, int> assignment_;
  std::map<int, PerTaskState> per_task_;
  std::map<int, LatentStats> latent_stats_;
  std::map<int, TaskMemory> memories_;
};

// Mean and floored variance of encoder latents over a task memory; the model
// must already be activated with the copy, mask, and normalization the caller
// wants the latents under.
inline LatentStats fit_latent_stats(DtModel& model, const TaskMemory& memory) {
  require(memory.count() > 0, "fit_latent_stats: empty memory");
  const int h = model.cfg.embed_dim;
  LatentStats out;
  out.mean.assign(static_cast<size_t>(h), 0.0);
  out.var.assign(static_cast<size_t>(h), 0.0);
  const int k = memory.count();
  std::vector<std::vector<double>> latents;
  latents.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    latents.push_back(model.encode_observation(memory.observation(i)));
    for (int d = 0; d < h; ++d) out.mean[static_cast<size_t>(d)] += latents.back()[static_cast<size_t>(d)];
  }
  for (double& m : out.mean) m /= static_cast<double>(k);
  for (int i = 0; i < k; ++i)
    for (int d = 0; d < h; ++d) {
      const double diff = latents[static_cast<size_t>(i)][static_cast<size_t>(d)] -
                          out.mean[static_cast<size_t>(d)];
      out.var[static_cast<size_t>(d)] += diff * diff;
    }
  for (double& v : out.var) v = std::max(v / static_cast<double>(k), 1e-6);
  return out;
}

}  // namespace tsn
