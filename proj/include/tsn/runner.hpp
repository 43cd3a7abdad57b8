#pragma once

#include <chrono>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "tsn/adam.hpp"
#include "tsn/affinity.hpp"
#include "tsn/bench.hpp"
#include "tsn/dt_model.hpp"
#include "tsn/registry.hpp"
#include "tsn/subnet.hpp"
#include "tsn/trajectory.hpp"

namespace tsn {

enum class Variant {
  kAffinityA,
  kAffinityL,
  kAffinityH,
  kReplayKl,
  kTsnCore,
  kNaive,
  kCumulative,
};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kAffinityA: return "affinity_a";
    case Variant::kAffinityL: return "affinity_l";
    case Variant::kAffinityH: return "affinity_h";
    case Variant::kReplayKl: return "replay_kl";
    case Variant::kTsnCore: return "tsn_core";
    case Variant::kNaive: return "naive";
    default: return "cumulative";
  }
}

inline Variant variant_from(const std::string& s) {
  if (s == "affinity_a") return Variant::kAffinityA;
  if (s == "affinity_l") return Variant::kAffinityL;
  if (s == "affinity_h") return Variant::kAffinityH;
  if (s == "replay_kl") return Variant::kReplayKl;
  if (s == "tsn_core") return Variant::kTsnCore;
  if (s == "naive") return Variant::kNaive;
  if (s == "cumulative") return Variant::kCumulative;
  throw InvalidInput("unknown variant: " + s);
}

inline bool is_tsn_variant(Variant v) {
  return v != Variant::kNaive && v != Variant::kCumulative;
}

struct MethodConfig {
  Variant variant = Variant::kAffinityA;
  double tau = 0.5;
  double alpha = 0.7;
  std::string rho_kind = "constant";  // constant | equal_remaining
  double rho = -1.0;                  // <0: family default (0.5 discrete, 0.33 continuous)
  int max_copies = 0;                 // 0 = unlimited
  int mask_reuse = -1;                // -1 auto (on for routed variants, off for tsn_core)
  bool warm_start = true;
  WarmStartConfig warm_start_cfg;
  double replay_mix = 0.5;
  int64_t replay_capacity = 0;  // >0 switches cumulative to capacity-bounded rehearsal
  int memory_size = 256;
  int epochs = 20;
  double learning_rate = 1e-3;
  int batch_size = 32;
  int batches_per_epoch = 0;  // 0: one pass over trajectories per epoch
  int routing_batches = 8;
  int eval_episodes = 20;
  bool freeze_non_tsn_after_first = true;
  uint64_t seed = 0;
  // backbone
  int embed_dim = 64;
  int n_layers = 2;
  int n_heads = 2;
  int context_length = 20;
  double dropout = 0.1;

  bool reuse_enabled() const {
    if (mask_reuse >= 0) return mask_reuse != 0;
    return variant != Variant::kTsnCore;
  }
};

// T x T matrix of returns: row i holds returns on every task after training
// task i. Metrics read only the j <= i part.
struct PerformanceMatrix {
  int n = 0;
  std::vector<double> values;   // row-major
  std::vector<double> targets;  // R*

  explicit PerformanceMatrix(int tasks = 0)
      : n(tasks),
        values(static_cast<size_t>(tasks) * tasks, 0.0),
        targets(static_cast<size_t>(tasks), 0.0) {}

  double& at(int i, int j) { return values[static_cast<size_t>(i) * n + j]; }
  double at(int i, int j) const { return values[static_cast<size_t>(i) * n + j]; }
};

// 100 * mean_j(P_{N,j} / R*_j).
inline double norm_avg(const PerformanceMatrix& p) {
  require(p.n >= 1, "norm_avg: empty matrix");
  double sum = 0.0;
  for (int j = 0; j < p.n; ++j) {
    require(p.targets[static_cast<size_t>(j)] > 0.0, "norm_avg: nonpositive target return");
    sum += p.at(p.n - 1, j) / p.targets[static_cast<size_t>(j)];
  }
  return 100.0 * sum / static_cast<double>(p.n);
}

// max_{t in {j..N}} P_{t,j} - P_{N,j}, with j zero-based here.
inline double forgetting(const PerformanceMatrix& p, int j) {
  require(j >= 0 && j < p.n, "forgetting: task index out of range");
  double peak = p.at(j, j);
  for (int i = j; i < p.n; ++i) peak = std::max(peak, p.at(i, j));
  return peak - p.at(p.n - 1, j);
}

// mean_j |P_{N,j} - R*_j|.
inline double avg_gap(const PerformanceMatrix& p) {
  require(p.n >= 1, "avg_gap: empty matrix");
  double sum = 0.0;
  for (int j = 0; j < p.n; ++j) sum += std::abs(p.at(p.n - 1, j) - p.targets[static_cast<size_t>(j)]);
  return sum / static_cast<double>(p.n);
}

// Mean forgetting over previously learned tasks j = 1..N-1.
inline double avg_forgetting(const PerformanceMatrix& p) {
  require(p.n >= 2, "avg_forgetting: needs at least two tasks");
  double sum = 0.0;
  for (int j = 0; j + 1 < p.n; ++j) sum += forgetting(p, j);
  return sum / static_cast<double>(p.n - 1);
}

struct RoutingReport {
  int task = 0;
  std::string task_id;
  std::string mode;       // first | reuse | spawn | fallback | core | dense
  std::string criterion;  // action | latent | hybrid | replay_kl | none
  int chosen_source = -1;
  int copy_id = -1;
  double tau = 0.0;
  double alpha = -1.0;
  std::vector<AffinityScore> scores;
  int copies_after = 0;
};

struct RunResult {
  PerformanceMatrix matrix;
  std::vector<RoutingReport> reports;
  std::vector<std::string> task_ids;
  std::string metric_kind;  // norm_avg | avg_gap
  double metric_value = 0.0;
  std::vector<double> per_task_forgetting;
  double mean_forgetting = 0.0;
  int final_copies = 0;
  double wall_clock_sec = 0.0;
};

// One task of a continual sequence as consumed by the runner.
struct TaskBundle {
  TrajectoryDataset dataset;
  std::unique_ptr<Environment> env;
};

// --- greedy autoregressive evaluation -------------------------------------------

// Rolls one greedy episode: return-to-go starts at the conditioning target and
// is decremented by observed rewards; the context holds the last L steps;
// continuous actions are float32-quantized and truncated to the task's native
// dimensionality before being applied.
inline double rollout(DtModel& model, Environment& env, double target_return, int max_horizon,
                      int native_action_dim, uint64_t episode_seed) {
  const DtConfig& cfg = model.cfg;
  const bool discrete = cfg.control_kind == ControlKind::kDiscrete;
  const int d_obs = cfg.obs_dim;
  const int a_dim = discrete ? 1 : cfg.action_dim;

  std::vector<float> obs = env.reset(episode_seed);
  double rtg = target_return;
  double total = 0.0;
  std::vector<double> h_rtg;
  std::vector<double> h_obs;
  std::vector<int> h_act_disc;
  std::vector<double> h_act_cont;

  for (int t = 0; t < max_horizon; ++t) {
    h_rtg.push_back(rtg);
    for (float v : obs) h_obs.push_back(static_cast<double>(v));
    if (discrete)
      h_act_disc.push_back(0);  // placeholder; causally invisible to this step's prediction
    else
      h_act_cont.insert(h_act_cont.end(), static_cast<size_t>(a_dim), 0.0);

    const int window = std::min(cfg.context_length, t + 1);
    const int first = t + 1 - window;
    Batch b;
    b.batch_size = 1;
    b.length = window;
    b.obs_dim = d_obs;
    b.control_kind = cfg.control_kind;
    b.valid.assign(static_cast<size_t>(window), 1);
    b.returns_to_go.assign(h_rtg.begin() + first, h_rtg.end());
    b.observations.assign(h_obs.begin() + static_cast<int64_t>(first) * d_obs, h_obs.end());
    b.timesteps.resize(static_cast<size_t>(window));
    for (int k = 0; k < window; ++k) b.timesteps[static_cast<size_t>(k)] = first + k;
    if (discrete)
      b.actions_discrete.assign(h_act_disc.begin() + first, h_act_disc.end());
    else
      b.actions_cont.assign(h_act_cont.begin() + static_cast<int64_t>(first) * a_dim,
                            h_act_cont.end());

    ForwardOutput out = model.forward(b, /*train=*/false);
    const double* pred = out.predictions.data() + static_cast<int64_t>(window - 1) * out.out_dim;

    std::vector<float> action;
    if (discrete) {
      int best = 0;
      for (int j = 1; j < out.out_dim; ++j)
        if (pred[j] > pred[best]) best = j;
      action = {static_cast<float>(best)};
      h_act_disc.back() = best;
    } else {
      action.assign(static_cast<size_t>(cfg.action_dim), 0.0f);
      for (int j = 0; j < native_action_dim; ++j)
        action[static_cast<size_t>(j)] = static_cast<float>(pred[j]);
      double* hist = h_act_cont.data() + h_act_cont.size() - a_dim;
      for (int j = 0; j < a_dim; ++j) hist[j] = static_cast<double>(action[static_cast<size_t>(j)]);
    }

    StepResult sr = env.step(action);
    total += static_cast<double>(sr.reward);
    rtg -= static_cast<double>(sr.reward);
    obs = sr.observation;
    if (sr.done) break;
  }
  return total;
}

// --- training loops ---------------------------------------------------------------

namespace detail {

inline int resolve_batches_per_epoch(const MethodConfig& mc, const TrajectoryDataset& ds) {
  if (mc.batches_per_epoch > 0) return mc.batches_per_epoch;
  const int n = static_cast<int>(ds.trajectories.size());
  return std::max(1, (n + mc.batch_size - 1) / mc.batch_size);
}

inline LossResult batch_loss(DtModel& model, const ForwardOutput& out, const Batch& b,
                             const MaskVec& action_mask) {
  (void)model;
  return b.control_kind == ControlKind::kDiscrete ? loss_discrete(out, b)
                                                  : loss_continuous(out, b, action_mask);
}

}  // namespace detail

// Protected sparse training of one task inside its assigned copy: the mask is
// re-derived from the current scores at the start of every epoch except the
// last, gradients on weights occupied by earlier tasks are masked, and those
// weights are restored bit-exactly after every optimizer step. Returns the
// mean training loss of the final epoch.
inline double train_sparse_task(DtModel& model, int task, const TrajectoryDataset& ds,
                                const PerTaskState& state, const MethodConfig& mc,
                                const KeepRatioSchedule& schedule, int task_seq_index_1based,
                                int tasks_before_on_copy) {
  model.set_obs_stats(state.obs_mean, state.obs_std);
  model.set_train_scores(true);
  const bool freeze_rest = mc.freeze_non_tsn_after_first && tasks_before_on_copy > 0;
  const bool reuse = mc.reuse_enabled();

  std::vector<ParamTensor*> tsn = model.tsn_params();
  std::vector<MaskVec> prior;
  prior.reserve(tsn.size());
  for (ParamTensor* p : tsn) prior.push_back(p->prior_occupancy(task));

  const double rho = schedule.rho_for(task_seq_index_1based);
  auto derive_masks = [&] {
    for (size_t i = 0; i < tsn.size(); ++i)
      allocate_mask(*tsn[i], task, rho, feasibility(prior[i], reuse));
    model.activate_task(task);
  };

  Adam opt(mc.learning_rate);
  for (ParamTensor* p : model.params()) {
    if (p->tsn) {
      opt.add_slot(&p->value, &p->grad);
      opt.add_slot(&p->scores, &p->score_grad);
    } else if (!freeze_rest) {
      opt.add_slot(&p->value, &p->grad);
    }
  }

  BatchStream stream(ds, mc.context_length, mc.batch_size,
                     derive_seed(mc.seed, "train-batches", static_cast<uint64_t>(task)));
  Rng dropout_rng(derive_seed(mc.seed, "dropout", static_cast<uint64_t>(task)));
  const int bpe = detail::resolve_batches_per_epoch(mc, ds);

  std::vector<std::vector<double>> before(tsn.size());
  double last_epoch_loss = 0.0;
  for (int epoch = 0; epoch < mc.epochs; ++epoch) {
    if (epoch == 0 || epoch < mc.epochs - 1) derive_masks();
    double epoch_loss = 0.0;
    for (int step = 0; step < bpe; ++step) {
      Batch b = stream.next();
      model.zero_grads();
      ForwardOutput out = model.forward(b, /*train=*/true, &dropout_rng);
      LossResult loss = detail::batch_loss(model, out, b, state.action_dim_mask);
      epoch_loss += loss.value;
      model.backward(loss.pred_grad);
      for (size_t i = 0; i < tsn.size(); ++i) protect_gradients(*tsn[i], prior[i]);
      for (size_t i = 0; i < tsn.size(); ++i) before[i] = tsn[i]->value.data;
      opt.step();
      for (size_t i = 0; i < tsn.size(); ++i) restore_protected(*tsn[i], before[i], prior[i]);
    }
    last_epoch_loss = epoch_loss / bpe;
  }
  model.set_train_scores(false);
  return last_epoch_loss;
}

// Plain dense fine-tuning (the naive baseline).
inline double train_dense_task(DtModel& model, int task, const TrajectoryDataset& ds,
                               const PerTaskState& state, const MethodConfig& mc) {
  model.set_dense();
  model.set_obs_stats(state.obs_mean, state.obs_std);
  Adam opt(mc.learning_rate);
  for (ParamTensor* p : model.params()) opt.add_slot(&p->value, &p->grad);

  BatchStream stream(ds, mc.context_length, mc.batch_size,
                     derive_seed(mc.seed, "train-batches", static_cast<uint64_t>(task)));
  Rng dropout_rng(derive_seed(mc.seed, "dropout", static_cast<uint64_t>(task)));
  const int bpe = detail::resolve_batches_per_epoch(mc, ds);
  double last_epoch_loss = 0.0;
  for (int epoch = 0; epoch < mc.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int step = 0; step < bpe; ++step) {
      Batch b = stream.next();
      model.zero_grads();
      ForwardOutput out = model.forward(b, /*train=*/true, &dropout_rng);
      LossResult loss = detail::batch_loss(model, out, b, state.action_dim_mask);
      epoch_loss += loss.value;
      model.backward(loss.pred_grad);
      opt.step();
    }
    last_epoch_loss = epoch_loss / bpe;
  }
  return last_epoch_loss;
}

namespace detail {

// Window sampler over several source datasets for the cumulative baseline.
// Each row is drawn from the replay pool with probability `mix`, otherwise
// from the current task. Observations are pre-normalized per row with the
// source task's statistics, and each row carries its source task index so the
// loss can apply the right action mask.
struct MixedSource {
  const TrajectoryDataset* dataset = nullptr;
  const PerTaskState* state = nullptr;
  std::vector<int> trajectory_subset;  // empty: use all trajectories
};

class MixedBatchStream {
 public:
  MixedBatchStream(MixedSource current, std::vector<MixedSource> past, double mix,
                   int context_length, int batch_size, uint64_t seed)
      : current_(std::move(current)),
        past_(std::move(past)),
        mix_(mix),
        length_(context_length),
        batch_size_(batch_size),
        rng_(seed) {
    build_pairs(current_, &current_pairs_);
    for (size_t s = 0; s < past_.size(); ++s) build_pairs(past_[s], &past_pairs_, static_cast<int>(s));
  }

  bool has_past() const { return !past_pairs_.empty(); }

  std::pair<Batch, std::vector<int>> next() {
    const TaskSpec& spec = current_.dataset->spec;
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

    std::vector<int> row_source(static_cast<size_t>(batch_size_), -1);
    for (int row = 0; row < batch_size_; ++row) {
      const bool from_past = !past_pairs_.empty() && rng_.uniform() < mix_;
      const auto& pairs = from_past ? past_pairs_ : current_pairs_;
      const auto& pick = pairs[static_cast<size_t>(rng_.next_below(pairs.size()))];
      const MixedSource& src = from_past ? past_[static_cast<size_t>(pick.source)] : current_;
      row_source[static_cast<size_t>(row)] = from_past ? pick.source : -1;
      fill_row(b, row, src, pick.trajectory, pick.start);
    }
    return {std::move(b), std::move(row_source)};
  }

  const std::vector<MixedSource>& past() const { return past_; }
  const MixedSource& current() const { return current_; }

 private:
  struct Pair {
    int source = -1;  // -1 = current
    int trajectory = 0;
    int64_t start = 0;
  };

  static void build_pairs(const MixedSource& src, std::vector<Pair>* out, int source_idx = -1) {
    const int d_obs = src.dataset->spec.shared_obs_dim;
    auto add = [&](int ti) {
      const int64_t len = src.dataset->trajectories[static_cast<size_t>(ti)].length(d_obs);
      for (int64_t s = 0; s < len; ++s) out->push_back({source_idx, ti, s});
    };
    if (src.trajectory_subset.empty()) {
      for (size_t ti = 0; ti < src.dataset->trajectories.size(); ++ti) add(static_cast<int>(ti));
    } else {
      for (int ti : src.trajectory_subset) add(ti);
    }
  }

  void fill_row(Batch& b, int row, const MixedSource& src, int ti, int64_t start) {
    const TrajectoryDataset& ds = *src.dataset;
    const int d_obs = ds.spec.shared_obs_dim;
    const int a_cols = action_cols(ds.spec);
    const Trajectory& tr = ds.trajectories[static_cast<size_t>(ti)];
    const int64_t len = tr.length(d_obs);
    const int64_t take = std::min<int64_t>(length_, len - start);
    for (int64_t k = 0; k < take; ++k) {
      const int64_t s = start + k;
      const size_t dst = static_cast<size_t>(row) * length_ + static_cast<size_t>(k);
      for (int d = 0; d < d_obs; ++d) {
        const double raw = static_cast<double>(tr.observations[static_cast<size_t>(s * d_obs + d)]);
        b.observations[dst * d_obs + d] =
            (raw - src.state->obs_mean[static_cast<size_t>(d)]) /
            src.state->obs_std[static_cast<size_t>(d)];
      }
      if (ds.spec.control_kind == ControlKind::kDiscrete) {
        b.actions_discrete[dst] = static_cast<int>(tr.actions[static_cast<size_t>(s)]);
      } else {
        for (int d = 0; d < a_cols; ++d)
          b.actions_cont[dst * a_cols + d] =
              static_cast<double>(tr.actions[static_cast<size_t>(s * a_cols + d)]);
      }
      b.returns_to_go[dst] = ds.returns_to_go[static_cast<size_t>(ti)][static_cast<size_t>(s)];
      b.timesteps[dst] = tr.timesteps[static_cast<size_t>(s)];
      b.valid[dst] = 1;
    }
  }

  MixedSource current_;
  std::vector<MixedSource> past_;
  double mix_;
  int length_, batch_size_;
  Rng rng_;
  std::vector<Pair> current_pairs_, past_pairs_;
};

// Masked MSE where each row applies its own task's action mask.
inline LossResult loss_continuous_per_row(const ForwardOutput& out, const Batch& batch,
                                          const std::vector<const MaskVec*>& row_masks) {
  const int64_t n = static_cast<int64_t>(out.batch_size) * out.length;
  const int d = out.out_dim;
  const int64_t omega = batch.valid_count();
  require(omega > 0, "loss: empty valid set");
  LossResult res;
  res.pred_grad.assign(static_cast<size_t>(n) * d, 0.0);
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    if (!batch.valid[static_cast<size_t>(i)]) continue;
    const MaskVec& m = *row_masks[static_cast<size_t>(i / out.length)];
    const int64_t active = mask_count(m);
    const double* pred = out.predictions.data() + i * d;
    const double* target = batch.actions_cont.data() + i * d;
    double* g = res.pred_grad.data() + i * d;
    for (int j = 0; j < d; ++j) {
      if (!m[static_cast<size_t>(j)]) continue;
      const double diff = pred[j] - target[j];
      total += diff * diff / static_cast<double>(active);
      g[j] = 2.0 * diff / (static_cast<double>(active) * static_cast<double>(omega));
    }
  }
  res.value = total / static_cast<double>(omega);
  return res;
}

// Capacity-bounded rehearsal selection: an equal per-task share of the step
// budget, taking each task's trajectories in order. Never exceeds capacity.
inline std::vector<std::vector<int>> rehearsal_subsets(
    const std::vector<const TrajectoryDataset*>& past, int64_t capacity) {
  std::vector<std::vector<int>> subsets(past.size());
  if (past.empty() || capacity <= 0) return subsets;
  const int64_t quota = capacity / static_cast<int64_t>(past.size());
  for (size_t s = 0; s < past.size(); ++s) {
    const int d_obs = past[s]->spec.shared_obs_dim;
    int64_t used = 0;
    for (size_t ti = 0; ti < past[s]->trajectories.size(); ++ti) {
      const int64_t len = past[s]->trajectories[ti].length(d_obs);
      if (used + len > quota) break;
      used += len;
      subsets[s].push_back(static_cast<int>(ti));
    }
  }
  return subsets;
}

}  // namespace detail

// Cumulative baseline: dense training on the current task mixed with stored
// past data, either the full past datasets (mix mode) or a capacity-bounded
// rehearsal subset.
inline double train_cumulative_task(DtModel& model, int task,
                                    const std::vector<const TrajectoryDataset*>& datasets,
                                    const std::vector<const PerTaskState*>& states,
                                    const MethodConfig& mc) {
  model.set_dense();
  model.clear_obs_stats();  // rows are pre-normalized with their own task stats

  detail::MixedSource current{datasets[static_cast<size_t>(task)],
                              states[static_cast<size_t>(task)],
                              {}};
  std::vector<detail::MixedSource> past;
  std::vector<const TrajectoryDataset*> past_ds(datasets.begin(), datasets.begin() + task);
  std::vector<std::vector<int>> subsets;
  if (mc.replay_capacity > 0) subsets = detail::rehearsal_subsets(past_ds, mc.replay_capacity);
  for (int s = 0; s < task; ++s) {
    detail::MixedSource src{datasets[static_cast<size_t>(s)], states[static_cast<size_t>(s)], {}};
    if (mc.replay_capacity > 0) {
      src.trajectory_subset = subsets[static_cast<size_t>(s)];
      if (src.trajectory_subset.empty()) continue;  // no budget share left for this task
    }
    past.push_back(std::move(src));
  }

  detail::MixedBatchStream stream(std::move(current), std::move(past), mc.replay_mix,
                                  mc.context_length, mc.batch_size,
                                  derive_seed(mc.seed, "train-batches", static_cast<uint64_t>(task)));
  Adam opt(mc.learning_rate);
  for (ParamTensor* p : model.params()) opt.add_slot(&p->value, &p->grad);
  Rng dropout_rng(derive_seed(mc.seed, "dropout", static_cast<uint64_t>(task)));
  const int bpe = detail::resolve_batches_per_epoch(mc, *datasets[static_cast<size_t>(task)]);

  double last_epoch_loss = 0.0;
  for (int epoch = 0; epoch < mc.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int step = 0; step < bpe; ++step) {
      auto [b, row_source] = stream.next();
      model.zero_grads();
      ForwardOutput out = model.forward(b, /*train=*/true, &dropout_rng);
      LossResult loss;
      if (b.control_kind == ControlKind::kDiscrete) {
        loss = loss_discrete(out, b);
      } else {
        std::vector<const MaskVec*> row_masks(static_cast<size_t>(b.batch_size));
        for (int r = 0; r < b.batch_size; ++r) {
          const int src = row_source[static_cast<size_t>(r)];
          const PerTaskState* st =
              src < 0 ? states[static_cast<size_t>(task)] : stream.past()[static_cast<size_t>(src)].state;
          row_masks[static_cast<size_t>(r)] = &st->action_dim_mask;
        }
        loss = detail::loss_continuous_per_row(out, b, row_masks);
      }
      epoch_loss += loss.value;
      model.backward(loss.pred_grad);
      opt.step();
    }
    last_epoch_loss = epoch_loss / bpe;
  }
  return last_epoch_loss;
}

// --- the continual sequence --------------------------------------------------------

inline DtConfig make_template_config(const std::vector<TaskBundle>& tasks,
                                     const MethodConfig& mc) {
  require(!tasks.empty(), "run_sequence: no tasks");
  const TaskSpec& first = tasks.front().dataset.spec;
  DtConfig cfg;
  cfg.embed_dim = mc.embed_dim;
  cfg.n_layers = mc.n_layers;
  cfg.n_heads = mc.n_heads;
  cfg.context_length = mc.context_length;
  cfg.dropout = mc.dropout;
  cfg.obs_dim = first.shared_obs_dim;
  cfg.control_kind = first.control_kind;
  if (first.control_kind == ControlKind::kDiscrete)
    cfg.action_vocab = first.shared_action_dim;
  else
    cfg.action_dim = first.shared_action_dim;
  int horizon = 0;
  for (const TaskBundle& t : tasks) {
    require_input(t.dataset.spec.shared_obs_dim == first.shared_obs_dim &&
                      t.dataset.spec.shared_action_dim == first.shared_action_dim &&
                      t.dataset.spec.control_kind == first.control_kind,
                  "run_sequence: tasks disagree on the shared interface");
    horizon = std::max(horizon, t.dataset.spec.max_horizon);
  }
  cfg.max_timestep = horizon;
  return cfg;
}

inline KeepRatioSchedule make_schedule(const MethodConfig& mc, ControlKind kind, int n_tasks) {
  KeepRatioSchedule s;
  if (mc.rho_kind == "equal_remaining") {
    s.kind = KeepRatioSchedule::Kind::kEqualRemaining;
    s.total_tasks = n_tasks;
  } else if (mc.rho_kind == "constant") {
    s.kind = KeepRatioSchedule::Kind::kConstant;
    s.rho = mc.rho > 0.0 ? mc.rho : (kind == ControlKind::kDiscrete ? 0.5 : 0.33);
  } else {
    throw InvalidInput("unknown keep-ratio schedule: " + mc.rho_kind);
  }
  return s;
}

// Mean greedy return of `episodes` rollouts with stage-independent episode
// seeds, so a frozen policy evaluates to exactly the same number at every
// stage.
inline double evaluate_task(DtModel& model, Environment& env, const PerTaskState& state,
                            int episodes, uint64_t run_seed) {
  double sum = 0.0;
  for (int e = 0; e < episodes; ++e) {
    const uint64_t ep_seed =
        derive_seed(run_seed, "eval-" + state.task_id, static_cast<uint64_t>(e));
    sum += rollout(model, env, state.target_return, env.spec().max_horizon,
                   state.native_action_dim, ep_seed);
  }
  return sum / static_cast<double>(episodes);
}

// Runs the full task sequence for one method configuration and fills the
// performance matrix row by row (all tasks evaluated after every stage).
// When registry_out is given, the final copy registry is handed back for
// checkpointing.
inline RunResult run_sequence(std::vector<TaskBundle>& tasks, const std::string& metric_kind,
                              const MethodConfig& mc,
                              std::unique_ptr<CopyRegistry>* registry_out = nullptr) {
  const auto t_start = std::chrono::steady_clock::now();
  const int n = static_cast<int>(tasks.size());
  const DtConfig template_cfg = make_template_config(tasks, mc);
  const KeepRatioSchedule schedule = make_schedule(mc, template_cfg.control_kind, n);
  const bool tsn = is_tsn_variant(mc.variant);

  auto registry_ptr = std::make_unique<CopyRegistry>(template_cfg, mc.max_copies);
  CopyRegistry& registry = *registry_ptr;

  // Pre-computed per-task states; also used to evaluate not-yet-trained tasks.
  std::vector<PerTaskState> states;
  states.reserve(static_cast<size_t>(n));
  for (const TaskBundle& t : tasks) states.push_back(make_task_state(t.dataset));

  std::vector<const TrajectoryDataset*> datasets;
  std::vector<const PerTaskState*> state_ptrs;
  for (int t = 0; t < n; ++t) {
    datasets.push_back(&tasks[static_cast<size_t>(t)].dataset);
    state_ptrs.push_back(&states[static_cast<size_t>(t)]);
  }

  RunResult result;
  result.matrix = PerformanceMatrix(n);
  for (int j = 0; j < n; ++j)
    result.matrix.targets[static_cast<size_t>(j)] = tasks[static_cast<size_t>(j)].dataset.spec.target_return;
  for (int j = 0; j < n; ++j) result.task_ids.push_back(tasks[static_cast<size_t>(j)].dataset.spec.task_id);

  for (int t = 0; t < n; ++t) {
    const TrajectoryDataset& ds = tasks[static_cast<size_t>(t)].dataset;
    const PerTaskState& state = states[static_cast<size_t>(t)];
    TaskMemory memory = sample_task_memory(
        ds, mc.memory_size, derive_seed(mc.seed, "task-memory", static_cast<uint64_t>(t)));

    RoutingReport report;
    report.task = t;
    report.task_id = ds.spec.task_id;
    report.tau = mc.tau;

    int copy = -1;
    if (!tsn) {
      if (t == 0) copy = registry.spawn_copy(mc.seed);
      else copy = 0;
      report.mode = "dense";
      report.criterion = "none";
    } else if (t == 0) {
      copy = registry.spawn_copy(mc.seed);
      report.mode = "first";
      report.criterion = "none";
    } else if (mc.variant == Variant::kTsnCore) {
      copy = 0;
      report.mode = "core";
      report.criterion = "none";
    } else {
      std::vector<AffinityScore> scores;
      if (mc.variant == Variant::kReplayKl) {
        report.criterion = "replay_kl";
        for (int s = 0; s < t; ++s)
          scores.push_back({AffinityKind::kReplayKl, s, replay_kl(memory, registry.memory(s))});
      } else {
        // identical scoring batches for every candidate
        std::vector<Batch> scoring;
        if (mc.variant != Variant::kAffinityL) {
          BatchStream rs(ds, mc.context_length, mc.batch_size,
                         derive_seed(mc.seed, "routing-batches", static_cast<uint64_t>(t)));
          for (int i = 0; i < mc.routing_batches; ++i) scoring.push_back(rs.next());
        }
        std::vector<double> action_scores, latent_scores;
        for (int s = 0; s < t; ++s) {
          if (mc.variant != Variant::kAffinityL)
            action_scores.push_back(
                action_affinity(registry, s, scoring, state.action_dim_mask));
          if (mc.variant != Variant::kAffinityA)
            latent_scores.push_back(latent_affinity(registry, s, memory));
        }
        if (mc.variant == Variant::kAffinityA) {
          report.criterion = "action";
          for (int s = 0; s < t; ++s)
            scores.push_back({AffinityKind::kAction, s, action_scores[static_cast<size_t>(s)]});
        } else if (mc.variant == Variant::kAffinityL) {
          report.criterion = "latent";
          for (int s = 0; s < t; ++s)
            scores.push_back({AffinityKind::kLatent, s, latent_scores[static_cast<size_t>(s)]});
        } else {
          report.criterion = "hybrid";
          report.alpha = mc.alpha;
          const std::vector<double> hybrid =
              hybrid_affinity(action_scores, latent_scores, mc.alpha);
          for (int s = 0; s < t; ++s)
            scores.push_back({AffinityKind::kHybrid, s, hybrid[static_cast<size_t>(s)]});
        }
      }
      RoutingDecision decision = route(registry, std::move(scores), mc.tau);
      report.mode = to_string(decision.mode);
      report.chosen_source = decision.chosen_source;
      report.scores = decision.scores;
      if (decision.mode == RoutingDecision::Mode::kSpawn)
        copy = registry.spawn_copy(mc.seed);
      else
        copy = decision.copy_id;

      if (mc.warm_start && decision.chosen_source >= 0) {
        Rng ws_rng(derive_seed(mc.seed, "warm-start", static_cast<uint64_t>(t)));
        DtModel& m = registry.model(copy);
        for (ParamTensor* p : m.tsn_params())
          warm_start_scores(*p, p->task_masks.at(decision.chosen_source), mc.warm_start_cfg,
                            ws_rng);
      }
    }

    registry.assign(t, copy);
    report.copy_id = copy;
    registry.record_task_state(t, state);
    registry.record_memory(t, memory);

    DtModel& model = registry.model(copy);
    if (tsn) {
      train_sparse_task(model, t, ds, state, mc, schedule, t + 1,
                        registry.tasks_before_on_copy(t, copy));
      DtModel& own = registry.activate_for_inference(t);
      registry.record_latent_stats(t, fit_latent_stats(own, memory));
    } else if (mc.variant == Variant::kNaive) {
      train_dense_task(model, t, ds, state, mc);
    } else {
      train_cumulative_task(model, t, datasets, state_ptrs, mc);
    }

    report.copies_after = registry.copy_count();
    result.reports.push_back(report);

    // evaluate every task; untrained tasks run as dense probes on copy 0
    for (int j = 0; j < n; ++j) {
      Environment& env = *tasks[static_cast<size_t>(j)].env;
      DtModel* eval_model;
      if (j <= t) {
        eval_model = &registry.activate_for_inference(j, /*masked=*/tsn);
      } else {
        eval_model = &registry.model(0);
        eval_model->set_dense();
        eval_model->set_obs_stats(states[static_cast<size_t>(j)].obs_mean,
                                  states[static_cast<size_t>(j)].obs_std);
      }
      result.matrix.at(t, j) = evaluate_task(*eval_model, env, states[static_cast<size_t>(j)],
                                             mc.eval_episodes, mc.seed);
    }
  }

  result.final_copies = registry.copy_count();
  result.metric_kind = metric_kind;
  result.metric_value = metric_kind == "norm_avg" ? norm_avg(result.matrix) : avg_gap(result.matrix);
  for (int j = 0; j < n; ++j) result.per_task_forgetting.push_back(forgetting(result.matrix, j));
  result.mean_forgetting = n >= 2 ? avg_forgetting(result.matrix) : 0.0;
  result.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  if (registry_out) *registry_out = std::move(registry_ptr);
  return result;
}

// --- results emission ---------------------------------------------------------------

inline nlohmann::json method_config_json(const MethodConfig& mc) {
  nlohmann::json j;
  j["variant"] = to_string(mc.variant);
  j["tau"] = mc.tau;
  j["alpha"] = mc.alpha;
  j["rho_kind"] = mc.rho_kind;
  j["rho"] = mc.rho;
  j["max_copies"] = mc.max_copies;
  j["mask_reuse"] = mc.reuse_enabled();
  j["warm_start"] = mc.warm_start;
  j["warm_start_lambda"] = mc.warm_start_cfg.lambda;
  j["warm_start_noise"] = mc.warm_start_cfg.noise_scale;
  j["replay_mix"] = mc.replay_mix;
  j["replay_capacity"] = mc.replay_capacity;
  j["memory_size"] = mc.memory_size;
  j["epochs"] = mc.epochs;
  j["learning_rate"] = mc.learning_rate;
  j["batch_size"] = mc.batch_size;
  j["batches_per_epoch"] = mc.batches_per_epoch;
  j["routing_batches"] = mc.routing_batches;
  j["eval_episodes"] = mc.eval_episodes;
  j["freeze_non_tsn_after_first"] = mc.freeze_non_tsn_after_first;
  j["seed"] = mc.seed;
  j["embed_dim"] = mc.embed_dim;
  j["n_layers"] = mc.n_layers;
  j["n_heads"] = mc.n_heads;
  j["context_length"] = mc.context_length;
  j["dropout"] = mc.dropout;
  return j;
}

inline nlohmann::json routing_report_json(const RoutingReport& r) {
  nlohmann::json scores = nlohmann::json::array();
  for (const AffinityScore& s : r.scores)
    scores.push_back({{"kind", to_string(s.kind)}, {"source", s.source_task}, {"value", s.value}});
  return nlohmann::json{{"task", r.task},
                        {"task_id", r.task_id},
                        {"mode", r.mode},
                        {"criterion", r.criterion},
                        {"chosen_source", r.chosen_source},
                        {"copy", r.copy_id},
                        {"tau", r.tau},
                        {"alpha", r.alpha},
                        {"scores", scores},
                        {"copies_after", r.copies_after}};
}

inline nlohmann::json run_result_json(const RunResult& res, const MethodConfig& mc,
                                      const std::string& benchmark_name) {
  nlohmann::json j;
  j["schema"] = "tsn-run-results-v1";
  j["benchmark"] = benchmark_name;
  j["tasks"] = res.task_ids;
  j["config"] = method_config_json(mc);
  nlohmann::json matrix = nlohmann::json::array();
  for (int i = 0; i < res.matrix.n; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int k = 0; k < res.matrix.n; ++k) row.push_back(res.matrix.at(i, k));
    matrix.push_back(row);
  }
  j["matrix"] = matrix;
  j["targets"] = res.matrix.targets;
  nlohmann::json reports = nlohmann::json::array();
  for (const RoutingReport& r : res.reports) reports.push_back(routing_report_json(r));
  j["routing"] = reports;
  j["metrics"] = {{"kind", res.metric_kind},
                  {"value", res.metric_value},
                  {"forgetting", res.per_task_forgetting},
                  {"avg_forgetting", res.mean_forgetting}};
  j["copies"] = res.final_copies;
  j["wall_clock_sec"] = res.wall_clock_sec;
  return j;
}

inline void write_run_result(const std::filesystem::path& out_dir, const RunResult& res,
                             const MethodConfig& mc, const std::string& benchmark_name) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream js(out_dir / "results.json");
  js << run_result_json(res, mc, benchmark_name).dump(2) << '\n';

  std::ofstream csv(out_dir / "matrix.csv");
  csv << "stage";
  for (const std::string& id : res.task_ids) csv << ',' << id;
  csv << '\n';
  for (int i = 0; i < res.matrix.n; ++i) {
    csv << i;
    for (int j = 0; j < res.matrix.n; ++j) csv << ',' << detail::format_double(res.matrix.at(i, j));
    csv << '\n';
  }
}

}  // namespace tsn
