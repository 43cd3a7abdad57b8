#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tsn/dt_model.hpp"
#include "tsn/registry.hpp"
#include "tsn/trajectory.hpp"

namespace tsn {

enum class AffinityKind { kAction, kLatent, kHybrid, kReplayKl };

inline std::string to_string(AffinityKind k) {
  switch (k) {
    case AffinityKind::kAction: return "action";
    case AffinityKind::kLatent: return "latent";
    case AffinityKind::kHybrid: return "hybrid";
    default: return "replay_kl";
  }
}

struct AffinityScore {
  AffinityKind kind = AffinityKind::kAction;
  int source_task = -1;
  double value = 0.0;
};

struct RoutingDecision {
  enum class Mode { kFirst, kReuse, kSpawn, kFallback };
  Mode mode = Mode::kFirst;
  int chosen_source = -1;  // set for reuse and fallback
  int copy_id = -1;        // filled by the caller once the copy exists
  std::vector<AffinityScore> scores;
  double tau = 0.0;
  double alpha = -1.0;  // hybrid only
};

inline std::string to_string(RoutingDecision::Mode m) {
  switch (m) {
    case RoutingDecision::Mode::kFirst: return "first";
    case RoutingDecision::Mode::kReuse: return "reuse";
    case RoutingDecision::Mode::kSpawn: return "spawn";
    default: return "fallback";
  }
}

// Teacher-forced loss of the source task's subnetwork on new-task batches:
// cross-entropy for discrete control, masked MSE (with the NEW task's action
// mask) for continuous control. The same batch list must be used for every
// candidate so scores are comparable. No parameters are updated.
inline double action_affinity(CopyRegistry& registry, int source_task,
                              const std::vector<Batch>& scoring_batches,
                              const MaskVec& new_task_action_mask) {
  require(!scoring_batches.empty(), "action_affinity: no scoring batches");
  DtModel& model = registry.activate_for_inference(source_task);
  require(model.cfg.control_kind == scoring_batches.front().control_kind,
          "action_affinity: control kind mismatch between source head and new task");
  double weighted = 0.0;
  int64_t total_positions = 0;
  for (const Batch& b : scoring_batches) {
    ForwardOutput out = model.forward(b, /*train=*/false);
    const LossResult loss = b.control_kind == ControlKind::kDiscrete
                                ? loss_discrete(out, b)
                                : loss_continuous(out, b, new_task_action_mask);
    const int64_t omega = b.valid_count();
    weighted += loss.value * static_cast<double>(omega);
    total_positions += omega;
  }
  return weighted / static_cast<double>(total_positions);
}

// KL(N_a || N_b) for diagonal Gaussians.
inline double diag_gaussian_kl(const LatentStats& a, const LatentStats& b) {
  require(a.mean.size() == b.mean.size() && a.var.size() == b.var.size(),
          "diag_gaussian_kl: dimension mismatch");
  double kl = 0.0;
  for (size_t h = 0; h < a.mean.size(); ++h) {
    const double va = a.var[h], vb = b.var[h];
    const double dm = b.mean[h] - a.mean[h];
    kl += va / vb + dm * dm / vb - 1.0 + std::log(vb / va);
  }
  return 0.5 * kl;
}

inline double symmetric_kl(const LatentStats& a, const LatentStats& b) {
  return 0.5 * (diag_gaussian_kl(a, b) + diag_gaussian_kl(b, a));
}

// Fits the new-task memory under the source task's encoder (copy, mask, and
// normalization of the source) and returns the symmetric KL against the
// source's stored latent statistics.
inline double latent_affinity(CopyRegistry& registry, int source_task,
                              const TaskMemory& new_task_memory) {
  require(registry.has_latent_stats(source_task), "latent_affinity: missing source stats");
  DtModel& model = registry.activate_for_inference(source_task);
  const LatentStats through_source = fit_latent_stats(model, new_task_memory);
  return symmetric_kl(through_source, registry.latent_stats(source_task));
}

// Min-max normalizes each score family across candidates and combines with
// weight alpha. A family in which every candidate scores the same contributes
// zero to all candidates. With a single candidate the raw scores are combined
// without normalization.
inline std::vector<double> hybrid_affinity(const std::vector<double>& action_scores,
                                           const std::vector<double>& latent_scores,
                                           double alpha) {
  require(!action_scores.empty() && action_scores.size() == latent_scores.size(),
          "hybrid_affinity: candidate lists must be non-empty and aligned");
  require(alpha >= 0.0 && alpha <= 1.0, "hybrid_affinity: alpha must be in [0, 1]");
  const size_t n = action_scores.size();
  if (n == 1) return {alpha * action_scores[0] + (1.0 - alpha) * latent_scores[0]};

  auto normalize = [](const std::vector<double>& v) {
    double lo = v[0], hi = v[0];
    for (double x : v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    std::vector<double> out(v.size(), 0.0);
    if (hi > lo)
      for (size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - lo) / (hi - lo);
    return out;  // degenerate family: all zeros
  };
  const std::vector<double> a = normalize(action_scores);
  const std::vector<double> l = normalize(latent_scores);
  std::vector<double> out(n, 0.0);
  for (size_t i = 0; i < n; ++i) out[i] = alpha * a[i] + (1.0 - alpha) * l[i];
  return out;
}

// Mean softmax-pseudo-probability KL over the first K' = min(|M_t|, |M_s|)
// memory pairs in stored order; direction KL(p_source || p_target).
inline double replay_kl(const TaskMemory& target_memory, const TaskMemory& source_memory) {
  require(target_memory.count() > 0 && source_memory.count() > 0,
          "replay_kl: memories must be non-empty");
  require(target_memory.obs_dim == source_memory.obs_dim, "replay_kl: obs dim mismatch");
  const int pairs = std::min(target_memory.count(), source_memory.count());
  const int d = target_memory.obs_dim;

  auto softmax = [d](const std::vector<double>& x) {
    std::vector<double> p(static_cast<size_t>(d));
    double mx = x[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, x[static_cast<size_t>(j)]);
    double z = 0.0;
    for (int j = 0; j < d; ++j) {
      p[static_cast<size_t>(j)] = std::exp(x[static_cast<size_t>(j)] - mx);
      z += p[static_cast<size_t>(j)];
    }
    for (double& v : p) v /= z;
    return p;
  };

  double total = 0.0;
  for (int i = 0; i < pairs; ++i) {
    const std::vector<double> ps = softmax(source_memory.observation(i));
    const std::vector<double> pt = softmax(target_memory.observation(i));
    for (int j = 0; j < d; ++j)
      total += ps[static_cast<size_t>(j)] *
               std::log(ps[static_cast<size_t>(j)] / pt[static_cast<size_t>(j)]);
  }
  return total / static_cast<double>(pairs);
}

// Reuse-vs-spawn decision: the best (lowest-scoring) source wins; reuse iff
// its score is within tau, otherwise spawn while the budget allows, otherwise
// fall back to the best existing copy.
inline RoutingDecision route(const CopyRegistry& registry, std::vector<AffinityScore> scores,
                             double tau) {
  require(!scores.empty(), "route: empty score list (only task 1 bypasses routing)");
  RoutingDecision d;
  d.scores = std::move(scores);
  d.tau = tau;
  const AffinityScore* best = &d.scores.front();
  for (const AffinityScore& s : d.scores) {
    require(std::isfinite(s.value), "route: non-finite affinity score");
    if (s.value < best->value || (s.value == best->value && s.source_task < best->source_task))
      best = &s;
  }
  if (best->value <= tau) {
    d.mode = RoutingDecision::Mode::kReuse;
    d.chosen_source = best->source_task;
    d.copy_id = registry.copy_of(best->source_task);
  } else if (!registry.budget_exhausted()) {
    d.mode = RoutingDecision::Mode::kSpawn;
  } else {
    d.mode = RoutingDecision::Mode::kFallback;
    d.chosen_source = best->source_task;
    d.copy_id = registry.copy_of(best->source_task);
  }
  return d;
}

}  // namespace tsn
