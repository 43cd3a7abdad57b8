#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "tsn/nn.hpp"
#include "tsn/rng.hpp"
#include "tsn/tensor.hpp"

namespace tsn {

// Keep-ratio schedule: either a constant density, or an equal share of the
// remaining free capacity for each of the N tasks in the sequence.
struct KeepRatioSchedule {
  enum class Kind { kConstant, kEqualRemaining };
  Kind kind = Kind::kConstant;
  double rho = 0.5;
  int total_tasks = 0;

  // task_index is 1-based within the sequence.
  double rho_for(int task_index) const {
    if (kind == Kind::kConstant) return rho;
    require(total_tasks >= task_index, "keep-ratio schedule: task index beyond N");
    return 1.0 / static_cast<double>(total_tasks - task_index + 1);
  }
};

struct WarmStartConfig {
  double lambda = 1.0;
  double noise_scale = 0.01;
};

// Free weights only when reuse is disabled; the whole tensor when enabled.
inline MaskVec feasibility(const MaskVec& occupancy, bool reuse_enabled) {
  if (reuse_enabled) return MaskVec(occupancy.size(), 1);
  return mask_not(occupancy);
}

// Top-k selection over the largest absolute scores within the feasible set,
// k = ceil(rho * ||F||_0), ties broken by lowest flat index. Records the mask
// for `task` (replacing any earlier allocation of the same task) and refreshes
// occupancy.
inline MaskVec allocate_mask(ParamTensor& p, int task, double rho, const MaskVec& feasible) {
  require(p.tsn, "allocate_mask: tensor is not subnet-enabled");
  require(rho > 0.0 && rho <= 1.0, "allocate_mask: rho must be in (0, 1]");
  require(feasible.size() == static_cast<size_t>(p.value.numel()),
          "allocate_mask: feasibility shape mismatch");

  std::vector<int64_t> candidates;
  candidates.reserve(feasible.size());
  for (size_t i = 0; i < feasible.size(); ++i)
    if (feasible[i]) candidates.push_back(static_cast<int64_t>(i));
  if (candidates.empty())
    throw CapacityExhausted("no feasible weights left in " + p.name);

  const int64_t n_feasible = static_cast<int64_t>(candidates.size());
  const int64_t k = std::min<int64_t>(
      n_feasible, static_cast<int64_t>(std::ceil(rho * static_cast<double>(n_feasible))));

  const double* s = p.scores.ptr();
  std::nth_element(candidates.begin(), candidates.begin() + (k - 1), candidates.end(),
                   [s](int64_t a, int64_t b) {
                     const double sa = std::abs(s[a]), sb = std::abs(s[b]);
                     return sa != sb ? sa > sb : a < b;
                   });
  MaskVec mask(feasible.size(), 0);
  for (int64_t i = 0; i < k; ++i) mask[static_cast<size_t>(candidates[static_cast<size_t>(i)])] = 1;

  p.task_masks[task] = mask;
  p.recompute_occupancy();
  return mask;
}

// M^(t) ⊙ W; pure.
inline Tensor effective_weights(const ParamTensor& p, int task) {
  require(p.tsn, "effective_weights: tensor is not subnet-enabled");
  auto it = p.task_masks.find(task);
  require(it != p.task_masks.end(), "effective_weights: unknown task for " + p.name);
  Tensor out(p.value.shape);
  for (int64_t i = 0; i < p.value.numel(); ++i)
    out.data[static_cast<size_t>(i)] =
        it->second[static_cast<size_t>(i)] ? p.value.data[static_cast<size_t>(i)] : 0.0;
  return out;
}

// Masks the weight gradient with (1 - O_prior).
inline void protect_gradients(ParamTensor& p, const MaskVec& prior_occupancy) {
  require(prior_occupancy.size() == static_cast<size_t>(p.grad.numel()),
          "protect_gradients: shape mismatch");
  for (size_t i = 0; i < prior_occupancy.size(); ++i)
    if (prior_occupancy[i]) p.grad.data[i] = 0.0;
}

// Restores protected entries to their pre-step values bit-exactly, regardless
// of what the optimizer did.
inline void restore_protected(ParamTensor& p, const std::vector<double>& before_step,
                              const MaskVec& prior_occupancy) {
  require(before_step.size() == p.value.data.size() &&
              prior_occupancy.size() == before_step.size(),
          "restore_protected: shape mismatch");
  for (size_t i = 0; i < prior_occupancy.size(); ++i)
    if (prior_occupancy[i]) p.value.data[i] = before_step[i];
}

// S <- lambda * M_source + eps with eps ~ U(0, noise_scale); weights untouched.
inline void warm_start_scores(ParamTensor& p, const MaskVec& source_mask,
                              const WarmStartConfig& cfg, Rng& rng) {
  require(p.tsn, "warm_start_scores: tensor is not subnet-enabled");
  require(source_mask.size() == static_cast<size_t>(p.scores.numel()),
          "warm_start_scores: source mask shape mismatch");
  require(cfg.lambda > 0.0 && cfg.noise_scale > 0.0, "warm start: lambda and noise must be positive");
  for (size_t i = 0; i < source_mask.size(); ++i) {
    double eps = rng.uniform();
    while (eps == 0.0) eps = rng.uniform();
    p.scores.data[i] = cfg.lambda * (source_mask[i] ? 1.0 : 0.0) + eps * cfg.noise_scale;
  }
}

inline void init_scores(ParamTensor& p, Rng& rng) {
  require(p.tsn, "init_scores: tensor is not subnet-enabled");
  init_uniform(p.scores, rng, 0.0, 0.01);
}

inline double occupied_fraction(const ParamTensor& p) {
  return p.occupancy.empty()
             ? 0.0
             : static_cast<double>(mask_count(p.occupancy)) / static_cast<double>(p.occupancy.size());
}

}  // namespace tsn
