#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "tsn/env.hpp"
#include "tsn/io.hpp"
#include "tsn/nn.hpp"
#include "tsn/rng.hpp"
#include "tsn/subnet.hpp"
#include "tsn/trajectory.hpp"

namespace tsn {

struct DtConfig {
  int embed_dim = 64;
  int n_layers = 2;
  int n_heads = 2;
  int context_length = 20;
  int obs_dim = 0;
  ControlKind control_kind = ControlKind::kDiscrete;
  int action_vocab = 0;   // discrete: shared vocabulary size
  int action_dim = 0;     // continuous: shared padded dimension
  int max_timestep = 128;
  double dropout = 0.1;
  std::vector<std::string> exclude_from_tsn = {"embed_timestep"};

  int out_dim() const {
    return control_kind == ControlKind::kDiscrete ? action_vocab : action_dim;
  }

  void validate() const {
    require(embed_dim > 0 && n_layers > 0 && n_heads > 0 && context_length > 0,
            "dt config: sizes must be positive");
    require(embed_dim % n_heads == 0, "dt config: embed_dim must divide by n_heads");
    require(obs_dim > 0, "dt config: obs_dim unset");
    require(out_dim() > 0, "dt config: action output dimension unset");
    require(max_timestep > 0, "dt config: max_timestep unset");
  }

  bool excluded(const std::string& layer) const {
    for (const auto& e : exclude_from_tsn)
      if (layer.rfind(e, 0) == 0) return true;
    return false;
  }
};

struct ForwardOutput {
  int batch_size = 0;
  int length = 0;
  int out_dim = 0;
  int embed_dim = 0;
  std::vector<double> predictions;  // [B*L*out_dim], read at observation tokens
  std::vector<double> latents;      // [B*L*H], observation-encoder outputs
};

// Small Decision Transformer over interleaved (return-to-go, observation,
// action) tokens, one shared timestep embedding per step, causal attention,
// and an action head read at observation tokens.
class DtModel {
 public:
  DtConfig cfg;

  DtModel(const DtConfig& config, uint64_t seed) : cfg(config) {
    cfg.validate();
    Rng rng(derive_seed(seed, "dt-init"));
    const int h = cfg.embed_dim;
    embed_rtg_.init("embed_rtg", h, 1, want_tsn("embed_rtg"), rng);
    embed_obs_.init("embed_obs", h, cfg.obs_dim, want_tsn("embed_obs"), rng);
    if (cfg.control_kind == ControlKind::kDiscrete)
      embed_action_disc_.init("embed_action", cfg.action_vocab, h, false, rng);
    else
      embed_action_cont_.init("embed_action", h, cfg.action_dim, want_tsn("embed_action"), rng);
    embed_timestep_.init("embed_timestep", cfg.max_timestep, h, false, rng);
    embed_ln_.init("embed_ln", h);
    blocks_.resize(static_cast<size_t>(cfg.n_layers));
    for (int i = 0; i < cfg.n_layers; ++i) {
      const std::string name = "block" + std::to_string(i);
      blocks_[static_cast<size_t>(i)] = std::make_unique<TransformerBlock>();
      blocks_[static_cast<size_t>(i)]->init(name, cfg.n_heads, h, want_tsn(name), rng);
    }
    final_ln_.init("final_ln", h);
    head_.init("head", cfg.out_dim(), h, want_tsn("head"), rng);
    for (ParamTensor* p : tsn_params()) init_scores(*p, rng);
  }

  // --- parameter access -----------------------------------------------------

  std::vector<ParamTensor*> params() {
    std::vector<ParamTensor*> out;
    collect(embed_rtg_, out);
    collect(embed_obs_, out);
    if (cfg.control_kind == ControlKind::kDiscrete)
      out.push_back(&embed_action_disc_.table);
    else
      collect(embed_action_cont_, out);
    out.push_back(&embed_timestep_.table);
    out.push_back(&embed_ln_.gain);
    out.push_back(&embed_ln_.shift);
    for (auto& b : blocks_) {
      out.push_back(&b->ln1.gain);
      out.push_back(&b->ln1.shift);
      collect(b->attn.qkv, out);
      collect(b->attn.proj, out);
      out.push_back(&b->ln2.gain);
      out.push_back(&b->ln2.shift);
      collect(b->mlp.fc, out);
      collect(b->mlp.out, out);
    }
    out.push_back(&final_ln_.gain);
    out.push_back(&final_ln_.shift);
    collect(head_, out);
    return out;
  }

  std::vector<ParamTensor*> tsn_params() {
    std::vector<ParamTensor*> out;
    for (ParamTensor* p : params())
      if (p->tsn) out.push_back(p);
    return out;
  }

  int64_t parameter_count() {
    int64_t n = 0;
    for (ParamTensor* p : params()) n += p->value.numel();
    return n;
  }

  void zero_grads() {
    for (ParamTensor* p : params()) p->zero_grads();
  }

  // --- per-task activation ----------------------------------------------------

  // Dense forward: no masks (baselines, untrained probes).
  void set_dense() {
    for (ParamTensor* p : tsn_params()) p->active_mask = nullptr;
  }

  // Activates M^(task) on every subnet tensor.
  void activate_task(int task) {
    for (ParamTensor* p : tsn_params()) {
      auto it = p->task_masks.find(task);
      require(it != p->task_masks.end(),
              "activate_task: no mask for task " + std::to_string(task) + " on " + p->name);
      p->active_mask = &it->second;
    }
  }

  bool has_task_mask(int task) {
    for (ParamTensor* p : tsn_params())
      if (!p->task_masks.count(task)) return false;
    return !tsn_params().empty();
  }

  void set_train_scores(bool on) {
    for (ParamTensor* p : tsn_params()) p->train_scores = on;
  }

  void set_obs_stats(const std::vector<double>& mean, const std::vector<double>& std) {
    require(static_cast<int>(mean.size()) == cfg.obs_dim &&
                static_cast<int>(std.size()) == cfg.obs_dim,
            "obs stats: dimension mismatch");
    obs_mean_ = mean;
    obs_std_ = std;
    for (double& s : obs_std_) s = std::max(s, 1e-6);
  }

  void clear_obs_stats() {
    obs_mean_.clear();
    obs_std_.clear();
  }

  // --- forward / backward -----------------------------------------------------

  ForwardOutput forward(const Batch& batch, bool train, Rng* dropout_rng = nullptr) {
    require(batch.obs_dim == cfg.obs_dim, "forward: observation dim mismatch");
    require(batch.length <= cfg.context_length, "forward: batch longer than context");
    require(batch.control_kind == cfg.control_kind, "forward: control kind mismatch");
    require(!train || dropout_rng != nullptr, "forward: train mode needs a dropout rng");

    const int b_sz = batch.batch_size, l = batch.length, h = cfg.embed_dim;
    const int64_t n = static_cast<int64_t>(b_sz) * l;
    const int tokens = 3 * l;
    const int64_t tok_elems = static_cast<int64_t>(b_sz) * tokens * h;

    // embed inputs
    rtg_in_.assign(static_cast<size_t>(n), 0.0);
    for (int64_t i = 0; i < n; ++i) rtg_in_[static_cast<size_t>(i)] = batch.returns_to_go[static_cast<size_t>(i)];
    obs_in_.assign(static_cast<size_t>(n) * cfg.obs_dim, 0.0);
    normalize_obs(batch.observations.data(), n, obs_in_.data());
    ts_idx_.assign(static_cast<size_t>(n), 0);
    for (int64_t i = 0; i < n; ++i)
      ts_idx_[static_cast<size_t>(i)] = static_cast<int>(
          std::min<int64_t>(batch.timesteps[static_cast<size_t>(i)], cfg.max_timestep - 1));

    rtg_e_.assign(static_cast<size_t>(n) * h, 0.0);
    obs_e_.assign(static_cast<size_t>(n) * h, 0.0);
    act_e_.assign(static_cast<size_t>(n) * h, 0.0);
    time_e_.assign(static_cast<size_t>(n) * h, 0.0);
    embed_rtg_.forward(rtg_in_.data(), n, rtg_e_.data());
    embed_obs_.forward(obs_in_.data(), n, obs_e_.data());
    if (cfg.control_kind == ControlKind::kDiscrete) {
      act_idx_ = batch.actions_discrete;
      for (int a : act_idx_) require(a >= 0 && a < cfg.action_vocab, "forward: action index out of vocabulary");
      embed_action_disc_.forward(act_idx_.data(), n, act_e_.data());
    } else {
      act_in_ = batch.actions_cont;
      embed_action_cont_.forward(act_in_.data(), n, act_e_.data());
    }
    embed_timestep_.forward(ts_idx_.data(), n, time_e_.data());

    // interleave (rtg, obs, act) tokens per step
    tok_.assign(static_cast<size_t>(tok_elems), 0.0);
    for (int64_t i = 0; i < n; ++i) {
      const int64_t row = i / l, step = i % l;
      double* base = tok_.data() + (row * tokens + 3 * step) * h;
      const double* te = time_e_.data() + i * h;
      const double* re = rtg_e_.data() + i * h;
      const double* oe = obs_e_.data() + i * h;
      const double* ae = act_e_.data() + i * h;
      for (int d = 0; d < h; ++d) {
        base[d] = re[d] + te[d];
        base[h + d] = oe[d] + te[d];
        base[2 * h + d] = ae[d] + te[d];
      }
    }

    tok_ln_.assign(static_cast<size_t>(tok_elems), 0.0);
    embed_ln_.forward(tok_.data(), static_cast<int64_t>(b_sz) * tokens, tok_ln_.data());
    xs_.assign(static_cast<size_t>(cfg.n_layers) + 1, {});
    xs_[0].assign(static_cast<size_t>(tok_elems), 0.0);
    embed_drop_.forward(tok_ln_.data(), tok_elems, cfg.dropout, train, dropout_rng, xs_[0].data());
    for (int i = 0; i < cfg.n_layers; ++i) {
      xs_[static_cast<size_t>(i) + 1].assign(static_cast<size_t>(tok_elems), 0.0);
      blocks_[static_cast<size_t>(i)]->forward(xs_[static_cast<size_t>(i)].data(), b_sz, tokens,
                                               cfg.dropout, train, dropout_rng,
                                               xs_[static_cast<size_t>(i) + 1].data());
    }
    xf_.assign(static_cast<size_t>(tok_elems), 0.0);
    final_ln_.forward(xs_[static_cast<size_t>(cfg.n_layers)].data(),
                      static_cast<int64_t>(b_sz) * tokens, xf_.data());

    // action predictions from observation-token outputs
    hidden_obs_.assign(static_cast<size_t>(n) * h, 0.0);
    for (int64_t i = 0; i < n; ++i) {
      const int64_t row = i / l, step = i % l;
      const double* src = xf_.data() + (row * tokens + 3 * step + 1) * h;
      std::copy(src, src + h, hidden_obs_.data() + i * h);
    }
    ForwardOutput out;
    out.batch_size = b_sz;
    out.length = l;
    out.out_dim = cfg.out_dim();
    out.embed_dim = h;
    out.predictions.assign(static_cast<size_t>(n) * cfg.out_dim(), 0.0);
    head_.forward(hidden_obs_.data(), n, out.predictions.data());
    out.latents = obs_e_;
    train_cached_ = train;
    forward_ran_ = true;
    cached_batch_size_ = b_sz;
    cached_length_ = l;
    return out;
  }

  // Accumulates gradients for every parameter from d(loss)/d(predictions).
  void backward(const std::vector<double>& pred_grad) {
    require(forward_ran_ && train_cached_, "backward: requires a preceding train-mode forward");
    const int b_sz = cached_batch_size_, l = cached_length_, h = cfg.embed_dim;
    const int64_t n = static_cast<int64_t>(b_sz) * l;
    const int tokens = 3 * l;
    const int64_t tok_elems = static_cast<int64_t>(b_sz) * tokens * h;
    require(pred_grad.size() == static_cast<size_t>(n) * cfg.out_dim(),
            "backward: prediction gradient size mismatch");

    dhidden_.assign(static_cast<size_t>(n) * h, 0.0);
    head_.backward(hidden_obs_.data(), n, pred_grad.data(), dhidden_.data());

    dxf_.assign(static_cast<size_t>(tok_elems), 0.0);
    for (int64_t i = 0; i < n; ++i) {
      const int64_t row = i / l, step = i % l;
      double* dst = dxf_.data() + (row * tokens + 3 * step + 1) * h;
      const double* src = dhidden_.data() + i * h;
      std::copy(src, src + h, dst);
    }

    dx_a_.assign(static_cast<size_t>(tok_elems), 0.0);
    dx_b_.assign(static_cast<size_t>(tok_elems), 0.0);
    final_ln_.backward(static_cast<int64_t>(b_sz) * tokens, dxf_.data(), dx_a_.data());
    for (int i = cfg.n_layers - 1; i >= 0; --i) {
      blocks_[static_cast<size_t>(i)]->backward(xs_[static_cast<size_t>(i)].data(), b_sz, tokens,
                                                dx_a_.data(), dx_b_.data());
      std::swap(dx_a_, dx_b_);
    }
    embed_drop_.backward(dx_a_.data(), tok_elems, dx_b_.data());
    embed_ln_.backward(static_cast<int64_t>(b_sz) * tokens, dx_b_.data(), dx_a_.data());

    // split token gradients back to the three embedding paths
    drtg_e_.assign(static_cast<size_t>(n) * h, 0.0);
    dobs_e_.assign(static_cast<size_t>(n) * h, 0.0);
    dact_e_.assign(static_cast<size_t>(n) * h, 0.0);
    dtime_e_.assign(static_cast<size_t>(n) * h, 0.0);
    for (int64_t i = 0; i < n; ++i) {
      const int64_t row = i / l, step = i % l;
      const double* base = dx_a_.data() + (row * tokens + 3 * step) * h;
      for (int d = 0; d < h; ++d) {
        drtg_e_[static_cast<size_t>(i * h + d)] = base[d];
        dobs_e_[static_cast<size_t>(i * h + d)] = base[h + d];
        dact_e_[static_cast<size_t>(i * h + d)] = base[2 * h + d];
        dtime_e_[static_cast<size_t>(i * h + d)] = base[d] + base[h + d] + base[2 * h + d];
      }
    }
    embed_rtg_.backward(rtg_in_.data(), n, drtg_e_.data(), nullptr);
    embed_obs_.backward(obs_in_.data(), n, dobs_e_.data(), nullptr);
    if (cfg.control_kind == ControlKind::kDiscrete)
      embed_action_disc_.backward(act_idx_.data(), n, dact_e_.data());
    else
      embed_action_cont_.backward(act_in_.data(), n, dact_e_.data(), nullptr);
    embed_timestep_.backward(ts_idx_.data(), n, dtime_e_.data());
    forward_ran_ = false;
  }

  // Observation-encoder latent for a single raw observation, under whatever
  // mask and normalization are currently active.
  std::vector<double> encode_observation(const std::vector<double>& raw_obs) {
    require(static_cast<int>(raw_obs.size()) == cfg.obs_dim, "encode: obs dim mismatch");
    std::vector<double> normed(raw_obs.size());
    normalize_obs(raw_obs.data(), 1, normed.data());
    std::vector<double> z(static_cast<size_t>(cfg.embed_dim), 0.0);
    embed_obs_.forward(normed.data(), 1, z.data());
    return z;
  }

  // --- checkpointing ----------------------------------------------------------

  void save(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "params");
    fs::create_directories(dir / "masks");
    std::vector<std::pair<std::string, std::string>> meta{
        {"embed_dim", std::to_string(cfg.embed_dim)},
        {"n_layers", std::to_string(cfg.n_layers)},
        {"n_heads", std::to_string(cfg.n_heads)},
        {"context_length", std::to_string(cfg.context_length)},
        {"obs_dim", std::to_string(cfg.obs_dim)},
        {"control_kind", to_string(cfg.control_kind)},
        {"action_vocab", std::to_string(cfg.action_vocab)},
        {"action_dim", std::to_string(cfg.action_dim)},
        {"max_timestep", std::to_string(cfg.max_timestep)},
        {"dropout", detail::format_double(cfg.dropout)},
    };
    std::string excludes;
    for (const auto& e : cfg.exclude_from_tsn) excludes += (excludes.empty() ? "" : ",") + e;
    meta.emplace_back("exclude_from_tsn", excludes);
    std::string names, tsn_flags, task_lists;
    for (ParamTensor* p : params()) {
      names += (names.empty() ? "" : ",") + p->name;
      tsn_flags += (tsn_flags.empty() ? "" : ",") + std::string(p->tsn ? "1" : "0");
      io::write_f64(dir / "params" / (p->name + ".bin"), p->value.data, p->value.shape);
      if (p->tsn) {
        io::write_f64(dir / "params" / (p->name + ".scores.bin"), p->scores.data,
                      p->scores.shape);
        io::write_bits(dir / "masks" / (p->name + ".occupancy.bin"), p->occupancy,
                       p->value.shape);
        for (const auto& [task, mask] : p->task_masks)
          io::write_bits(dir / "masks" / (p->name + ".task_" + std::to_string(task) + ".bin"),
                         mask, p->value.shape);
      }
    }
    meta.emplace_back("param_names", names);
    meta.emplace_back("param_tsn", tsn_flags);
    std::string tasks;
    for (ParamTensor* p : tsn_params()) {
      for (const auto& [task, mask] : p->task_masks)
        tasks += (tasks.empty() ? "" : ",") + std::to_string(task);
      break;  // all subnet tensors carry the same task set
    }
    meta.emplace_back("tasks", tasks);
    io::write_kv(dir / "meta.txt", meta);
  }

  static std::unique_ptr<DtModel> load(const std::filesystem::path& dir) {
    const auto kv = io::read_kv(dir / "meta.txt");
    const std::string where = (dir / "meta.txt").string();
    DtConfig cfg;
    cfg.embed_dim = std::stoi(io::kv_get(kv, "embed_dim", where));
    cfg.n_layers = std::stoi(io::kv_get(kv, "n_layers", where));
    cfg.n_heads = std::stoi(io::kv_get(kv, "n_heads", where));
    cfg.context_length = std::stoi(io::kv_get(kv, "context_length", where));
    cfg.obs_dim = std::stoi(io::kv_get(kv, "obs_dim", where));
    cfg.control_kind = control_kind_from(io::kv_get(kv, "control_kind", where));
    cfg.action_vocab = std::stoi(io::kv_get(kv, "action_vocab", where));
    cfg.action_dim = std::stoi(io::kv_get(kv, "action_dim", where));
    cfg.max_timestep = std::stoi(io::kv_get(kv, "max_timestep", where));
    cfg.dropout = std::stod(io::kv_get(kv, "dropout", where));
    cfg.exclude_from_tsn.clear();
    std::string excludes = io::kv_get(kv, "exclude_from_tsn", where);
    for (size_t pos = 0; pos < excludes.size();) {
      size_t comma = excludes.find(',', pos);
      if (comma == std::string::npos) comma = excludes.size();
      if (comma > pos) cfg.exclude_from_tsn.push_back(excludes.substr(pos, comma - pos));
      pos = comma + 1;
    }

    auto model = std::make_unique<DtModel>(cfg, 0);
    std::string tasks = io::kv_get(kv, "tasks", where);
    std::vector<int> task_ids;
    for (size_t pos = 0; pos < tasks.size();) {
      size_t comma = tasks.find(',', pos);
      if (comma == std::string::npos) comma = tasks.size();
      if (comma > pos) task_ids.push_back(std::stoi(tasks.substr(pos, comma - pos)));
      pos = comma + 1;
    }
    for (ParamTensor* p : model->params()) {
      std::vector<int64_t> shape;
      p->value.data = io::read_f64(dir / "params" / (p->name + ".bin"), &shape);
      require_input(shape == p->value.shape, "checkpoint: shape mismatch for " + p->name);
      if (p->tsn) {
        p->scores.data = io::read_f64(dir / "params" / (p->name + ".scores.bin"));
        for (int task : task_ids)
          p->task_masks[task] = io::read_bits(
              dir / "masks" / (p->name + ".task_" + std::to_string(task) + ".bin"));
        p->recompute_occupancy();
        MaskVec stored = io::read_bits(dir / "masks" / (p->name + ".occupancy.bin"));
        require_input(stored == p->occupancy,
                      "checkpoint: stored occupancy disagrees with masks for " + p->name);
      }
    }
    return model;
  }

 private:
  bool want_tsn(const std::string& layer) const { return !cfg.excluded(layer); }

  static void collect(Linear& lin, std::vector<ParamTensor*>& out) {
    out.push_back(&lin.weight);
    out.push_back(&lin.bias);
  }

  void normalize_obs(const double* raw, int64_t n, double* out) const {
    const int d = cfg.obs_dim;
    if (obs_mean_.empty()) {
      std::copy(raw, raw + n * d, out);
      return;
    }
    for (int64_t i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j)
        out[i * d + j] = (raw[i * d + j] - obs_mean_[static_cast<size_t>(j)]) /
                         obs_std_[static_cast<size_t>(j)];
  }

  Linear embed_rtg_, embed_obs_, embed_action_cont_;
  Embedding embed_action_disc_, embed_timestep_;
  LayerNorm embed_ln_, final_ln_;
  std::vector<std::unique_ptr<TransformerBlock>> blocks_;
  Linear head_;

  std::vector<double> obs_mean_, obs_std_;

  // forward caches
  std::vector<double> rtg_in_, obs_in_, act_in_;
  std::vector<int> act_idx_, ts_idx_;
  std::vector<double> rtg_e_, obs_e_, act_e_, time_e_;
  std::vector<double> tok_, tok_ln_, xf_, hidden_obs_;
  std::vector<std::vector<double>> xs_;
  Dropout embed_drop_;
  // backward scratch
  std::vector<double> dhidden_, dxf_, dx_a_, dx_b_;
  std::vector<double> drtg_e_, dobs_e_, dact_e_, dtime_e_;
  bool forward_ran_ = false;
  bool train_cached_ = false;
  int cached_batch_size_ = 0, cached_length_ = 0;
};

// --- training objectives -------------------------------------------------------

struct LossResult {
  double value = 0.0;
  std::vector<double> pred_grad;  // d(loss)/d(predictions), zero at padded positions
};

// Mean cross-entropy over valid positions; padded positions contribute nothing.
inline LossResult loss_discrete(const ForwardOutput& out, const Batch& batch) {
  require(batch.control_kind == ControlKind::kDiscrete, "loss_discrete: continuous batch");
  const int64_t n = static_cast<int64_t>(out.batch_size) * out.length;
  const int v = out.out_dim;
  const int64_t omega = batch.valid_count();
  require(omega > 0, "loss_discrete: empty valid set");

  LossResult res;
  res.pred_grad.assign(static_cast<size_t>(n) * v, 0.0);
  double total = 0.0;
  std::vector<double> probs(static_cast<size_t>(v));
  for (int64_t i = 0; i < n; ++i) {
    if (!batch.valid[static_cast<size_t>(i)]) continue;
    const double* logits = out.predictions.data() + i * v;
    const int target = batch.actions_discrete[static_cast<size_t>(i)];
    double mx = logits[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, logits[j]);
    double z = 0.0;
    for (int j = 0; j < v; ++j) {
      probs[static_cast<size_t>(j)] = std::exp(logits[j] - mx);
      z += probs[static_cast<size_t>(j)];
    }
    total += std::log(z) + mx - logits[target];
    double* g = res.pred_grad.data() + i * v;
    const double inv = 1.0 / (z * static_cast<double>(omega));
    for (int j = 0; j < v; ++j) g[j] = probs[static_cast<size_t>(j)] * inv;
    g[target] -= 1.0 / static_cast<double>(omega);
  }
  res.value = total / static_cast<double>(omega);
  return res;
}

// Squared error summed over active action dimensions, divided by ||m_a||_1,
// averaged over valid positions.
inline LossResult loss_continuous(const ForwardOutput& out, const Batch& batch,
                                  const MaskVec& action_mask) {
  require(batch.control_kind == ControlKind::kContinuous, "loss_continuous: discrete batch");
  const int64_t n = static_cast<int64_t>(out.batch_size) * out.length;
  const int d = out.out_dim;
  require(static_cast<int>(action_mask.size()) == d, "loss_continuous: mask dim mismatch");
  const int64_t active = mask_count(action_mask);
  require(active > 0, "loss_continuous: all-zero action mask");
  const int64_t omega = batch.valid_count();
  require(omega > 0, "loss_continuous: empty valid set");

  LossResult res;
  res.pred_grad.assign(static_cast<size_t>(n) * d, 0.0);
  double total = 0.0;
  const double denom = static_cast<double>(active) * static_cast<double>(omega);
  for (int64_t i = 0; i < n; ++i) {
    if (!batch.valid[static_cast<size_t>(i)]) continue;
    const double* pred = out.predictions.data() + i * d;
    const double* target = batch.actions_cont.data() + i * d;
    double* g = res.pred_grad.data() + i * d;
    for (int j = 0; j < d; ++j) {
      if (!action_mask[static_cast<size_t>(j)]) continue;
      const double diff = pred[j] - target[j];
      total += diff * diff / static_cast<double>(active);
      g[j] = 2.0 * diff / denom;
    }
  }
  res.value = total / static_cast<double>(omega);
  return res;
}

}  // namespace tsn
