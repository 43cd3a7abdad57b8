#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "tsn/bench.hpp"
#include "tsn/registry.hpp"
#include "tsn/subnet.hpp"

namespace fs = std::filesystem;
using namespace tsn;

namespace {

DtConfig small_config() {
  DtConfig cfg;
  cfg.embed_dim = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.context_length = 4;
  cfg.obs_dim = 32;  // grid_n = 4 gridkey observations
  cfg.control_kind = ControlKind::kDiscrete;
  cfg.action_vocab = 4;
  cfg.max_timestep = 16;
  cfg.dropout = 0.0;
  return cfg;
}

TrajectoryDataset small_dataset(uint64_t seed, double theta = 0.0) {
  auto env = make_gridkey_task("t", 5, theta, 4, 16);
  return generate_expert_dataset(*env, 30, seed);
}

void allocate_all(DtModel& model, int task, double rho) {
  for (ParamTensor* p : model.tsn_params())
    allocate_mask(*p, task, rho, feasibility(p->prior_occupancy(task), false));
}

Batch probe_batch(const DtConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  Batch b;
  b.batch_size = 2;
  b.length = 3;
  b.obs_dim = cfg.obs_dim;
  b.control_kind = cfg.control_kind;
  const int64_t n = 6;
  b.observations.resize(static_cast<size_t>(n) * cfg.obs_dim);
  for (double& v : b.observations) v = rng.uniform();
  b.actions_discrete.assign(static_cast<size_t>(n), 1);
  b.returns_to_go.assign(static_cast<size_t>(n), 1.0);
  b.timesteps = {0, 1, 2, 0, 1, 2};
  b.valid.assign(static_cast<size_t>(n), 1);
  return b;
}

}  // namespace

TEST_CASE("the first spawn is copy 0 and the budget is enforced") {
  CopyRegistry reg(small_config(), /*max_copies=*/1);
  REQUIRE(reg.spawn_copy(1) == 0);
  REQUIRE(reg.copy_count() == 1);
  REQUIRE(reg.budget_exhausted());
  REQUIRE_THROWS_AS(reg.spawn_copy(2), ContractViolation);
}

TEST_CASE("spawns with different seeds give different initial weights") {
  CopyRegistry reg(small_config(), 0);
  reg.spawn_copy(1);
  CopyRegistry reg2(small_config(), 0);
  reg2.spawn_copy(99);
  REQUIRE(reg.model(0).params()[0]->value.data != reg2.model(0).params()[0]->value.data);
}

TEST_CASE("assignment is permanent and double-assign is rejected") {
  CopyRegistry reg(small_config(), 0);
  reg.spawn_copy(1);
  reg.assign(0, 0);
  REQUIRE(reg.copy_of(0) == 0);
  REQUIRE_THROWS_AS(reg.assign(0, 0), ContractViolation);
  REQUIRE_THROWS_AS(reg.copy_of(3), ContractViolation);
}

TEST_CASE("re-activating a task reproduces its outputs bit-exactly") {
  CopyRegistry reg(small_config(), 0);
  reg.spawn_copy(7);
  DtModel& m = reg.model(0);
  allocate_all(m, 0, 0.5);
  allocate_all(m, 1, 0.5);
  for (int task : {0, 1}) {
    reg.assign(task, 0);
    TrajectoryDataset ds = small_dataset(10 + static_cast<uint64_t>(task));
    reg.record_task_state(task, make_task_state(ds));
  }

  Batch probe = probe_batch(m.cfg, 5);
  DtModel& a0 = reg.activate_for_inference(0);
  const std::vector<double> out_a = a0.forward(probe, false).predictions;
  reg.activate_for_inference(1);
  DtModel& a0_again = reg.activate_for_inference(0);
  REQUIRE(a0_again.forward(probe, false).predictions == out_a);
}

TEST_CASE("latent statistics: mean is the plain average and variance is floored") {
  CopyRegistry reg(small_config(), 0);
  reg.spawn_copy(3);
  DtModel& m = reg.model(0);
  allocate_all(m, 0, 0.5);
  m.activate_task(0);
  m.clear_obs_stats();

  TaskMemory mem;
  mem.task_id = "t";
  mem.obs_dim = m.cfg.obs_dim;
  std::vector<float> one_obs(static_cast<size_t>(m.cfg.obs_dim), 0.25f);
  for (int i = 0; i < 8; ++i)
    mem.observations.insert(mem.observations.end(), one_obs.begin(), one_obs.end());

  LatentStats stats = fit_latent_stats(m, mem);
  for (double v : stats.var) REQUIRE(v == 1e-6);  // identical samples: floored variance
  const std::vector<double> z = m.encode_observation(mem.observation(0));
  for (size_t d = 0; d < z.size(); ++d) REQUIRE(stats.mean[d] == Catch::Approx(z[d]).margin(1e-12));

  LatentStats again = fit_latent_stats(m, mem);
  REQUIRE(stats.mean == again.mean);
  REQUIRE(stats.var == again.var);
}

TEST_CASE("observation statistics come from the dataset with a floored std") {
  TrajectoryDataset ds = small_dataset(11);
  PerTaskState st = make_task_state(ds);
  REQUIRE(st.obs_mean.size() == 32);
  // one-hot observations: every mean lies in [0, 1) and stds are floored positive
  for (double m : st.obs_mean) {
    REQUIRE(m >= 0.0);
    REQUIRE(m < 1.0);
  }
  for (double s : st.obs_std) REQUIRE(s >= 1e-6);
  REQUIRE(st.target_return == ds.spec.target_return);
  REQUIRE(st.native_action_dim == 4);
}

TEST_CASE("registry checkpoints round-trip bit-exactly") {
  CopyRegistry reg(small_config(), 3);
  reg.spawn_copy(21);
  reg.spawn_copy(22);
  DtModel& m0 = reg.model(0);
  DtModel& m1 = reg.model(1);
  allocate_all(m0, 0, 0.4);
  allocate_all(m1, 1, 0.6);
  reg.assign(0, 0);
  reg.assign(1, 1);
  TrajectoryDataset ds0 = small_dataset(31);
  TrajectoryDataset ds1 = small_dataset(32, 1.0);
  reg.record_task_state(0, make_task_state(ds0));
  reg.record_task_state(1, make_task_state(ds1));
  reg.record_memory(0, sample_task_memory(ds0, 16, 5));
  reg.record_memory(1, sample_task_memory(ds1, 16, 6));
  DtModel& a = reg.activate_for_inference(0);
  reg.record_latent_stats(0, fit_latent_stats(a, reg.memory(0)));
  DtModel& b = reg.activate_for_inference(1);
  reg.record_latent_stats(1, fit_latent_stats(b, reg.memory(1)));

  const fs::path dir = fs::temp_directory_path() / "tsn_test_registry";
  fs::remove_all(dir);
  reg.save(dir);
  CopyRegistry loaded = CopyRegistry::load(dir);

  REQUIRE(loaded.copy_count() == 2);
  REQUIRE(loaded.max_copies() == 3);
  REQUIRE(loaded.copy_of(0) == 0);
  REQUIRE(loaded.copy_of(1) == 1);
  REQUIRE(loaded.task_state(1).obs_mean == reg.task_state(1).obs_mean);
  REQUIRE(loaded.task_state(1).obs_std == reg.task_state(1).obs_std);
  REQUIRE(loaded.task_state(1).target_return == reg.task_state(1).target_return);
  REQUIRE(loaded.latent_stats(0).mean == reg.latent_stats(0).mean);
  REQUIRE(loaded.latent_stats(0).var == reg.latent_stats(0).var);
  REQUIRE(loaded.memory(1).observations == reg.memory(1).observations);

  Batch probe = probe_batch(m0.cfg, 9);
  DtModel& orig = reg.activate_for_inference(0);
  DtModel& back = loaded.activate_for_inference(0);
  REQUIRE(orig.forward(probe, false).predictions == back.forward(probe, false).predictions);
  fs::remove_all(dir);
}

TEST_CASE("activation requires a trained task") {
  CopyRegistry reg(small_config(), 0);
  reg.spawn_copy(1);
  REQUIRE_THROWS_AS(reg.activate_for_inference(0), ContractViolation);
}
