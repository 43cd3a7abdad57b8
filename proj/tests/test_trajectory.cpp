#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "tsn/rng.hpp"
#include "tsn/trajectory.hpp"

namespace fs = std::filesystem;
using namespace tsn;

namespace {

TaskSpec tiny_discrete_spec() {
  TaskSpec spec;
  spec.task_id = "toy";
  spec.control_kind = ControlKind::kDiscrete;
  spec.native_action_dim = 3;
  spec.native_obs_dim = 4;
  spec.shared_obs_dim = 4;
  spec.shared_action_dim = 3;
  spec.target_return = 3.0;
  spec.max_horizon = 16;
  spec.family = "gridkey";
  spec.extra["grid_n"] = "2";
  spec.extra["layout_seed"] = "1";
  spec.extra["theta"] = "0";
  return spec;
}

Trajectory make_trajectory(const std::vector<float>& rewards, int obs_dim, Rng& rng) {
  Trajectory tr;
  const int64_t len = static_cast<int64_t>(rewards.size());
  for (int64_t k = 0; k < len; ++k) {
    for (int d = 0; d < obs_dim; ++d)
      tr.observations.push_back(static_cast<float>(rng.uniform()));
    tr.actions.push_back(static_cast<float>(rng.next_below(3)));
    tr.rewards.push_back(rewards[static_cast<size_t>(k)]);
    tr.timesteps.push_back(k);
  }
  return tr;
}

TrajectoryDataset make_dataset(const std::vector<std::vector<float>>& reward_rows,
                               uint64_t seed = 7) {
  TrajectoryDataset ds;
  ds.spec = tiny_discrete_spec();
  Rng rng(seed);
  for (const auto& rewards : reward_rows)
    ds.trajectories.push_back(make_trajectory(rewards, ds.spec.shared_obs_dim, rng));
  ds.compute_returns_to_go();
  ds.validate();
  return ds;
}

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("tsn_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("returns-to-go are undiscounted suffix sums") {
  auto ds = make_dataset({{1.0f, 0.0f, 2.0f}});
  REQUIRE(ds.returns_to_go[0] == std::vector<double>{3.0, 2.0, 2.0});

  auto zeros = make_dataset({{0.0f, 0.0f}});
  REQUIRE(zeros.returns_to_go[0] == std::vector<double>{0.0, 0.0});
}

TEST_CASE("suffix-sum property holds on random integer rewards") {
  Rng rng(17);
  std::vector<std::vector<float>> rows;
  for (int i = 0; i < 20; ++i) {
    std::vector<float> rewards(1 + rng.next_below(12));
    for (float& r : rewards) r = static_cast<float>(static_cast<int>(rng.next_below(7)) - 3);
    rows.push_back(rewards);
  }
  auto ds = make_dataset(rows);
  for (size_t i = 0; i < ds.trajectories.size(); ++i) {
    const auto& rtg = ds.returns_to_go[i];
    const auto& rewards = ds.trajectories[i].rewards;
    for (size_t k = 0; k + 1 < rtg.size(); ++k)
      REQUIRE(rtg[k] - rtg[k + 1] == static_cast<double>(rewards[k]));
    REQUIRE(rtg.back() == static_cast<double>(rewards.back()));
  }
}

TEST_CASE("trajectory invariant violations are rejected") {
  auto ds = make_dataset({{1.0f}, {0.0f, 1.0f}});
  ds.trajectories[1].actions.pop_back();  // actions now shorter than observations
  REQUIRE_THROWS_AS(ds.validate(), InvalidInput);

  auto ds2 = make_dataset({{1.0f, 1.0f}});
  ds2.trajectories[0].timesteps[1] = 3;  // not strictly increasing from 0
  REQUIRE_THROWS_AS(ds2.validate(), InvalidInput);
}

TEST_CASE("padding preserves the native prefix and rejects oversize input") {
  TaskSpec spec = tiny_discrete_spec();
  spec.control_kind = ControlKind::kContinuous;
  spec.native_obs_dim = 3;
  spec.native_action_dim = 3;
  spec.shared_action_dim = 4;

  std::vector<float> obs{0.5f, -1.0f, 2.0f};
  std::vector<float> act{1.0f, 2.0f, 3.0f};
  auto [pobs, pact] = pad_to_shared_interface(obs, act, spec, 4, 4);
  REQUIRE(pobs == std::vector<float>{0.5f, -1.0f, 2.0f, 0.0f});
  REQUIRE(pact == std::vector<float>{1.0f, 2.0f, 3.0f, 0.0f});

  std::vector<float> act4{1, 2, 3, 4};
  REQUIRE(pad_to_shared(act4, 4, "action") == act4);

  std::vector<float> act5{1, 2, 3, 4, 5};
  REQUIRE_THROWS_AS(pad_to_shared(act5, 4, "action"), InvalidInput);
}

TEST_CASE("pad then truncate is the identity on the native prefix") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int native = 1 + static_cast<int>(rng.next_below(6));
    const int shared = native + static_cast<int>(rng.next_below(4));
    std::vector<float> raw(static_cast<size_t>(native));
    for (float& v : raw) v = static_cast<float>(rng.normal());
    auto padded = pad_to_shared(raw, shared, "probe");
    REQUIRE(std::vector<float>(padded.begin(), padded.begin() + native) == raw);
    for (int d = native; d < shared; ++d) REQUIRE(padded[static_cast<size_t>(d)] == 0.0f);
  }
}

TEST_CASE("short windows are right-padded and flagged in the valid mask") {
  auto ds = make_dataset({{1.0f, 0.0f, 1.0f}});
  BatchStream stream(ds, /*L=*/5, /*B=*/4, 99);
  Batch b = stream.next();
  for (int row = 0; row < b.batch_size; ++row) {
    // the single 3-step trajectory can yield windows of length 3, 2, or 1
    int valid = 0;
    bool in_suffix = false;
    for (int k = 0; k < b.length; ++k) {
      const uint8_t v = b.valid[static_cast<size_t>(row * b.length + k)];
      if (v) {
        REQUIRE_FALSE(in_suffix);  // padding must be a suffix
        ++valid;
      } else {
        in_suffix = true;
      }
    }
    REQUIRE(valid >= 1);
    REQUIRE(valid <= 3);
    // padded positions carry zeros
    for (int k = valid; k < b.length; ++k) {
      const size_t pos = static_cast<size_t>(row * b.length + k);
      REQUIRE(b.returns_to_go[pos] == 0.0);
      for (int d = 0; d < b.obs_dim; ++d)
        REQUIRE(b.observations[pos * b.obs_dim + d] == 0.0);
    }
  }
}

TEST_CASE("long trajectories give fully valid windows") {
  auto ds = make_dataset({{1, 1, 1, 1, 1, 1, 1, 1}});
  BatchStream stream(ds, /*L=*/5, /*B=*/8, 5);
  Batch b = stream.next();
  int full_rows = 0;
  for (int row = 0; row < b.batch_size; ++row) {
    int valid = 0;
    for (int k = 0; k < b.length; ++k) valid += b.valid[static_cast<size_t>(row * b.length + k)];
    if (valid == b.length) ++full_rows;
  }
  REQUIRE(full_rows >= 1);  // starts <= 3 give full windows
}

TEST_CASE("batch streams are deterministic under a fixed seed") {
  auto ds = make_dataset({{1, 0, 1}, {0, 2}, {1, 1, 1, 1}});
  BatchStream a(ds, 4, 8, 1234), b(ds, 4, 8, 1234);
  for (int i = 0; i < 5; ++i) {
    Batch x = a.next(), y = b.next();
    REQUIRE(x.observations == y.observations);
    REQUIRE(x.actions_discrete == y.actions_discrete);
    REQUIRE(x.returns_to_go == y.returns_to_go);
    REQUIRE(x.timesteps == y.timesteps);
    REQUIRE(x.valid == y.valid);
  }
}

TEST_CASE("task memory sampling") {
  auto ds = make_dataset({{1, 0, 1}, {0, 2}});
  TaskMemory mem = sample_task_memory(ds, 256, 42);
  REQUIRE(mem.count() == 256);

  auto tiny = make_dataset({{1.0f}, {2.0f}});
  TaskMemory with_replacement = sample_task_memory(tiny, 4, 42);
  REQUIRE(with_replacement.count() == 4);

  TaskMemory again = sample_task_memory(ds, 256, 42);
  REQUIRE(mem.observations == again.observations);

  REQUIRE_THROWS_AS(sample_task_memory(ds, 0, 1), ContractViolation);
}

TEST_CASE("dataset container round-trips bit-exactly") {
  Rng rng(55);
  std::vector<std::vector<float>> rows;
  for (int i = 0; i < 12; ++i) {
    std::vector<float> rewards(1 + rng.next_below(9));
    for (float& r : rewards) r = static_cast<float>(rng.normal());
    rows.push_back(rewards);
  }
  auto ds = make_dataset(rows);
  const fs::path dir = temp_dir("roundtrip");
  save_dataset(ds, dir);
  TrajectoryDataset loaded = load_dataset(dir);

  REQUIRE(loaded.trajectories.size() == ds.trajectories.size());
  for (size_t i = 0; i < ds.trajectories.size(); ++i) {
    REQUIRE(loaded.trajectories[i].observations == ds.trajectories[i].observations);
    REQUIRE(loaded.trajectories[i].actions == ds.trajectories[i].actions);
    REQUIRE(loaded.trajectories[i].rewards == ds.trajectories[i].rewards);
    REQUIRE(loaded.trajectories[i].timesteps == ds.trajectories[i].timesteps);
  }
  REQUIRE(loaded.spec.task_id == ds.spec.task_id);
  REQUIRE(loaded.spec.target_return == ds.spec.target_return);

  // load(save(load(save(D)))) stays identical
  const fs::path dir2 = temp_dir("roundtrip2");
  save_dataset(loaded, dir2);
  TrajectoryDataset loaded2 = load_dataset(dir2);
  for (size_t i = 0; i < ds.trajectories.size(); ++i)
    REQUIRE(loaded2.trajectories[i].rewards == loaded.trajectories[i].rewards);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("malformed containers are rejected") {
  const fs::path dir = temp_dir("malformed");
  REQUIRE_THROWS_AS(load_dataset(dir), InvalidInput);

  auto ds = make_dataset({{1.0f, 2.0f}});
  save_dataset(ds, dir);
  // corrupt the offsets so field lengths disagree
  io::write_i64(dir / "offsets.bin", {0, 5}, {2});
  REQUIRE_THROWS_AS(load_dataset(dir), InvalidInput);
  fs::remove_all(dir);
}
