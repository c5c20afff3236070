#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "ocloc/trainer.hpp"

using namespace ocloc;

namespace {

Config tiny_config() {
  Config c;
  c.model.image_height = 16;
  c.model.image_width = 16;
  c.model.channels = 3;
  c.model.K = 2;
  c.model.T = 2;
  c.model.E_view = 2;
  c.model.E_obj = 4;
  c.model.E_bck = 3;
  c.model.D_ft = 8;
  c.model.D_vw = 4;
  c.model.D_at = 8;
  c.model.D_key = 8;
  c.model.D_val = 0;
  c.model.dec_tok_obj = 8;
  c.model.dec_tok_bck = 8;
  c.model.dec_fc_obj = 16;
  c.model.dec_fc_bck = 12;
  c.model.dec_heads_obj = 2;
  c.model.dec_heads_bck = 2;
  c.model.ord_hidden = 8;
  c.model.head_hidden = 8;
  c.model.upd_hidden = 8;

  c.data.height = 16;
  c.data.width = 16;
  c.data.min_objects = 1;
  c.data.max_objects = 2;
  c.data.views = 2;

  c.train.batch_size = 2;
  c.train.total_steps = 10;
  c.train.warmup_single_view_steps = 3;
  c.train.M_min = 1;
  c.train.M_max = 2;
  c.train.lr_init = 1e-3;
  c.train.temperature_anneal_steps = 300;
  c.train.checkpoint_interval = 1000;
  c.train.seed = 77;
  c.finalize();
  return c;
}

std::vector<Scene> tiny_dataset(const GeneratorSpec& spec, int64_t count, uint64_t seed) {
  std::vector<Scene> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    out.push_back(generate_scene(spec, scene_seed(seed, i)));
  }
  return out;
}

bool params_equal(const ParamStore<float>& a, const ParamStore<float>& b) {
  if (a.names != b.names) {
    return false;
  }
  for (size_t i = 0; i < a.values.size(); ++i) {
    if (a.values[i].shape != b.values[i].shape ||
        std::memcmp(a.values[i].ptr(), b.values[i].ptr(),
                    sizeof(float) * static_cast<size_t>(a.values[i].size())) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("training is deterministic in config and dataset") {
  const Config cfg = tiny_config();
  const std::vector<Scene> data = tiny_dataset(cfg.data, 4, 5);

  Trainer a(cfg, data);
  Trainer b(cfg, data);
  for (int i = 0; i < 5; ++i) {
    const TrainStats sa = a.step();
    const TrainStats sb = b.step();
    CHECK(sa.loss.total == sb.loss.total);
    CHECK(sa.loss.nll == sb.loss.nll);
    CHECK(sa.grad_norm == sb.grad_norm);
    CHECK(sa.M == sb.M);
  }
  CHECK(params_equal(a.params(), b.params()));

  // a different seed diverges
  Config cfg2 = cfg;
  cfg2.train.seed = 78;
  Trainer c(cfg2, data);
  bool any_diff = false;
  Trainer d(cfg, data);
  for (int i = 0; i < 5; ++i) {
    any_diff = any_diff || c.step().loss.total != d.step().loss.total;
  }
  CHECK(any_diff);
}

TEST_CASE("warmup steps run single-view, later steps draw the view count") {
  Config cfg = tiny_config();
  cfg.train.warmup_single_view_steps = 3;
  const std::vector<Scene> data = tiny_dataset(cfg.data, 4, 9);
  Trainer t(cfg, data);
  for (int i = 0; i < 12; ++i) {
    const TrainStats st = t.step();
    CHECK(st.step == i);
    if (i < 3) {
      CHECK(st.M == 1);
    } else {
      CHECK(st.M >= cfg.train.M_min);
      CHECK(st.M <= cfg.train.M_max);
    }
    CHECK(st.lr == cfg.train.lr_at(st.step));
    CHECK(st.temperature == cfg.train.temperature_at(st.step));
    CHECK(std::isfinite(st.loss.total));
  }
}

TEST_CASE("checkpoint resume replays the run exactly") {
  const Config cfg = tiny_config();
  const std::vector<Scene> data = tiny_dataset(cfg.data, 4, 13);

  // uninterrupted reference: 4 + 3 steps
  Trainer full(cfg, data);
  for (int i = 0; i < 4; ++i) {
    full.step();
  }
  const Checkpoint mid = full.checkpoint();
  CHECK(mid.step == 4);
  std::vector<TrainStats> tail;
  for (int i = 0; i < 3; ++i) {
    tail.push_back(full.step());
  }

  // file round-trip, then resume
  const std::string path = "trainer_test_ckpt.bin";
  save_checkpoint(mid, path);
  const Checkpoint loaded = load_checkpoint(path);
  std::remove(path.c_str());
  CHECK(loaded.step == 4);
  CHECK(loaded.rng_state == mid.rng_state);
  CHECK(params_equal(loaded.params, mid.params));

  Trainer resumed(loaded, data);
  CHECK(resumed.current_step() == 4);
  for (int i = 0; i < 3; ++i) {
    const TrainStats st = resumed.step();
    CHECK(st.loss.total == tail[static_cast<size_t>(i)].loss.total);
    CHECK(st.M == tail[static_cast<size_t>(i)].M);
    CHECK(st.grad_norm == tail[static_cast<size_t>(i)].grad_norm);
  }
  CHECK(params_equal(resumed.params(), full.params()));
}

TEST_CASE("a few hundred steps fit one scene") {
  Config cfg = tiny_config();
  cfg.train.warmup_single_view_steps = 100;
  cfg.train.temperature_anneal_steps = 300;
  const std::vector<Scene> data = tiny_dataset(cfg.data, 1, 21);

  Trainer t(cfg, data);
  std::vector<double> totals;
  for (int i = 0; i < 400; ++i) {
    totals.push_back(t.step().loss.total);
  }
  double head = 0.0, tailm = 0.0;
  for (int i = 0; i < 20; ++i) {
    head += totals[static_cast<size_t>(i)];
    tailm += totals[totals.size() - 20 + static_cast<size_t>(i)];
  }
  head /= 20.0;
  tailm /= 20.0;
  REQUIRE(head > 0.0);
  CHECK(tailm < 0.7 * head);
}

TEST_CASE("non-finite parameters surface as a numeric error") {
  const Config cfg = tiny_config();
  const std::vector<Scene> data = tiny_dataset(cfg.data, 2, 31);
  Trainer t(cfg, data);
  t.step();
  Checkpoint ck = t.checkpoint();
  ck.params.values[ck.params.at("enc.conv0.w")][0] = std::nanf("");
  Trainer poisoned(ck, data);
  CHECK_THROWS_AS(poisoned.step(), NumericError);
}

TEST_CASE("dataset validation rejects mismatched scenes") {
  const Config cfg = tiny_config();
  CHECK_THROWS_AS(Trainer(cfg, {}), std::invalid_argument);

  GeneratorSpec wrong = cfg.data;
  wrong.height = 24;
  wrong.width = 24;
  CHECK_THROWS_AS(Trainer(cfg, tiny_dataset(wrong, 2, 3)), std::invalid_argument);

  GeneratorSpec narrow = cfg.data;
  narrow.views = 1;  // fewer stored views than train.M_max
  CHECK_THROWS_AS(Trainer(cfg, tiny_dataset(narrow, 2, 3)), std::invalid_argument);
}

TEST_CASE("log records carry the full term breakdown") {
  const Config cfg = tiny_config();
  const std::vector<Scene> data = tiny_dataset(cfg.data, 2, 17);
  Trainer t(cfg, data);
  const TrainStats st = t.step();
  const nlohmann::json j = nlohmann::json::parse(Trainer::log_record(st));
  CHECK(j.at("step").get<int64_t>() == 0);
  CHECK(j.at("total").get<double>() == st.loss.total);
  CHECK(j.at("nll").get<double>() == st.loss.nll);
  CHECK(j.at("kl_view").get<double>() == st.loss.kl_view);
  CHECK(j.at("kl_bck").get<double>() == st.loss.kl_bck);
  CHECK(j.at("kl_obj").get<double>() == st.loss.kl_obj);
  CHECK(j.at("kl_rho").get<double>() == st.loss.kl_rho);
  CHECK(j.at("kl_prs").get<double>() == st.loss.kl_prs);
  CHECK(j.at("lr").get<double>() == st.lr);
  CHECK(j.at("temperature").get<double>() == st.temperature);
  CHECK(j.at("M").get<int64_t>() == st.M);
  CHECK(j.at("grad_norm").get<double>() == st.grad_norm);
}
