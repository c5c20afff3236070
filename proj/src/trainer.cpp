#include "ocloc/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "ocloc/encoder.hpp"
#include "ocloc/kernels.hpp"
#include "ocloc/model.hpp"

namespace ocloc {

namespace {

// distinct roles carved out of the run seed
constexpr uint64_t kInitStream = 0;
constexpr uint64_t kStepStream = 1;

}  // namespace

Trainer::Trainer(const Config& config, std::vector<Scene> dataset)
    : cfg_(config), dataset_(std::move(dataset)) {
  cfg_.finalize();
  cfg_.validate();
  check_dataset();
  const uint64_t seed = static_cast<uint64_t>(cfg_.train.seed);
  params_ = make_model_params<float>(cfg_.model, Rng::stream(seed, kInitStream).next_u64());
  adam_.init(params_);
  master_ = Rng(Rng::stream(seed, kStepStream).next_u64());
}

Trainer::Trainer(const Checkpoint& ck, std::vector<Scene> dataset)
    : cfg_(ck.config), dataset_(std::move(dataset)), params_(ck.params), adam_(ck.adam),
      step_(ck.step) {
  cfg_.finalize();
  cfg_.validate();
  check_dataset();
  const ParamStore<float> expected = make_model_params<float>(cfg_.model, 0);
  if (expected.names != params_.names) {
    throw std::invalid_argument("checkpoint parameter inventory does not match its config");
  }
  for (size_t i = 0; i < expected.values.size(); ++i) {
    if (expected.values[i].shape != params_.values[i].shape) {
      throw std::invalid_argument("checkpoint parameter shape mismatch: " + params_.names[i]);
    }
  }
  master_.set_state(ck.rng_state);
}

void Trainer::check_dataset() const {
  if (dataset_.empty()) {
    throw std::invalid_argument("training dataset is empty");
  }
  for (const Scene& sc : dataset_) {
    if (sc.height != cfg_.model.image_height || sc.width != cfg_.model.image_width ||
        sc.channels != cfg_.model.channels) {
      throw std::invalid_argument("dataset geometry does not match the model config");
    }
    if (sc.M < cfg_.train.M_max) {
      throw std::invalid_argument("scene stores fewer views than train.M_max");
    }
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.step = step_;
  ck.rng_state = master_.state();
  ck.config = cfg_;
  ck.params = params_;
  ck.adam = adam_;
  return ck;
}

TrainStats Trainer::step() {
  const TrainConfig& tc = cfg_.train;
  const ModelConfig& mc = cfg_.model;
  const int64_t B = tc.batch_size;
  const int64_t N = mc.pixels();
  const int64_t C = mc.channels;

  Rng rng(master_.next_u64());
  const bool warmup = step_ < tc.warmup_single_view_steps;
  const int64_t M = warmup ? 1 : rng.uniform_int(tc.M_min, tc.M_max);

  TensorF images({B * M, C, mc.image_height, mc.image_width});
  TensorF target({B * M, N, C});
  std::vector<int64_t> view_order;
  for (int64_t b = 0; b < B; ++b) {
    const Scene& sc = dataset_[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(dataset_.size()) - 1))];
    view_order.resize(static_cast<size_t>(sc.M));
    std::iota(view_order.begin(), view_order.end(), int64_t(0));
    for (int64_t j = 0; j < M; ++j) {
      std::swap(view_order[static_cast<size_t>(j)],
                view_order[static_cast<size_t>(rng.uniform_int(j, sc.M - 1))]);
      const int64_t v = view_order[static_cast<size_t>(j)];
      const int64_t s = b * M + j;
      for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < C; ++c) {
          const float px = sc.images[(v * N + n) * C + c];
          target[(s * N + n) * C + c] = px;
          images[(s * C + c) * N + n] = px;
        }
      }
    }
  }

  Graph<float> g(true);
  Bound<float> bound{g, params_, {}};
  RngNoise<float> noise(rng);
  const double temperature = tc.temperature_at(step_);
  const InferOut q = infer(bound, mc, B, M, images, noise);
  const LatentSample<float> z = sample_latents(bound, q, noise, temperature, false);
  LossBreakdown loss = total_loss(bound, mc, B, M, target, q, z);

  const double terms[7] = {loss.nll,    loss.kl_view, loss.kl_bck, loss.kl_obj,
                           loss.kl_rho, loss.kl_prs,  loss.total};
  static const char* kTermNames[7] = {"nll",    "kl_view", "kl_bck", "kl_obj",
                                      "kl_rho", "kl_prs",  "total"};
  for (int i = 0; i < 7; ++i) {
    if (!std::isfinite(terms[i])) {
      std::ostringstream os;
      os << "non-finite loss at step " << step_ << ": " << kTermNames[i] << " = " << terms[i]
         << " (";
      for (int j = 0; j < 7; ++j) {
        os << kTermNames[j] << "=" << terms[j] << (j + 1 < 7 ? " " : ")");
      }
      throw NumericError(os.str());
    }
  }

  params_.zero_grads();
  g.backward(loss.total_node);

  // gradient of the batch mean, clipped by global norm
  const double inv_b = 1.0 / static_cast<double>(B);
  double sq = 0.0;
  for (const auto& gr : params_.grads) {
    const double d = static_cast<double>(kern::ops().dot(gr.ptr(), gr.ptr(), gr.size()));
    sq += d;
  }
  if (!std::isfinite(sq)) {
    throw NumericError("non-finite gradient at step " + std::to_string(step_) +
                       " (loss total=" + std::to_string(loss.total) + ")");
  }
  const double norm = inv_b * std::sqrt(sq);
  const double clip = norm > tc.grad_clip ? tc.grad_clip / norm : 1.0;
  const float scale = static_cast<float>(inv_b * clip);

  const double lr = tc.lr_at(step_);
  adam_.t += 1;
  const float bias1 = static_cast<float>(1.0 - std::pow(0.9, static_cast<double>(adam_.t)));
  const float bias2 = static_cast<float>(1.0 - std::pow(0.999, static_cast<double>(adam_.t)));
  for (size_t i = 0; i < params_.values.size(); ++i) {
    TensorF& gr = params_.grads[i];
    kern::ops().scale(scale, gr.ptr(), gr.size());
    kern::ops().adam(params_.values[i].ptr(), gr.ptr(), adam_.m[i].ptr(), adam_.v[i].ptr(),
                     gr.size(), static_cast<float>(lr), 0.9f, 0.999f, 1e-8f, bias1, bias2);
  }

  TrainStats st;
  st.loss = loss;
  st.loss.nll *= inv_b;
  st.loss.kl_view *= inv_b;
  st.loss.kl_bck *= inv_b;
  st.loss.kl_obj *= inv_b;
  st.loss.kl_rho *= inv_b;
  st.loss.kl_prs *= inv_b;
  st.loss.total *= inv_b;
  st.grad_norm = norm;
  st.lr = lr;
  st.temperature = temperature;
  st.M = M;
  st.step = step_;
  ++step_;
  return st;
}

std::string Trainer::log_record(const TrainStats& st) {
  nlohmann::ordered_json j;
  j["step"] = st.step;
  j["nll"] = st.loss.nll;
  j["kl_view"] = st.loss.kl_view;
  j["kl_bck"] = st.loss.kl_bck;
  j["kl_obj"] = st.loss.kl_obj;
  j["kl_rho"] = st.loss.kl_rho;
  j["kl_prs"] = st.loss.kl_prs;
  j["total"] = st.loss.total;
  j["lr"] = st.lr;
  j["temperature"] = st.temperature;
  j["M"] = st.M;
  j["grad_norm"] = st.grad_norm;
  return j.dump();
}

std::string Trainer::run(const std::string& out_dir, bool echo) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  // truncate, not append: re-running a command must be bitwise reproducible
  std::ofstream log(out_dir + "/train_log.jsonl", std::ios::trunc);
  if (!log) {
    throw std::runtime_error("cannot open train log in " + out_dir);
  }

  while (step_ < cfg_.train.total_steps) {
    const TrainStats st = step();
    const std::string line = log_record(st);
    log << line << "\n";
    if (echo) {
      std::cout << line << "\n";
    }
    const int64_t done = st.step + 1;
    if (done % 500 == 0) {
      log.flush();
      if (echo) {
        std::cout.flush();
      }
    }
    if (done % cfg_.train.checkpoint_interval == 0 && done < cfg_.train.total_steps) {
      save_checkpoint(checkpoint(), out_dir + "/ckpt_" + std::to_string(done) + ".bin");
    }
  }
  log.flush();
  const std::string final_path = out_dir + "/ckpt_final.bin";
  save_checkpoint(checkpoint(), final_path);
  return final_path;
}

}  // namespace ocloc
