#include "aldmn/gradcheck.hpp"

#include <chrono>
#include <cmath>

#include "aldmn/model.hpp"

namespace aldmn {

GradcheckReport run_gradcheck(double fd_step) {
  ModelConfig cfg;
  cfg.vocab_size = 20;
  cfg.n_classes = 3;
  cfg.d = 8;
  cfg.d_a = 8;
  cfg.pyramid_layers = 2;
  cfg.t_mem = 2;
  cfg.dropout = 0.0;  // dropout resamples its mask, so it cannot be differenced
  cfg.init_range = 0.3;

  Rng rng(99);
  Tensor emb =
      Tensor::uniform({cfg.vocab_size, cfg.d}, -cfg.init_range, cfg.init_range, rng, true);
  for (int k = 0; k < cfg.d; ++k) emb.values()[static_cast<size_t>(k)] = 0.0;
  ModelParams model = ModelParams::init(cfg, emb, rng);

  Batch batch;
  batch.size = 4;
  batch.max_len = 6;
  batch.max_hist = 2;
  batch.current = {2,  3,  4,  5,  6,  7,
                   8,  9,  10, 0,  0,  0,
                   11, 12, 13, 14, 0,  0,
                   15, 0,  0,  0,  0,  0};
  batch.lengths = {6, 3, 4, 1};
  batch.history.assign(4 * 2 * 6, 0);
  batch.history_lengths = {4, 2, 0, 0, 3, 0, 5, 2};
  batch.history_counts = {2, 0, 1, 2};
  batch.labels = {0, 2, 1, 1};
  {
    int fills[][6] = {{16, 17, 18, 19, 0, 0}, {2, 9, 0, 0, 0, 0},  {0, 0, 0, 0, 0, 0},
                      {0, 0, 0, 0, 0, 0},     {5, 11, 16, 0, 0, 0}, {0, 0, 0, 0, 0, 0},
                      {3, 6, 12, 18, 2, 0},   {19, 4, 0, 0, 0, 0}};
    for (int s = 0; s < 8; ++s)
      for (int t = 0; t < 6; ++t) batch.history[static_cast<size_t>(s) * 6 + t] = fills[s][t];
  }

  // Tracked zero offsets on every embedded token position; their gradients
  // equal the embedded-input gradients.
  InputPerturbation probes;
  probes.current.resize(static_cast<size_t>(batch.max_len));
  probes.history.resize(static_cast<size_t>(batch.max_hist));
  std::vector<std::pair<std::string, Tensor>> leaves = model.named_tensors();
  for (int t = 0; t < batch.max_len; ++t) {
    probes.current[static_cast<size_t>(t)] = Tensor::zeros({batch.size, cfg.d}, true);
    leaves.emplace_back("input.current[" + std::to_string(t) + "]",
                        probes.current[static_cast<size_t>(t)]);
  }
  for (int j = 0; j < batch.max_hist; ++j) {
    probes.history[static_cast<size_t>(j)].resize(static_cast<size_t>(batch.max_len));
    for (int t = 0; t < batch.max_len; ++t) {
      Tensor p = Tensor::zeros({batch.size, cfg.d}, true);
      probes.history[static_cast<size_t>(j)][static_cast<size_t>(t)] = p;
      leaves.emplace_back(
          "input.history[" + std::to_string(j) + "][" + std::to_string(t) + "]", p);
    }
  }

  ForwardOptions opts;
  opts.perturbation = &probes;
  auto forward = [&]() { return model_forward(model, batch, opts).loss; };

  const auto t0 = std::chrono::steady_clock::now();
  for (auto& [name, t] : leaves) t.zero_grad();
  backward(forward());

  GradcheckReport report;
  {
    NoGradGuard ng;
    for (auto& [name, t] : leaves) {
      for (size_t i = 0; i < t.values().size(); ++i) {
        const double orig = t.values()[i];
        t.values()[i] = orig + fd_step;
        const double up = forward().item();
        t.values()[i] = orig - fd_step;
        const double down = forward().item();
        t.values()[i] = orig;
        const double gfd = (up - down) / (2.0 * fd_step);
        const double rel =
            std::abs(t.grad()[i] - gfd) / std::max(1.0, std::abs(gfd));
        ++report.coords_checked;
        if (rel > report.max_rel_err) {
          report.max_rel_err = rel;
          report.worst = name + "[" + std::to_string(i) + "]";
        }
      }
    }
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace aldmn
