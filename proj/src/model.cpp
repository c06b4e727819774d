#include "cellcast/model.hpp"

#include <cmath>

#include "cellcast/rng.hpp"

namespace cellcast::model {

void ModelConfig::validate() const {
  if (hidden < 1) throw ConfigError("model: hidden width must be >= 1");
  if (heads < 1 || hidden % heads != 0)
    throw ConfigError("model: hidden width must be divisible by the head count");
  if (blocks < 1) throw ConfigError("model: need at least one ST-block per branch");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must lie in [0,1)");
  if (closeness_steps < 1 || period_steps < 1)
    throw ConfigError("model: window steps must be >= 1");
  if (cells < 1) throw ConfigError("model: cell count must be >= 1");
  if (use_external && exog_dim < 1)
    throw ConfigError("model: external streams need exog_dim >= 1");
  if (use_external && (image_size < 3 || image_channels < 1 || cnn_channels < 1))
    throw ConfigError("model: invalid image stream dimensions");
  if (scalar_head && hidden != cells)
    throw ConfigError("model: the scalar head variant requires hidden == cells");
}

bool is_head_slot(const std::string& key) { return key.rfind("head/", 0) == 0; }

namespace {

void branch_shapes(const ModelConfig& cfg, const std::string& branch, ParamMap& out) {
  const auto d = static_cast<std::size_t>(cfg.hidden);
  const auto cells = static_cast<std::size_t>(cfg.cells);
  const auto da = static_cast<std::size_t>(cfg.head_dim());
  const auto cc = static_cast<std::size_t>(cfg.cnn_channels);
  const std::string base = "body/" + branch + "/";
  out.emplace(base + "embed_tra/w", Tensor::zeros({cells, d}));
  out.emplace(base + "embed_tra/b", Tensor::zeros({d}));
  if (cfg.use_external) {
    out.emplace(base + "embed_txt/w", Tensor::zeros({static_cast<std::size_t>(cfg.exog_dim), d}));
    out.emplace(base + "embed_txt/b", Tensor::zeros({d}));
  }
  for (int s = 0; s < cfg.blocks; ++s) {
    const std::string blk = base + "blk" + std::to_string(s) + "/";
    out.emplace(blk + "att/wq", Tensor::zeros({d, d}));
    out.emplace(blk + "att/wk", Tensor::zeros({d, d}));
    out.emplace(blk + "att/wv", Tensor::zeros({d, d}));
    out.emplace(blk + "att/wo", Tensor::zeros({d, d}));
    for (int i = 0; i < cfg.heads; ++i) {
      const std::string hp = blk + "att/h" + std::to_string(i) + "/";
      out.emplace(hp + "wq", Tensor::zeros({d, da}));
      out.emplace(hp + "wk", Tensor::zeros({d, da}));
      out.emplace(hp + "wv", Tensor::zeros({d, da}));
    }
    out.emplace(blk + "ln1/g", Tensor::zeros({d}));
    out.emplace(blk + "ln1/b", Tensor::zeros({d}));
    out.emplace(blk + "ffn/w1", Tensor::zeros({d, d}));
    out.emplace(blk + "ffn/b1", Tensor::zeros({d}));
    out.emplace(blk + "ffn/w2", Tensor::zeros({d, d}));
    out.emplace(blk + "ffn/b2", Tensor::zeros({d}));
    out.emplace(blk + "ln2/g", Tensor::zeros({d}));
    out.emplace(blk + "ln2/b", Tensor::zeros({d}));
    out.emplace(blk + "gcn/w", Tensor::zeros({cells, d}));
    if (cfg.use_external) {
      out.emplace(blk + "cnn/k1",
                  Tensor::zeros({3, 3, static_cast<std::size_t>(cfg.image_channels), cc}));
      out.emplace(blk + "cnn/b1", Tensor::zeros({cc}));
      out.emplace(blk + "cnn/k2", Tensor::zeros({3, 3, cc, cc}));
      out.emplace(blk + "cnn/b2", Tensor::zeros({cc}));
      out.emplace(blk + "cnn/proj", Tensor::zeros({cc, d}));
      out.emplace(blk + "cnn/pb", Tensor::zeros({d}));
    }
  }
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

ParamMap param_shapes(const ModelConfig& cfg) {
  cfg.validate();
  ParamMap out;
  branch_shapes(cfg, "close", out);
  branch_shapes(cfg, "period", out);
  const auto d = static_cast<std::size_t>(cfg.hidden);
  const auto cells = static_cast<std::size_t>(cfg.cells);
  if (cfg.scalar_head) {
    out.emplace("head/w1", Tensor::zeros({1}));
    out.emplace("head/w2", Tensor::zeros({1}));
  } else {
    out.emplace("head/w1", Tensor::zeros({d, cells}));
    out.emplace("head/w2", Tensor::zeros({d, cells}));
  }
  out.emplace("head/b", Tensor::zeros({cells}));
  return out;
}

ParamMap init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ParamMap params = param_shapes(cfg);
  Rng root(seed);
  for (auto& [key, tensor] : params) {
    // std::map ordering makes the draw sequence reproducible per slot name.
    Rng rng = root.fork(key);
    if (ends_with(key, "ln1/g") || ends_with(key, "ln2/g")) {
      for (std::size_t i = 0; i < tensor.size(); ++i) tensor[i] = 1.0;
      continue;
    }
    if (tensor.rank() <= 1 && !(cfg.scalar_head && (key == "head/w1" || key == "head/w2"))) {
      continue;  // biases start at zero
    }
    double fan_in = 1.0;
    if (tensor.rank() == 2) {
      fan_in = static_cast<double>(tensor.shape()[0]);
    } else if (tensor.rank() == 4) {
      fan_in = 9.0 * static_cast<double>(tensor.shape()[2]);
    }
    const double bound = 1.0 / std::sqrt(fan_in);
    for (std::size_t i = 0; i < tensor.size(); ++i) tensor[i] = rng.uniform(-bound, bound);
  }
  return params;
}

namespace {

// Runs one templated builder inside a throwaway constant graph.
template <class Fn>
Tensor eval_in_graph(Fn&& fn) {
  ad::Graph<double> g;
  return g.val(fn(g));
}

}  // namespace

Tensor fusion_gate(const Tensor& h_tra, const Tensor& h_txt) {
  return eval_in_graph([&](ad::Graph<double>& g) {
    return gb::fusion_gate_node(g, g.constant(h_tra), g.constant(h_txt));
  });
}

Tensor st_block_combine(const Tensor& h_temporal, const Tensor& h_gcn, const Tensor& h_cnn) {
  return eval_in_graph([&](ad::Graph<double>& g) {
    return g.mul(g.constant(h_temporal), g.mul(g.constant(h_gcn), g.constant(h_cnn)));
  });
}

Tensor embed(const Tensor& x, const Tensor& w, const Tensor& bias) {
  return eval_in_graph([&](ad::Graph<double>& g) {
    return gb::embed_node(g, g.constant(x), g.constant(w), g.constant(bias));
  });
}

Tensor ffn_core(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                const Tensor& b2) {
  return eval_in_graph([&](ad::Graph<double>& g) {
    gb::BlockIds<double> blk;
    blk.ffn_w1 = g.constant(w1);
    blk.ffn_b1 = g.constant(b1);
    blk.ffn_w2 = g.constant(w2);
    blk.ffn_b2 = g.constant(b2);
    return gb::ffn_core_node(g, g.constant(x), blk);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  return eval_in_graph([&](ad::Graph<double>& g) {
    return g.layer_norm_rows(g.constant(x), g.constant(gamma), g.constant(beta), eps);
  });
}

Tensor gcn_layer(const Tensor& x, const Tensor& adjacency_normalized, const Tensor& w) {
  return eval_in_graph([&](ad::Graph<double>& g) {
    return gb::gcn_node(g, g.constant(x), g.constant(adjacency_normalized), g.constant(w));
  });
}

Tensor forward(const ModelConfig& cfg, const ParamMap& params, const data::MultimodalWindow& w,
               const Tensor& adjacency_normalized) {
  cfg.validate();
  ad::Graph<double> g;
  num::BoundParams<double> bound;
  for (const auto& [k, v] : params) bound.emplace(k, g.constant(v));
  const Tensor* image = nullptr;
  if (cfg.use_external) {
    if (!w.image) throw ConfigError("forward: window carries no image");
    image = w.image.get();
  }
  const gb::BoundModel<double> bm = gb::bind_model(g, cfg, bound, adjacency_normalized, image);
  const ad::NodeId pred = gb::prediction_node(g, bm, w, nullptr);
  return g.val(pred).reshaped({static_cast<std::size_t>(cfg.cells)});
}

ModelLoss::ModelLoss(ModelConfig cfg,
                     std::shared_ptr<const std::vector<data::MultimodalWindow>> windows,
                     Tensor adjacency_normalized, bool train_mode, std::uint64_t dropout_seed)
    : cfg_(std::move(cfg)),
      windows_(std::move(windows)),
      adjacency_(std::move(adjacency_normalized)),
      train_(train_mode),
      dropout_seed_(dropout_seed) {
  cfg_.validate();
  if (!windows_ || windows_->empty()) throw ConfigError("model loss needs a nonempty window set");
  slots_ = param_shapes(cfg_);
}

}  // namespace cellcast::model
