#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "cellcast/data.hpp"
#include "cellcast/diff.hpp"
#include "cellcast/graph.hpp"
#include "cellcast/params.hpp"

namespace cellcast::model {

constexpr double kLayerNormEps = 1e-12;

// Dual-branch spatiotemporal forecaster: each branch stacks `blocks`
// ST-blocks (gated attention over the traffic+text streams, graph and image
// spatial streams fused by element-wise products) and the two mean-pooled
// branch vectors feed a shared linear head.
struct ModelConfig {
  int hidden = 16;          // d
  int heads = 4;            // attention heads, d % heads == 0
  int blocks = 2;           // ST-blocks per branch
  double dropout = 0.05;
  int closeness_steps = 3;  // p_c
  int period_steps = 3;     // p_p
  int cells = 12;           // D
  int exog_dim = 33;        // D_txt
  int image_size = 16;
  int image_channels = 2;
  int cnn_channels = 4;
  bool scalar_head = false;  // head combines branches by scalars (needs hidden == cells)
  bool use_external = true;  // false drops the textual and image streams

  int head_dim() const { return hidden / heads; }
  void validate() const;
};

// Body parameters carry the "body/" prefix, the final linear layer the
// "head/" prefix; the two prefixes partition every slot.
bool is_head_slot(const std::string& key);

ParamMap param_shapes(const ModelConfig& cfg);
ParamMap init_params(const ModelConfig& cfg, std::uint64_t seed);

struct ParameterSet {
  ParamMap all;

  ParamMap body() const { return filter_prefix(all, "body/"); }
  ParamMap head() const { return filter_prefix(all, "head/"); }
};

// ---- templated graph builders (shared by training and inference) ----

namespace gb {

using ad::NodeId;

template <class T>
struct BlockIds {
  NodeId wq{}, wk{}, wv{}, wo{};
  std::vector<std::array<NodeId, 3>> head_proj;  // per head: wq, wk, wv
  NodeId ln1_g{}, ln1_b{}, ln2_g{}, ln2_b{};
  NodeId ffn_w1{}, ffn_b1{}, ffn_w2{}, ffn_b2{};
  NodeId gcn_w{};
  NodeId cnn_k1{}, cnn_b1{}, cnn_k2{}, cnn_b2{}, cnn_proj{}, cnn_pb{};
  NodeId cnn_rows{};  // image features broadcast over the branch window rows
};

template <class T>
struct BranchIds {
  NodeId embed_tra_w{}, embed_tra_b{};
  NodeId embed_txt_w{}, embed_txt_b{};
  std::vector<BlockIds<T>> blocks;
};

template <class T>
struct BoundModel {
  const ModelConfig* cfg = nullptr;
  NodeId adjacency{};  // normalized D x D constant
  NodeId head_w1{}, head_w2{}, head_b{};
  BranchIds<T> close, period;
};

template <class T>
NodeId embed_node(ad::Graph<T>& g, NodeId x, NodeId w, NodeId b) {
  return g.add_row(g.matmul(x, w), b);
}

// Z = sigmoid(a + b); out = Z (.) a + (1 - Z) (.) b.
template <class T>
NodeId fusion_gate_node(ad::Graph<T>& g, NodeId a, NodeId b) {
  const NodeId z = g.sigmoid(g.add(a, b));
  const NodeId one_minus_z = g.affine(z, -1.0, 1.0);
  return g.add(g.mul(z, a), g.mul(one_minus_z, b));
}

template <class T>
NodeId attention_node(ad::Graph<T>& g, NodeId h, const BlockIds<T>& blk, int head_dim) {
  const NodeId q = g.matmul(h, blk.wq);
  const NodeId k = g.matmul(h, blk.wk);
  const NodeId v = g.matmul(h, blk.wv);
  NodeId cat = 0;
  for (std::size_t i = 0; i < blk.head_proj.size(); ++i) {
    const NodeId qi = g.matmul(q, blk.head_proj[i][0]);
    const NodeId ki = g.matmul(k, blk.head_proj[i][1]);
    const NodeId vi = g.matmul(v, blk.head_proj[i][2]);
    const NodeId scores =
        g.scale(g.matmul(qi, g.transpose(ki)), 1.0 / std::sqrt(static_cast<double>(head_dim)));
    const NodeId weights = g.softmax_rows(scores);
    const NodeId hi = g.matmul(weights, vi);
    cat = i == 0 ? hi : g.concat_cols(cat, hi);
  }
  return g.matmul(cat, blk.wo);
}

template <class T>
NodeId ffn_core_node(ad::Graph<T>& g, NodeId x, const BlockIds<T>& blk) {
  const NodeId hidden = g.relu(g.add_row(g.matmul(x, blk.ffn_w1), blk.ffn_b1));
  return g.add_row(g.matmul(hidden, blk.ffn_w2), blk.ffn_b2);
}

template <class T>
NodeId gcn_node(ad::Graph<T>& g, NodeId x, NodeId adjacency, NodeId w) {
  return g.relu(g.matmul(g.matmul(x, adjacency), w));
}

// Two 3x3 convolutions with ReLU, global average pooling, projection to the
// hidden width. Returns a rank-1 node of length d.
template <class T>
NodeId cnn_features_node(ad::Graph<T>& g, NodeId image, const BlockIds<T>& blk, int hidden) {
  const NodeId c1 = g.relu(g.conv3x3(image, blk.cnn_k1, blk.cnn_b1));
  const NodeId c2 = g.relu(g.conv3x3(c1, blk.cnn_k2, blk.cnn_b2));
  const NodeId pooled = g.avg_pool_all(c2);
  const std::size_t cc = g.val(pooled).size();
  const NodeId projected =
      g.add_row(g.matmul(g.reshape(pooled, {1, cc}), blk.cnn_proj), blk.cnn_pb);
  return g.reshape(projected, {static_cast<std::size_t>(hidden)});
}

// One ST-block: gated temporal stream then element-wise spatial fusion.
template <class T>
NodeId st_block_node(ad::Graph<T>& g, NodeId h_in, NodeId h_txt, NodeId h_spatial,
                     const BlockIds<T>& blk, const ModelConfig& cfg, Rng* dropout_rng) {
  NodeId h = cfg.use_external ? fusion_gate_node(g, h_in, h_txt) : h_in;
  NodeId att = attention_node(g, h, blk, cfg.head_dim());
  if (dropout_rng) att = g.dropout(att, cfg.dropout, *dropout_rng);
  const NodeId r1 = g.layer_norm_rows(g.add(h, att), blk.ln1_g, blk.ln1_b, kLayerNormEps);
  NodeId f = ffn_core_node(g, r1, blk);
  if (dropout_rng) f = g.dropout(f, cfg.dropout, *dropout_rng);
  const NodeId temporal = g.layer_norm_rows(g.add(r1, f), blk.ln2_g, blk.ln2_b, kLayerNormEps);
  return g.mul(temporal, h_spatial);
}

template <class T>
NodeId branch_pooled_node(ad::Graph<T>& g, const BoundModel<T>& bm, const BranchIds<T>& br,
                          NodeId x_tra, NodeId x_txt, Rng* dropout_rng) {
  const ModelConfig& cfg = *bm.cfg;
  NodeId h = embed_node(g, x_tra, br.embed_tra_w, br.embed_tra_b);
  NodeId h_txt = 0;
  if (cfg.use_external) h_txt = embed_node(g, x_txt, br.embed_txt_w, br.embed_txt_b);
  for (const BlockIds<T>& blk : br.blocks) {
    const NodeId h_gcn = gcn_node(g, x_tra, bm.adjacency, blk.gcn_w);
    const NodeId h_spatial = cfg.use_external ? g.mul(h_gcn, blk.cnn_rows) : h_gcn;
    h = st_block_node(g, h, h_txt, h_spatial, blk, cfg, dropout_rng);
  }
  return g.mean_rows(h);
}

template <class T>
NodeId prediction_node(ad::Graph<T>& g, const BoundModel<T>& bm,
                       const data::MultimodalWindow& w, Rng* dropout_rng) {
  const ModelConfig& cfg = *bm.cfg;
  const NodeId xc = g.constant(w.closeness);
  const NodeId ec = g.constant(w.exog_closeness);
  const NodeId xp = g.constant(w.period);
  const NodeId ep = g.constant(w.exog_period);
  const NodeId pc = branch_pooled_node(g, bm, bm.close, xc, ec, dropout_rng);
  const NodeId pp = branch_pooled_node(g, bm, bm.period, xp, ep, dropout_rng);
  const std::size_t d = static_cast<std::size_t>(cfg.hidden);
  const NodeId pc_row = g.reshape(pc, {1, d});
  const NodeId pp_row = g.reshape(pp, {1, d});
  NodeId combined;
  if (cfg.scalar_head) {
    combined =
        g.add(g.mul_by_scalar_node(pc_row, bm.head_w1), g.mul_by_scalar_node(pp_row, bm.head_w2));
  } else {
    combined = g.add(g.matmul(pc_row, bm.head_w1), g.matmul(pp_row, bm.head_w2));
  }
  return g.add_row(combined, bm.head_b);
}

template <class T>
BlockIds<T> bind_block(ad::Graph<T>& g, const ModelConfig& cfg,
                       const num::BoundParams<T>& params, const std::string& prefix,
                       NodeId image, std::size_t branch_rows) {
  BlockIds<T> blk;
  auto at = [&](const std::string& key) {
    auto it = params.find(key);
    if (it == params.end()) throw ConfigError("missing parameter slot '" + key + "'");
    return it->second;
  };
  blk.wq = at(prefix + "att/wq");
  blk.wk = at(prefix + "att/wk");
  blk.wv = at(prefix + "att/wv");
  blk.wo = at(prefix + "att/wo");
  for (int i = 0; i < cfg.heads; ++i) {
    const std::string hp = prefix + "att/h" + std::to_string(i) + "/";
    blk.head_proj.push_back({at(hp + "wq"), at(hp + "wk"), at(hp + "wv")});
  }
  blk.ln1_g = at(prefix + "ln1/g");
  blk.ln1_b = at(prefix + "ln1/b");
  blk.ffn_w1 = at(prefix + "ffn/w1");
  blk.ffn_b1 = at(prefix + "ffn/b1");
  blk.ffn_w2 = at(prefix + "ffn/w2");
  blk.ffn_b2 = at(prefix + "ffn/b2");
  blk.ln2_g = at(prefix + "ln2/g");
  blk.ln2_b = at(prefix + "ln2/b");
  blk.gcn_w = at(prefix + "gcn/w");
  if (cfg.use_external) {
    blk.cnn_k1 = at(prefix + "cnn/k1");
    blk.cnn_b1 = at(prefix + "cnn/b1");
    blk.cnn_k2 = at(prefix + "cnn/k2");
    blk.cnn_b2 = at(prefix + "cnn/b2");
    blk.cnn_proj = at(prefix + "cnn/proj");
    blk.cnn_pb = at(prefix + "cnn/pb");
    const NodeId feat = cnn_features_node(g, image, blk, cfg.hidden);
    blk.cnn_rows = g.broadcast_rows(feat, branch_rows);
  }
  return blk;
}

template <class T>
BranchIds<T> bind_branch(ad::Graph<T>& g, const ModelConfig& cfg,
                         const num::BoundParams<T>& params, const std::string& branch,
                         NodeId image, std::size_t branch_rows) {
  BranchIds<T> br;
  auto at = [&](const std::string& key) {
    auto it = params.find(key);
    if (it == params.end()) throw ConfigError("missing parameter slot '" + key + "'");
    return it->second;
  };
  const std::string base = "body/" + branch + "/";
  br.embed_tra_w = at(base + "embed_tra/w");
  br.embed_tra_b = at(base + "embed_tra/b");
  if (cfg.use_external) {
    br.embed_txt_w = at(base + "embed_txt/w");
    br.embed_txt_b = at(base + "embed_txt/b");
  }
  for (int s = 0; s < cfg.blocks; ++s) {
    br.blocks.push_back(
        bind_block(g, cfg, params, base + "blk" + std::to_string(s) + "/", image, branch_rows));
  }
  return br;
}

template <class T>
BoundModel<T> bind_model(ad::Graph<T>& g, const ModelConfig& cfg,
                         const num::BoundParams<T>& params, const Tensor& adjacency,
                         const Tensor* image) {
  BoundModel<T> bm;
  bm.cfg = &cfg;
  bm.adjacency = g.constant(adjacency);
  NodeId image_node = 0;
  if (cfg.use_external) {
    if (image == nullptr) throw ConfigError("model with external streams needs an image");
    image_node = g.constant(*image);
  }
  bm.close = bind_branch(g, cfg, params, "close", image_node,
                         static_cast<std::size_t>(cfg.closeness_steps));
  bm.period = bind_branch(g, cfg, params, "period", image_node,
                          static_cast<std::size_t>(cfg.period_steps));
  auto at = [&](const std::string& key) {
    auto it = params.find(key);
    if (it == params.end()) throw ConfigError("missing parameter slot '" + key + "'");
    return it->second;
  };
  bm.head_w1 = at("head/w1");
  bm.head_w2 = at("head/w2");
  bm.head_b = at("head/b");
  return bm;
}

}  // namespace gb

// ---- plain-tensor wrappers for the individual building blocks ----

Tensor fusion_gate(const Tensor& h_tra, const Tensor& h_txt);
Tensor st_block_combine(const Tensor& h_temporal, const Tensor& h_gcn, const Tensor& h_cnn);
Tensor embed(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor ffn_core(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                const Tensor& b2);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);
Tensor gcn_layer(const Tensor& x, const Tensor& adjacency_normalized, const Tensor& w);

// Deterministic (eval-mode) forward pass for one window.
Tensor forward(const ModelConfig& cfg, const ParamMap& params, const data::MultimodalWindow& w,
               const Tensor& adjacency_normalized);

// Mean-squared-error loss of the forecaster over a window set. train_mode
// enables dropout, keyed by (dropout_seed, batch stamp).
class ModelLoss : public num::DiffFunctionBase<ModelLoss> {
 public:
  ModelLoss(ModelConfig cfg, std::shared_ptr<const std::vector<data::MultimodalWindow>> windows,
            Tensor adjacency_normalized, bool train_mode = false, std::uint64_t dropout_seed = 0);

  ParamMap slots() const override { return slots_; }
  std::size_t num_examples() const override { return windows_->size(); }

  const ModelConfig& config() const { return cfg_; }
  const std::vector<data::MultimodalWindow>& windows() const { return *windows_; }

  template <class T>
  ad::NodeId build_loss(ad::Graph<T>& g, const num::BoundParams<T>& params,
                        const num::Batch& batch) const {
    const Tensor* image = nullptr;
    if (cfg_.use_external) {
      if (windows_->empty() || !(*windows_)[0].image)
        throw ConfigError("model loss needs windows with an attached image");
      image = (*windows_)[0].image.get();
    }
    const gb::BoundModel<T> bm = gb::bind_model(g, cfg_, params, adjacency_, image);
    Rng rng = Rng(Rng::mix(dropout_seed_, batch.stamp));
    Rng* dropout = (train_ && cfg_.dropout > 0.0) ? &rng : nullptr;
    ad::NodeId acc = 0;
    bool first = true;
    for (std::size_t idx : batch.indices) {
      if (idx >= windows_->size())
        throw ConfigError("batch index " + std::to_string(idx) + " out of range");
      const auto& w = (*windows_)[idx];
      const ad::NodeId pred = gb::prediction_node(g, bm, w, dropout);
      const ad::NodeId target = g.constant(w.target.reshaped({1, w.target.size()}));
      const ad::NodeId diff = g.sub(pred, target);
      const ad::NodeId se = g.sum_all(g.mul(diff, diff));
      acc = first ? se : g.add(acc, se);
      first = false;
    }
    const double denom =
        static_cast<double>(batch.indices.size()) * static_cast<double>(cfg_.cells);
    return g.scale(acc, 1.0 / denom);
  }

 private:
  ModelConfig cfg_;
  std::shared_ptr<const std::vector<data::MultimodalWindow>> windows_;
  Tensor adjacency_;
  bool train_ = false;
  std::uint64_t dropout_seed_ = 0;
  ParamMap slots_;
};

}  // namespace cellcast::model
