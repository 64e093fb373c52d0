#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fedproxy/errors.hpp"
#include "fedproxy/flat_params.hpp"
#include "fedproxy/mat.hpp"
#include "fedproxy/rng.hpp"

namespace fedproxy {

enum class TaskKind { regression, classification };

inline const char* task_kind_name(TaskKind k) {
  return k == TaskKind::regression ? "regression" : "classification";
}

struct Batch {
  Mat inputs;   // n x input_dim
  Mat targets;  // n x out_dim (real targets, or {0,1} labels in column 0)
  std::size_t size() const { return inputs.rows; }
};

// One residual block: g(x) = W2 * tanh(W1 * x + b1) + b2, all width x width.
struct BlockParams {
  Mat w1, w2;               // width x width
  std::vector<double> b1, b2;  // width

  explicit BlockParams(std::size_t width = 0)
      : w1(width, width), w2(width, width), b1(width, 0.0), b2(width, 0.0) {}
};

// Residual-stream network standing in for the large backbone:
//   X_0 = embed(inputs), X_{i+1} = X_i + g_i(X_i), outputs = head(X_B).
// The embedding is a frozen random map and is excluded from the federated
// parameter layout; blocks and head are the trainable surface.
class ResidualStack {
 public:
  ResidualStack() = default;

  ResidualStack(std::size_t input_dim, std::size_t width, std::size_t out_dim,
                std::vector<BlockParams> blocks, Mat embed, Mat head_w,
                std::vector<double> head_b)
      : input_dim_(input_dim),
        width_(width),
        out_dim_(out_dim),
        blocks_(std::move(blocks)),
        embed_(std::move(embed)),
        head_w_(std::move(head_w)),
        head_b_(std::move(head_b)) {
    layout_ = build_layout(blocks_.size(), width_, out_dim_);
  }

  // Random initialization. The embedding rows are normalized so hidden
  // activations start at unit scale regardless of input_dim.
  static ResidualStack init_random(std::size_t input_dim, std::size_t width,
                                   std::size_t out_dim, std::size_t n_blocks,
                                   std::uint64_t seed, double block_scale = 0.3) {
    Rng rng(derive_seed(seed, "model-init"));
    Mat embed(width, input_dim);
    for (std::size_t r = 0; r < width; ++r) {
      double nrm = 0.0;
      for (std::size_t c = 0; c < input_dim; ++c) {
        embed.at(r, c) = rng.normal();
        nrm += embed.at(r, c) * embed.at(r, c);
      }
      nrm = std::sqrt(nrm);
      if (nrm > 0.0)
        for (std::size_t c = 0; c < input_dim; ++c) embed.at(r, c) /= nrm;
    }
    std::vector<BlockParams> blocks;
    const double ws = block_scale / std::sqrt(static_cast<double>(width));
    for (std::size_t i = 0; i < n_blocks; ++i) {
      BlockParams b(width);
      for (auto& v : b.w1.a) v = ws * rng.normal();
      for (auto& v : b.w2.a) v = ws * rng.normal();
      for (auto& v : b.b1) v = 0.1 * ws * rng.normal();
      for (auto& v : b.b2) v = 0.1 * ws * rng.normal();
      blocks.push_back(std::move(b));
    }
    Mat head_w(out_dim, width);
    const double hs = 1.0 / std::sqrt(static_cast<double>(width));
    for (auto& v : head_w.a) v = hs * rng.normal();
    std::vector<double> head_b(out_dim, 0.0);
    return ResidualStack(input_dim, width, out_dim, std::move(blocks), std::move(embed),
                         std::move(head_w), std::move(head_b));
  }

  static LayoutPtr build_layout(std::size_t n_blocks, std::size_t width,
                                std::size_t out_dim) {
    std::vector<std::pair<std::string, std::size_t>> parts;
    for (std::size_t i = 0; i < n_blocks; ++i) {
      const std::string p = "block" + std::to_string(i);
      parts.emplace_back(p + ".W1", width * width);
      parts.emplace_back(p + ".b1", width);
      parts.emplace_back(p + ".W2", width * width);
      parts.emplace_back(p + ".b2", width);
    }
    parts.emplace_back("head.W", out_dim * width);
    parts.emplace_back("head.b", out_dim);
    return ParamLayout::make(parts);
  }

  std::size_t input_dim() const { return input_dim_; }
  std::size_t width() const { return width_; }
  std::size_t out_dim() const { return out_dim_; }
  std::size_t n_blocks() const { return blocks_.size(); }
  const std::vector<BlockParams>& blocks() const { return blocks_; }
  std::vector<BlockParams>& blocks() { return blocks_; }
  const Mat& embed() const { return embed_; }
  const Mat& head_w() const { return head_w_; }
  Mat& head_w() { return head_w_; }
  const std::vector<double>& head_b() const { return head_b_; }
  std::vector<double>& head_b() { return head_b_; }
  const LayoutPtr& layout() const { return layout_; }

  // Trainable parameters (blocks + head) in layout order.
  FlatParams flatten() const {
    std::vector<double> v;
    v.reserve(layout_->total_dim());
    for (const auto& b : blocks_) {
      v.insert(v.end(), b.w1.a.begin(), b.w1.a.end());
      v.insert(v.end(), b.b1.begin(), b.b1.end());
      v.insert(v.end(), b.w2.a.begin(), b.w2.a.end());
      v.insert(v.end(), b.b2.begin(), b.b2.end());
    }
    v.insert(v.end(), head_w_.a.begin(), head_w_.a.end());
    v.insert(v.end(), head_b_.begin(), head_b_.end());
    return FlatParams(layout_, std::move(v));
  }

  void load(const FlatParams& p) {
    if (!same_layout(p.layout(), layout_))
      throw DimError("ResidualStack::load: layout mismatch");
    const double* src = p.values().data();
    for (auto& b : blocks_) {
      std::copy(src, src + b.w1.a.size(), b.w1.a.begin());
      src += b.w1.a.size();
      std::copy(src, src + b.b1.size(), b.b1.begin());
      src += b.b1.size();
      std::copy(src, src + b.w2.a.size(), b.w2.a.begin());
      src += b.w2.a.size();
      std::copy(src, src + b.b2.size(), b.b2.begin());
      src += b.b2.size();
    }
    std::copy(src, src + head_w_.a.size(), head_w_.a.begin());
    src += head_w_.a.size();
    std::copy(src, src + head_b_.size(), head_b_.begin());
  }

 private:
  std::size_t input_dim_ = 0;
  std::size_t width_ = 0;
  std::size_t out_dim_ = 0;
  std::vector<BlockParams> blocks_;
  Mat embed_;   // width x input_dim, frozen
  Mat head_w_;  // out_dim x width
  std::vector<double> head_b_;
  LayoutPtr layout_;
};

struct ForwardTrace {
  Mat outputs;             // n x out_dim
  std::vector<Mat> trace;  // B+1 hidden-state matrices, n x width
};

namespace detail_model {

inline void check_batch(const ResidualStack& m, const Batch& batch) {
  if (batch.inputs.cols != m.input_dim())
    throw DimError("batch input_dim " + std::to_string(batch.inputs.cols) +
                   " does not match model input_dim " + std::to_string(m.input_dim()));
  if (batch.targets.rows != batch.inputs.rows)
    throw DimError("batch targets/inputs row mismatch");
  if (batch.targets.cols != m.out_dim())
    throw DimError("batch out_dim does not match model");
  if (batch.size() == 0) throw DimError("empty batch");
}

}  // namespace detail_model

inline ForwardTrace forward_with_trace(const ResidualStack& m, const Batch& batch) {
  detail_model::check_batch(m, batch);
  const std::size_t n = batch.size();
  const std::size_t w = m.width();

  ForwardTrace ft;
  ft.trace.reserve(m.n_blocks() + 1);

  Mat x0(n, w);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t r = 0; r < w; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < m.input_dim(); ++c)
        acc += m.embed().at(r, c) * batch.inputs.at(s, c);
      x0.at(s, r) = acc;
    }
  ft.trace.push_back(std::move(x0));

  for (const auto& blk : m.blocks()) {
    const Mat& x = ft.trace.back();
    Mat nx(n, w);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t r = 0; r < w; ++r) {
        double u = blk.b1[r];
        for (std::size_t c = 0; c < w; ++c) u += blk.w1.at(r, c) * x.at(s, c);
        nx.at(s, r) = std::tanh(u);  // stash t in nx temporarily
      }
      // second layer reads the stashed tanh row, so finish it per sample
      std::vector<double> g(w);
      for (std::size_t r = 0; r < w; ++r) {
        double acc = blk.b2[r];
        for (std::size_t c = 0; c < w; ++c) acc += blk.w2.at(r, c) * nx.at(s, c);
        g[r] = acc;
      }
      for (std::size_t r = 0; r < w; ++r) nx.at(s, r) = x.at(s, r) + g[r];
    }
    ft.trace.push_back(std::move(nx));
  }

  const Mat& xb = ft.trace.back();
  ft.outputs = Mat(n, m.out_dim());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < m.out_dim(); ++o) {
      double acc = m.head_b()[o];
      for (std::size_t c = 0; c < w; ++c) acc += m.head_w().at(o, c) * xb.at(s, c);
      ft.outputs.at(s, o) = acc;
    }
  return ft;
}

inline double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// Mean squared error (1/n)*sum ||out-y||^2 for regression; mean logistic
// loss for classification (out_dim 1, targets in {0,1}).
inline double loss_from_outputs(const Mat& outputs, const Mat& targets, TaskKind kind) {
  const std::size_t n = outputs.rows;
  double acc = 0.0;
  if (kind == TaskKind::regression) {
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t o = 0; o < outputs.cols; ++o) {
        const double d = outputs.at(s, o) - targets.at(s, o);
        acc += d * d;
      }
  } else {
    if (outputs.cols != 1)
      throw DimError("classification loss requires out_dim == 1");
    for (std::size_t s = 0; s < n; ++s) {
      const double z = outputs.at(s, 0);
      acc += softplus(z) - targets.at(s, 0) * z;
    }
  }
  return acc / static_cast<double>(n);
}

inline double task_loss(const ResidualStack& m, const Batch& batch, TaskKind kind) {
  return loss_from_outputs(forward_with_trace(m, batch).outputs, batch.targets, kind);
}

// Fraction of correct 0/1 predictions at logit threshold 0.
inline double accuracy01(const Mat& outputs, const Mat& targets) {
  std::size_t hits = 0;
  for (std::size_t s = 0; s < outputs.rows; ++s) {
    const int pred = outputs.at(s, 0) > 0.0 ? 1 : 0;
    if (pred == static_cast<int>(targets.at(s, 0) > 0.5)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(outputs.rows);
}

// Analytic gradient of task_loss via reverse-mode through the residual
// blocks. Returned in the model's parameter layout.
inline FlatParams grad(const ResidualStack& m, const Batch& batch, TaskKind kind) {
  ForwardTrace ft = forward_with_trace(m, batch);
  const std::size_t n = batch.size();
  const std::size_t w = m.width();
  const std::size_t nb = m.n_blocks();
  const double inv_n = 1.0 / static_cast<double>(n);

  // d loss / d outputs
  Mat dout(n, m.out_dim());
  if (kind == TaskKind::regression) {
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t o = 0; o < m.out_dim(); ++o)
        dout.at(s, o) = 2.0 * inv_n * (ft.outputs.at(s, o) - batch.targets.at(s, o));
  } else {
    if (m.out_dim() != 1) throw DimError("classification grad requires out_dim == 1");
    for (std::size_t s = 0; s < n; ++s)
      dout.at(s, 0) = inv_n * (sigmoid(ft.outputs.at(s, 0)) - batch.targets.at(s, 0));
  }

  FlatParams g = FlatParams::zeros(m.layout());
  double* gp = g.values().data();
  const std::size_t block_sz = 2 * w * w + 2 * w;
  double* ghead_w = gp + nb * block_sz;
  double* ghead_b = ghead_w + m.out_dim() * w;

  const Mat& xb = ft.trace[nb];
  // head grads and dX_B
  Mat dx(n, w, 0.0);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < m.out_dim(); ++o) {
      const double d = dout.at(s, o);
      ghead_b[o] += d;
      for (std::size_t c = 0; c < w; ++c) {
        ghead_w[o * w + c] += d * xb.at(s, c);
        dx.at(s, c) += d * m.head_w().at(o, c);
      }
    }

  // back through blocks
  for (std::size_t bi = nb; bi-- > 0;) {
    const BlockParams& blk = m.blocks()[bi];
    const Mat& x = ft.trace[bi];
    double* gw1 = gp + bi * block_sz;
    double* gb1 = gw1 + w * w;
    double* gw2 = gb1 + w;
    double* gb2 = gw2 + w * w;

    Mat dx_prev(n, w, 0.0);
    std::vector<double> t(w), du(w);
    for (std::size_t s = 0; s < n; ++s) {
      // recompute t = tanh(W1 x + b1) for this sample
      for (std::size_t r = 0; r < w; ++r) {
        double u = blk.b1[r];
        for (std::size_t c = 0; c < w; ++c) u += blk.w1.at(r, c) * x.at(s, c);
        t[r] = std::tanh(u);
      }
      // dG = dX_{i+1}; accumulate W2/b2 grads and dT
      for (std::size_t r = 0; r < w; ++r) {
        const double d = dx.at(s, r);
        gb2[r] += d;
        for (std::size_t c = 0; c < w; ++c) gw2[r * w + c] += d * t[c];
      }
      for (std::size_t b = 0; b < w; ++b) {
        double dt = 0.0;
        for (std::size_t a = 0; a < w; ++a) dt += dx.at(s, a) * blk.w2.at(a, b);
        du[b] = dt * (1.0 - t[b] * t[b]);
      }
      for (std::size_t r = 0; r < w; ++r) {
        const double d = du[r];
        gb1[r] += d;
        for (std::size_t c = 0; c < w; ++c) gw1[r * w + c] += d * x.at(s, c);
      }
      // dX_i = dX_{i+1} + W1^T dU
      for (std::size_t c = 0; c < w; ++c) {
        double acc = dx.at(s, c);
        for (std::size_t r = 0; r < w; ++r) acc += blk.w1.at(r, c) * du[r];
        dx_prev.at(s, c) = acc;
      }
    }
    dx = std::move(dx_prev);
  }
  return g;
}

}  // namespace fedproxy
