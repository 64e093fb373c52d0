#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "fedproxy/checkpoint.hpp"
#include "fedproxy/errors.hpp"
#include "fedproxy/flat_params.hpp"
#include "fedproxy/model.hpp"
#include "fedproxy/tasks.hpp"

namespace fedproxy {

// Per-block influence: 1 - mean cosine between a block's input and output
// hidden states. Scores live in [0, 2].
struct BlockInfluenceReport {
  std::vector<double> scores;
  std::size_t samples_used = 0;
  std::string dataset_id;
  std::size_t degenerate_rows = 0;  // zero-norm hidden rows whose cosine was pinned to 1
};

struct PruneMask {
  std::vector<std::uint8_t> keep_block;
  double kappa = 0.0;

  std::size_t retained() const {
    std::size_t n = 0;
    for (auto b : keep_block) n += b ? 1 : 0;
    return n;
  }
};

// Maps every proxy dimension back to its backbone dimension, segment by
// segment. The head is always part of the map; retained blocks keep their
// original order.
struct Correspondence {
  struct Pair {
    std::string proxy_segment;
    std::string backbone_segment;
    std::size_t proxy_offset = 0;
    std::size_t backbone_offset = 0;
    std::size_t length = 0;
  };

  std::vector<Pair> pairs;
  std::size_t proxy_dim = 0;
  std::size_t backbone_dim = 0;

  // fraction of backbone parameters removed
  double alpha() const {
    return 1.0 - static_cast<double>(proxy_dim) / static_cast<double>(backbone_dim);
  }

  SubspaceMask backbone_mask(const LayoutPtr& backbone_layout) const {
    if (backbone_layout->total_dim() != backbone_dim)
      throw DimError("correspondence does not match backbone layout");
    SubspaceMask m = SubspaceMask::all(backbone_layout, false);
    for (const auto& p : pairs)
      for (std::size_t i = 0; i < p.length; ++i) m.keep[p.backbone_offset + i] = 1;
    return m;
  }
};

// BI_i = 1 - E over sample rows of cos(X_i, X_{i+1}). Rows with a zero
// hidden state contribute cosine 1 (no change) and are counted in
// degenerate_rows.
inline BlockInfluenceReport block_influence(const ResidualStack& model,
                                            const TaskSpec& public_task,
                                            std::size_t n_samples,
                                            const std::string& dataset_id = "public") {
  if (n_samples < 1) throw ConfigError("block_influence: n_samples must be >= 1");
  if (model.n_blocks() < 1) throw ConfigError("block_influence: model has no blocks");
  Batch batch = sample_batch(public_task, n_samples, "bi", 0);
  // only the hidden states matter here; reshape targets to the model
  batch.targets = Mat(n_samples, model.out_dim());
  const ForwardTrace ft = forward_with_trace(model, batch);

  BlockInfluenceReport rep;
  rep.samples_used = n_samples;
  rep.dataset_id = dataset_id;
  rep.scores.resize(model.n_blocks());
  const std::size_t w = model.width();
  for (std::size_t b = 0; b < model.n_blocks(); ++b) {
    const Mat& xi = ft.trace[b];
    const Mat& xo = ft.trace[b + 1];
    double mean_cos = 0.0;
    for (std::size_t s = 0; s < n_samples; ++s) {
      double d = 0.0, ni = 0.0, no = 0.0;
      for (std::size_t c = 0; c < w; ++c) {
        d += xi.at(s, c) * xo.at(s, c);
        ni += xi.at(s, c) * xi.at(s, c);
        no += xo.at(s, c) * xo.at(s, c);
      }
      double cs;
      if (ni == 0.0 || no == 0.0) {
        cs = 1.0;
        ++rep.degenerate_rows;
      } else {
        cs = d / (std::sqrt(ni) * std::sqrt(no));
      }
      mean_cos += cs;
    }
    mean_cos /= static_cast<double>(n_samples);
    rep.scores[b] = 1.0 - mean_cos;
  }
  return rep;
}

// Retains the ceil((1-kappa)*B) highest-BI blocks; ties keep the lower
// block index. Retained blocks stay in original order.
inline PruneMask select_mask(const BlockInfluenceReport& report, double kappa) {
  if (!(kappa >= 0.0 && kappa < 1.0))
    throw ConfigError("select_mask: kappa must be in [0,1)");
  const std::size_t B = report.scores.size();
  if (B == 0) throw ConfigError("select_mask: empty BI report");
  const double raw = (1.0 - kappa) * static_cast<double>(B);
  std::size_t keep = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  if (keep < 1) throw ConfigError("select_mask: kappa would retain zero blocks");
  if (keep > B) keep = B;

  std::vector<std::size_t> order(B);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (report.scores[a] != report.scores[b]) return report.scores[a] > report.scores[b];
    return a < b;
  });

  PruneMask mask;
  mask.kappa = kappa;
  mask.keep_block.assign(B, 0);
  for (std::size_t i = 0; i < keep; ++i) mask.keep_block[order[i]] = 1;
  return mask;
}

struct ProxyExtraction {
  ResidualStack proxy;
  Correspondence corr;
};

// Builds the proxy model (retained blocks + copied head) and the dimension
// correspondence. Proxy parameters are bit-identical to the backbone's at
// extraction.
inline ProxyExtraction extract_proxy(const ResidualStack& model, const PruneMask& mask) {
  if (mask.keep_block.size() != model.n_blocks())
    throw DimError("extract_proxy: mask size does not match block count");
  if (mask.retained() < 1) throw ConfigError("extract_proxy: mask retains no blocks");

  std::vector<BlockParams> kept;
  std::vector<std::size_t> kept_idx;
  for (std::size_t b = 0; b < model.n_blocks(); ++b) {
    if (mask.keep_block[b]) {
      kept.push_back(model.blocks()[b]);
      kept_idx.push_back(b);
    }
  }
  ResidualStack proxy(model.input_dim(), model.width(), model.out_dim(), std::move(kept),
                      model.embed(), model.head_w(), model.head_b());

  Correspondence corr;
  corr.backbone_dim = model.layout()->total_dim();
  corr.proxy_dim = proxy.layout()->total_dim();
  const char* suffixes[4] = {".W1", ".b1", ".W2", ".b2"};
  for (std::size_t pi = 0; pi < kept_idx.size(); ++pi) {
    const std::string pname = "block" + std::to_string(pi);
    const std::string bname = "block" + std::to_string(kept_idx[pi]);
    for (const char* sfx : suffixes) {
      const auto& ps = proxy.layout()->segment(pname + sfx);
      const auto& bs = model.layout()->segment(bname + sfx);
      corr.pairs.push_back({ps.name, bs.name, ps.offset, bs.offset, ps.length});
    }
  }
  for (const char* hname : {"head.W", "head.b"}) {
    const auto& ps = proxy.layout()->segment(hname);
    const auto& bs = model.layout()->segment(hname);
    corr.pairs.push_back({ps.name, bs.name, ps.offset, bs.offset, ps.length});
  }
  return {std::move(proxy), std::move(corr)};
}

inline void check_correspondence(const Correspondence& corr, const LayoutPtr& backbone,
                                 const LayoutPtr& proxy) {
  if (backbone->total_dim() != corr.backbone_dim)
    throw DimError("correspondence: backbone layout dim mismatch");
  if (proxy->total_dim() != corr.proxy_dim)
    throw DimError("correspondence: proxy layout dim mismatch");
  for (const auto& p : corr.pairs) {
    const auto& ps = proxy->segment(p.proxy_segment);
    const auto& bs = backbone->segment(p.backbone_segment);
    if (ps.offset != p.proxy_offset || ps.length != p.length)
      throw DimError("correspondence: proxy segment '" + p.proxy_segment + "' mismatch");
    if (bs.offset != p.backbone_offset || bs.length != p.length)
      throw DimError("correspondence: backbone segment '" + p.backbone_segment + "' mismatch");
  }
}

// Slices backbone values into a proxy-layout vector (inverse of fusion).
inline FlatParams extract_params(const FlatParams& backbone, const Correspondence& corr,
                                 const LayoutPtr& proxy_layout) {
  check_correspondence(corr, backbone.layout(), proxy_layout);
  FlatParams out = FlatParams::zeros(proxy_layout);
  for (const auto& p : corr.pairs)
    for (std::size_t i = 0; i < p.length; ++i)
      out[p.proxy_offset + i] = backbone[p.backbone_offset + i];
  return out;
}

// Relative output distortion of the current proxy against the backbone's
// retained sub-network (evaluated with the backbone's own parameter
// values): max over samples of ||f_proxy(x) - f_sub(x)|| / max(||f_full(x)||, 1e-12).
inline double estimate_distortion(const ResidualStack& backbone, const ResidualStack& proxy,
                                  const Correspondence& corr, const TaskSpec& task,
                                  std::size_t n_samples) {
  check_correspondence(corr, backbone.layout(), proxy.layout());
  if (n_samples < 1) throw ConfigError("estimate_distortion: n_samples must be >= 1");

  // sub-network: proxy architecture, backbone parameter values
  ResidualStack sub = proxy;
  sub.load(extract_params(backbone.flatten(), corr, proxy.layout()));

  const Batch batch = sample_batch(task, n_samples, "distortion", 0);
  const Mat full = forward_with_trace(backbone, batch).outputs;
  const Mat fp = forward_with_trace(proxy, batch).outputs;
  const Mat fs = forward_with_trace(sub, batch).outputs;

  double eta = 0.0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    double dn = 0.0, fn = 0.0;
    for (std::size_t o = 0; o < full.cols; ++o) {
      const double d = fp.at(s, o) - fs.at(s, o);
      dn += d * d;
      fn += full.at(s, o) * full.at(s, o);
    }
    const double ratio = std::sqrt(dn) / std::max(std::sqrt(fn), 1e-12);
    eta = std::max(eta, ratio);
  }
  return eta;
}

// ---- correspondence file I/O (same envelope as checkpoints) ----

inline std::string encode_correspondence(const Correspondence& corr) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, kCorrespondenceSentinel);
  detail::put_u32(out, static_cast<std::uint32_t>(corr.pairs.size()));
  for (const auto& p : corr.pairs) {
    detail::put_str(out, p.proxy_segment);
    detail::put_str(out, p.backbone_segment);
    detail::put_u64(out, p.proxy_offset);
    detail::put_u64(out, p.backbone_offset);
    detail::put_u64(out, p.length);
  }
  detail::put_u64(out, corr.proxy_dim);
  detail::put_u64(out, corr.backbone_dim);
  return out;
}

inline void save_correspondence(const Correspondence& corr, const std::string& path) {
  detail::write_file(path, encode_correspondence(corr));
}

inline Correspondence load_correspondence(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  detail::Reader r(bytes, path);
  r.expect_magic();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw IoError(path + ": unsupported file version " + std::to_string(version));
  if (r.u32() != kCorrespondenceSentinel)
    throw IoError(path + ": not a correspondence file (parameter checkpoint?)");
  Correspondence corr;
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    Correspondence::Pair p;
    p.proxy_segment = r.str();
    p.backbone_segment = r.str();
    p.proxy_offset = static_cast<std::size_t>(r.u64());
    p.backbone_offset = static_cast<std::size_t>(r.u64());
    p.length = static_cast<std::size_t>(r.u64());
    corr.pairs.push_back(std::move(p));
  }
  corr.proxy_dim = static_cast<std::size_t>(r.u64());
  corr.backbone_dim = static_cast<std::size_t>(r.u64());
  if (!r.at_end()) throw IoError(path + ": trailing bytes");
  return corr;
}

}  // namespace fedproxy
