#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "fedproxy/errors.hpp"

namespace fedproxy {

// Named contiguous segments over one flat parameter vector. Immutable after
// construction; shared by pointer between all vectors of the same shape.
class ParamLayout {
 public:
  struct Segment {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;
  };

  // Builds a layout from (name, length) pairs; offsets accumulate in order.
  static std::shared_ptr<const ParamLayout> make(
      const std::vector<std::pair<std::string, std::size_t>>& parts) {
    ParamLayout l;
    std::size_t off = 0;
    for (const auto& [name, len] : parts) {
      l.segments_.push_back({name, off, len});
      off += len;
    }
    l.total_dim_ = off;
    l.validate();
    return std::make_shared<const ParamLayout>(std::move(l));
  }

  static std::shared_ptr<const ParamLayout> from_segments(std::vector<Segment> segs) {
    ParamLayout l;
    l.segments_ = std::move(segs);
    std::size_t total = 0;
    for (const auto& s : l.segments_) total += s.length;
    l.total_dim_ = total;
    l.validate();
    return std::make_shared<const ParamLayout>(std::move(l));
  }

  const std::vector<Segment>& segments() const { return segments_; }
  std::size_t total_dim() const { return total_dim_; }

  const Segment& segment(const std::string& name) const {
    for (const auto& s : segments_) {
      if (s.name == name) return s;
    }
    throw DimError("layout has no segment named '" + name + "'");
  }

  bool has_segment(const std::string& name) const {
    return std::any_of(segments_.begin(), segments_.end(),
                       [&](const Segment& s) { return s.name == name; });
  }

  bool same_shape(const ParamLayout& other) const {
    if (this == &other) return true;
    if (total_dim_ != other.total_dim_ || segments_.size() != other.segments_.size())
      return false;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      const auto& a = segments_[i];
      const auto& b = other.segments_[i];
      if (a.name != b.name || a.offset != b.offset || a.length != b.length) return false;
    }
    return true;
  }

 private:
  ParamLayout() = default;

  void validate() const {
    std::size_t expect = 0;
    for (const auto& s : segments_) {
      if (s.offset != expect)
        throw DimError("layout segments must be contiguous and sorted ('" + s.name + "')");
      expect += s.length;
      for (const auto& t : segments_) {
        if (&t != &s && t.name == s.name)
          throw DimError("duplicate layout segment name '" + s.name + "'");
      }
    }
    if (expect != total_dim_) throw DimError("layout lengths do not sum to total_dim");
  }

  std::vector<Segment> segments_;
  std::size_t total_dim_ = 0;
};

using LayoutPtr = std::shared_ptr<const ParamLayout>;

inline bool same_layout(const LayoutPtr& a, const LayoutPtr& b) {
  if (a == b) return true;
  if (!a || !b) return false;
  return a->same_shape(*b);
}

// A model's parameters as one contiguous f64 vector plus its layout.
// Treated as a value type: share const references across workers, copy to
// mutate.
class FlatParams {
 public:
  FlatParams() = default;
  FlatParams(LayoutPtr layout, std::vector<double> values)
      : layout_(std::move(layout)), values_(std::move(values)) {
    if (!layout_ || values_.size() != layout_->total_dim())
      throw DimError("FlatParams: values length does not match layout");
  }

  static FlatParams zeros(LayoutPtr layout) {
    std::vector<double> v(layout->total_dim(), 0.0);
    return FlatParams(std::move(layout), std::move(v));
  }

  const LayoutPtr& layout() const { return layout_; }
  std::size_t dim() const { return values_.size(); }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  bool all_finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  LayoutPtr layout_;
  std::vector<double> values_;
};

inline void check_same_layout(const FlatParams& a, const FlatParams& b,
                              const char* what) {
  if (!same_layout(a.layout(), b.layout()))
    throw DimError(std::string(what) + ": layout mismatch");
}

// Difference between a client's trained parameters and the round-start
// global proxy.
struct TaskVector {
  FlatParams delta;
  int client_id = 0;
  int round = 0;
};

// Boolean keep-mask over the dimensions of a layout.
struct SubspaceMask {
  std::vector<std::uint8_t> keep;
  LayoutPtr layout;

  SubspaceMask() = default;
  SubspaceMask(LayoutPtr l, std::vector<std::uint8_t> k)
      : keep(std::move(k)), layout(std::move(l)) {
    if (!layout || keep.size() != layout->total_dim())
      throw DimError("SubspaceMask: keep length does not match layout");
  }

  static SubspaceMask all(LayoutPtr l, bool value = true) {
    std::vector<std::uint8_t> k(l->total_dim(), value ? 1 : 0);
    return SubspaceMask(std::move(l), std::move(k));
  }

  std::size_t count_kept() const {
    std::size_t n = 0;
    for (auto b : keep) n += b ? 1 : 0;
    return n;
  }
};

// ---- vector algebra ----
// All reductions run left-to-right in index order; repeated runs are
// bit-identical.

inline double dot(const FlatParams& a, const FlatParams& b) {
  check_same_layout(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm2_squared(const FlatParams& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) acc += a[i] * a[i];
  return acc;
}

inline double norm2(const FlatParams& a) { return std::sqrt(norm2_squared(a)); }

inline FlatParams add(const FlatParams& a, const FlatParams& b) {
  check_same_layout(a, b, "add");
  FlatParams out = a;
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] += b[i];
  return out;
}

inline FlatParams sub(const FlatParams& a, const FlatParams& b) {
  check_same_layout(a, b, "sub");
  FlatParams out = a;
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] -= b[i];
  return out;
}

inline FlatParams scale(const FlatParams& a, double s) {
  FlatParams out = a;
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] *= s;
  return out;
}

// cos(a,b); returns 0 if either vector has zero norm so downstream
// similarity metrics stay defined for all-zero updates.
inline double cosine_similarity(const FlatParams& a, const FlatParams& b) {
  check_same_layout(a, b, "cosine_similarity");
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return d / (std::sqrt(na) * std::sqrt(nb));
}

// Keeps entries where the mask (keep_inside) or its complement holds;
// zeroes the rest. inside + outside reconstructs p exactly.
inline FlatParams masked_project(const FlatParams& p, const SubspaceMask& m,
                                 bool keep_inside) {
  if (!same_layout(p.layout(), m.layout))
    throw DimError("masked_project: layout mismatch");
  FlatParams out = p;
  for (std::size_t i = 0; i < p.dim(); ++i) {
    const bool in = m.keep[i] != 0;
    if (in != keep_inside) out[i] = 0.0;
  }
  return out;
}

// Exact sign per entry, sign(0)=0. No epsilon dead zone.
inline std::vector<int> signs(const FlatParams& p) {
  std::vector<int> out(p.dim());
  for (std::size_t i = 0; i < p.dim(); ++i)
    out[i] = p[i] > 0.0 ? 1 : (p[i] < 0.0 ? -1 : 0);
  return out;
}

}  // namespace fedproxy
