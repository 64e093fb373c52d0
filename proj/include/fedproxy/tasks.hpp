#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedproxy/errors.hpp"
#include "fedproxy/model.hpp"
#include "fedproxy/rng.hpp"

namespace fedproxy {

// Synthetic client task. Targets come from a hidden teacher
//   score(x) = shared_amp * tanh(<u_s, x> + c_s)
//            + own_sign * own_amp * tanh(<u_o, x> + c_o) + shift
// so a scenario can mix a consensus component (shared across clients) with
// client-specific, possibly opposing, components. Sampling is a pure
// function of (spec, purpose, index).
struct TaskSpec {
  TaskKind kind = TaskKind::regression;
  std::size_t input_dim = 4;
  std::uint64_t shared_seed = 0;  // teacher: consensus part
  std::uint64_t own_seed = 0;     // teacher: client-specific part
  double own_sign = 0.0;          // 0 disables the client-specific part
  double shared_amp = 1.0;
  double own_amp = 1.0;
  double noise_sd = 0.0;
  double shift = 0.0;        // per-client input distribution offset
  std::uint64_t seed = 0;    // data stream seed
  std::uint32_t shard = 0;   // disjoint-stream index within a shared task
  std::size_t train_samples = 256;
};

namespace detail_task {

struct TeacherPart {
  std::vector<double> u;
  double c = 0.0;
};

inline TeacherPart make_part(std::uint64_t seed, std::size_t input_dim) {
  Rng rng(derive_seed(seed, "teacher-part"));
  TeacherPart p;
  p.u.resize(input_dim);
  double nrm = 0.0;
  for (auto& v : p.u) {
    v = rng.normal();
    nrm += v * v;
  }
  nrm = std::sqrt(nrm);
  if (nrm > 0.0)
    for (auto& v : p.u) v /= nrm;
  p.c = 0.3 * rng.normal();
  return p;
}

inline double part_value(const TeacherPart& p, const double* x) {
  double acc = p.c;
  for (std::size_t i = 0; i < p.u.size(); ++i) acc += p.u[i] * x[i];
  return std::tanh(acc);
}

}  // namespace detail_task

inline double teacher_score(const TaskSpec& spec, const double* x) {
  double s = spec.shared_amp *
             detail_task::part_value(detail_task::make_part(spec.shared_seed, spec.input_dim), x);
  if (spec.own_sign != 0.0) {
    s += spec.own_sign * spec.own_amp *
         detail_task::part_value(detail_task::make_part(spec.own_seed, spec.input_dim), x);
  }
  return s + spec.shift;
}

// Draws n samples from the stream named by (purpose, index). The shard is
// mixed into the stream so homogeneous clients see disjoint data.
inline Batch sample_batch(const TaskSpec& spec, std::size_t n, const std::string& purpose,
                          std::uint64_t index = 0) {
  if (n == 0) throw ConfigError("sample_batch: n must be >= 1");
  Rng rng(derive_seed(derive_seed(spec.seed, purpose, spec.shard), "batch", index));
  const auto shared_part = detail_task::make_part(spec.shared_seed, spec.input_dim);
  const auto own_part = detail_task::make_part(spec.own_seed, spec.input_dim);

  Batch b;
  b.inputs = Mat(n, spec.input_dim);
  b.targets = Mat(n, 1);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t c = 0; c < spec.input_dim; ++c)
      b.inputs.at(s, c) = rng.normal() + spec.shift;
    double score = spec.shared_amp * detail_task::part_value(shared_part, b.inputs.row(s));
    if (spec.own_sign != 0.0)
      score += spec.own_sign * spec.own_amp * detail_task::part_value(own_part, b.inputs.row(s));
    const double noise = spec.noise_sd > 0.0 ? spec.noise_sd * rng.normal() : 0.0;
    if (spec.kind == TaskKind::regression) {
      b.targets.at(s, 0) = score + noise;
    } else {
      b.targets.at(s, 0) = (score + noise) > 0.0 ? 1.0 : 0.0;
    }
  }
  return b;
}

inline Batch train_set(const TaskSpec& spec) {
  return sample_batch(spec, spec.train_samples, "train", 0);
}

inline Batch eval_set(const TaskSpec& spec, std::size_t n) {
  return sample_batch(spec, n, "eval", 0);
}

enum class ScenarioKind { homogeneous, heterogeneous };

// homogeneous: K shards of one regression task (same teacher, disjoint
// streams). heterogeneous: K distinct tasks mixing regression and
// classification; clients pair up with opposing client-specific teachers on
// top of one shared consensus component, which manufactures genuine
// parameter conflicts for merge strategies to resolve.
inline std::vector<TaskSpec> make_scenario(ScenarioKind kind, std::size_t K,
                                           std::uint64_t seed, std::size_t input_dim,
                                           std::size_t train_samples = 256,
                                           double noise_sd = 0.05) {
  if (K < 1) throw ConfigError("make_scenario: K must be >= 1");
  std::vector<TaskSpec> specs;
  specs.reserve(K);
  if (kind == ScenarioKind::homogeneous) {
    const std::uint64_t teacher = derive_seed(seed, "homog-teacher");
    for (std::size_t k = 0; k < K; ++k) {
      TaskSpec t;
      t.kind = TaskKind::regression;
      t.input_dim = input_dim;
      t.shared_seed = teacher;
      t.own_seed = 0;
      t.own_sign = 0.0;
      t.noise_sd = noise_sd;
      t.shift = 0.0;
      t.seed = derive_seed(seed, "homog-data");
      t.shard = static_cast<std::uint32_t>(k);
      t.train_samples = train_samples;
      specs.push_back(t);
    }
  } else {
    const std::uint64_t shared = derive_seed(seed, "heter-shared");
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t pair = k / 2;
      TaskSpec t;
      t.kind = (pair % 2 == 0) ? TaskKind::regression : TaskKind::classification;
      t.input_dim = input_dim;
      t.shared_seed = shared;
      t.own_seed = derive_seed(seed, "heter-own", pair);
      t.own_sign = (k % 2 == 0) ? 1.0 : -1.0;
      t.shared_amp = 1.0;
      t.own_amp = 1.0;
      t.noise_sd = noise_sd;
      t.shift = 0.05 * static_cast<double>(k % 2);
      t.seed = derive_seed(seed, "heter-data", k);
      t.shard = static_cast<std::uint32_t>(k);
      t.train_samples = train_samples;
      specs.push_back(t);
    }
  }
  return specs;
}

}  // namespace fedproxy
