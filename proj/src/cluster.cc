#include "clustergnn/cluster.h"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <random>
#include <string>

namespace clustergnn {
namespace {

template <typename Range>
double norm_of(const Range& v) {
  double s = 0.0;
  for (const auto x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

template <typename RangeA, typename RangeB>
double dot_of(const RangeA& a, const RangeB& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return s;
}

template <typename T>
std::vector<double> row_norms(const Matrix<T>& m) {
  std::vector<double> n(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) n[i] = norm_of(m.row(i));
  return n;
}

// 1 - cos with precomputed norms; both norms must be positive.
template <typename RangeA, typename RangeB>
double cosine_gap(const RangeA& c, double c_norm, const RangeB& f,
                  double f_norm) {
  const double cos = dot_of(c, f) / (c_norm * f_norm);
  return std::clamp(1.0 - cos, 0.0, 2.0);
}

std::size_t resolve_k(std::size_t k_eff, std::size_t k) {
  return k_eff == 0 ? k : std::min(k_eff, k);
}

template <typename T>
void check_centers(const ClusterState<T>& state, std::size_t dim) {
  if (state.k() == 0) throw NumericError("cluster state has no centers");
  if (state.dim() != dim) {
    throw NumericError("feature dim " + std::to_string(dim) +
                       " != center dim " + std::to_string(state.dim()));
  }
}

void warn_zero_norm(std::size_t count) {
  if (count > 0) {
    std::cerr << "warning: " << count
              << " zero-norm feature(s) assigned to cluster 0\n";
  }
}

}  // namespace

std::vector<std::vector<std::size_t>> Assignment::members() const {
  std::vector<std::vector<std::size_t>> out(sizes.size());
  for (std::size_t c = 0; c < sizes.size(); ++c) out[c].reserve(sizes[c]);
  for (std::size_t i = 0; i < cid.size(); ++i) out[cid[i]].push_back(i);
  return out;
}

Assignment Assignment::from_ids(std::vector<std::size_t> cid, std::size_t k) {
  Assignment a;
  a.sizes.assign(k, 0);
  for (const std::size_t c : cid) {
    if (c >= k) throw NumericError("cluster id out of range");
    ++a.sizes[c];
  }
  a.cid = std::move(cid);
  return a;
}

template <typename T>
double discrepancy(std::span<const T> c, std::span<const T> f) {
  if (c.size() != f.size()) throw NumericError("discrepancy: dim mismatch");
  const double nc = norm_of(c), nf = norm_of(f);
  if (nc == 0.0 || nf == 0.0) {
    throw NumericError("discrepancy: zero-norm vector");
  }
  return cosine_gap(c, nc, f, nf);
}

template <typename T>
Assignment assign(const Matrix<T>& features, const ClusterState<T>& state,
                  std::size_t k_eff) {
  check_centers(state, features.cols());
  const std::size_t k = resolve_k(k_eff, state.k());
  const std::vector<double> cn = row_norms(state.centers);
  std::vector<std::size_t> cid(features.rows(), 0);
  std::size_t zero = 0;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto f = features.row(i);
    const double fn = norm_of(f);
    if (fn == 0.0) {
      ++zero;
      continue;
    }
    double best = 3.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double d = cosine_gap(state.centers.row(c), cn[c], f, fn);
      if (d < best) {
        best = d;
        cid[i] = c;
      }
    }
  }
  warn_zero_norm(zero);
  return Assignment::from_ids(std::move(cid), k);
}

template <typename T>
Assignment assign_joint(const Matrix<T>& queries, const Matrix<T>& keys,
                        const ClusterState<T>& state, std::size_t k_eff) {
  check_centers(state, queries.cols());
  if (!queries.same_shape(keys)) {
    throw NumericError("assign_joint: query/key shape mismatch");
  }
  const std::size_t k = resolve_k(k_eff, state.k());
  const std::vector<double> cn = row_norms(state.centers);
  std::vector<std::size_t> cid(queries.rows(), 0);
  std::size_t zero = 0;
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    const auto q = queries.row(i);
    const auto kv = keys.row(i);
    const double qn = norm_of(q), kn = norm_of(kv);
    if (qn == 0.0 && kn == 0.0) {
      ++zero;
      continue;
    }
    double best = 5.0;
    for (std::size_t c = 0; c < k; ++c) {
      const auto center = state.centers.row(c);
      double d = 0.0;
      if (qn > 0.0) d += cosine_gap(center, cn[c], q, qn);
      if (kn > 0.0) d += cosine_gap(center, cn[c], kv, kn);
      if (d < best) {
        best = d;
        cid[i] = c;
      }
    }
  }
  warn_zero_norm(zero);
  return Assignment::from_ids(std::move(cid), k);
}

template <typename T>
double total_discrepancy(const Matrix<T>& features, const ClusterState<T>& state,
                         const Assignment& asg) {
  double total = 0.0;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const double fn = norm_of(features.row(i));
    if (fn == 0.0) continue;
    const auto c = state.centers.row(asg.cid[i]);
    total += cosine_gap(c, norm_of(c), features.row(i), fn);
  }
  return total;
}

template <typename T>
ClusterState<T> kmeans_init(const Matrix<T>& features, std::size_t k,
                            std::uint64_t seed, std::size_t iters,
                            std::vector<double>* trace) {
  const std::size_t n = features.rows(), dim = features.cols();
  if (k == 0) throw NumericError("kmeans_init: k must be positive");
  if (n < k) {
    throw NumericError("kmeans_init: " + std::to_string(n) +
                       " features for k = " + std::to_string(k));
  }
  Matrix<double> unit(n, dim);
  std::vector<bool> usable(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const double fn = norm_of(features.row(i));
    if (fn == 0.0) continue;
    usable[i] = true;
    for (std::size_t j = 0; j < dim; ++j) unit(i, j) = features(i, j) / fn;
  }

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> chosen;
  std::vector<bool> taken(n, false);
  std::vector<double> dist(n, 0.0);
  auto pick_fallback = [&]() {
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i] && usable[i]) return i;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i]) return i;
    }
    return std::size_t{0};
  };
  {
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < n; ++i) {
      if (usable[i]) candidates.push_back(i);
    }
    std::size_t first = 0;
    if (!candidates.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
      first = candidates[pick(rng)];
    }
    chosen.push_back(first);
    taken[first] = true;
  }
  for (std::size_t i = 0; i < n; ++i) dist[i] = 2.0;
  while (chosen.size() < k) {
    const std::size_t last = chosen.back();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!usable[i] || taken[i]) {
        dist[i] = 0.0;
        continue;
      }
      double d = 2.0;
      if (usable[last]) {
        d = std::clamp(1.0 - dot_of(unit.row(i), unit.row(last)), 0.0, 2.0);
      }
      dist[i] = std::min(dist[i], d);
      total += dist[i] * dist[i];
    }
    std::size_t next = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      next = n;
      for (std::size_t i = 0; i < n; ++i) {
        target -= dist[i] * dist[i];
        if (target <= 0.0 && dist[i] > 0.0) {
          next = i;
          break;
        }
      }
      if (next == n) {
        for (std::size_t i = n; i-- > 0;) {
          if (dist[i] > 0.0) {
            next = i;
            break;
          }
        }
      }
    } else {
      next = pick_fallback();
    }
    chosen.push_back(next);
    taken[next] = true;
  }

  ClusterState<T> state;
  state.centers = Matrix<T>(k, dim);
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t src = chosen[c];
    for (std::size_t j = 0; j < dim; ++j) {
      state.centers(c, j) = static_cast<T>(usable[src] ? unit(src, j) : 0.0);
    }
    if (!usable[src]) state.centers(c, c % dim) = T(1);
  }
  state.initialized = true;

  Assignment asg = assign(features, state);
  if (trace != nullptr) trace->push_back(total_discrepancy(features, state, asg));
  for (std::size_t it = 0; it < iters; ++it) {
    Matrix<double> sums(k, dim);
    for (std::size_t i = 0; i < n; ++i) {
      if (!usable[i]) continue;
      for (std::size_t j = 0; j < dim; ++j) sums(asg.cid[i], j) += unit(i, j);
    }
    for (std::size_t c = 0; c < k; ++c) {
      const double sn = norm_of(sums.row(c));
      if (sn < 1e-12) continue;
      for (std::size_t j = 0; j < dim; ++j) {
        state.centers(c, j) = static_cast<T>(sums(c, j) / sn);
      }
    }
    asg = assign(features, state);
    if (trace != nullptr) {
      trace->push_back(total_discrepancy(features, state, asg));
    }
  }
  return state;
}

template <typename T>
ClusterState<T> ema_update(const ClusterState<T>& state,
                           const Matrix<T>& features, const Assignment& asg) {
  if (asg.cid.size() != features.rows()) {
    throw NumericError("ema_update: assignment does not cover the features");
  }
  const std::size_t k = state.k(), dim = state.dim();
  Matrix<double> sums(k, dim);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const std::size_t c = asg.cid[i];
    ++counts[c];
    for (std::size_t j = 0; j < dim; ++j) sums(c, j) += features(i, j);
  }
  ClusterState<T> out = state;
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t j = 0; j < dim; ++j) {
      const double mean = sums(c, j) / static_cast<double>(counts[c]);
      out.centers(c, j) = static_cast<T>(state.beta * state.centers(c, j) +
                                         (1.0 - state.beta) * mean);
    }
  }
  return out;
}

template <typename T>
void reseed_center(ClusterState<T>& state, std::size_t cluster,
                   const Matrix<T>& features) {
  const auto c = state.centers.row(cluster);
  const double cn = norm_of(c);
  double worst = -1.0;
  std::size_t pick = features.rows();
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const double fn = norm_of(features.row(i));
    if (fn == 0.0) continue;
    const double d = cn == 0.0 ? 2.0 : cosine_gap(c, cn, features.row(i), fn);
    if (d > worst) {
      worst = d;
      pick = i;
    }
  }
  if (pick == features.rows()) return;
  std::copy(features.row(pick).begin(), features.row(pick).end(), c.begin());
}

std::vector<std::size_t> stage_schedule(const ModelConfig& config) {
  for (std::size_t s = 0; s < config.schedule.size(); ++s) {
    if (config.schedule[s] == 0) {
      throw ConfigError("stage " + std::to_string(s) + " has zero clusters");
    }
    if (s > 0 && config.schedule[s] < config.schedule[s - 1]) {
      throw ConfigError("cluster schedule must be non-decreasing (stage " +
                        std::to_string(s) + ")");
    }
  }
  return config.schedule;
}

std::vector<std::size_t> effective_schedule(
    std::span<const std::size_t> schedule, std::size_t n_total) {
  std::vector<std::size_t> out;
  out.reserve(schedule.size());
  for (const std::size_t k : schedule) out.push_back(std::min(k, n_total));
  return out;
}

std::vector<std::size_t> fixed_schedule(std::size_t k, std::size_t stages) {
  return std::vector<std::size_t>(stages, k);
}

#define CLUSTERGNN_INSTANTIATE(T)                                              \
  template double discrepancy(std::span<const T>, std::span<const T>);         \
  template Assignment assign(const Matrix<T>&, const ClusterState<T>&,         \
                             std::size_t);                                     \
  template Assignment assign_joint(const Matrix<T>&, const Matrix<T>&,         \
                                   const ClusterState<T>&, std::size_t);       \
  template ClusterState<T> kmeans_init(const Matrix<T>&, std::size_t,          \
                                       std::uint64_t, std::size_t,             \
                                       std::vector<double>*);                  \
  template double total_discrepancy(const Matrix<T>&, const ClusterState<T>&,  \
                                    const Assignment&);                        \
  template ClusterState<T> ema_update(const ClusterState<T>&,                  \
                                      const Matrix<T>&, const Assignment&);    \
  template void reseed_center(ClusterState<T>&, std::size_t, const Matrix<T>&);

CLUSTERGNN_INSTANTIATE(float)
CLUSTERGNN_INSTANTIATE(double)
#undef CLUSTERGNN_INSTANTIATE

}  // namespace clustergnn
