#include "fedalign/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fedalign/errors.hpp"
#include "fedalign/kernels.hpp"
#include "fedalign/similarity.hpp"

namespace fedalign {

const char* to_string(PartitionKind k) {
  switch (k) {
    case PartitionKind::iid: return "iid";
    case PartitionKind::dirichlet: return "dir";
    case PartitionKind::pathological: return "path";
  }
  return "unknown";
}

PartitionKind partition_kind_from_string(const std::string& s) {
  if (s == "iid" || s == "IID") return PartitionKind::iid;
  if (s == "dir" || s == "Dir" || s == "dirichlet") {
    return PartitionKind::dirichlet;
  }
  if (s == "path" || s == "Path" || s == "pathological") {
    return PartitionKind::pathological;
  }
  throw ParameterError("unknown partition kind: " + s);
}

std::vector<Vec> sample_class_means(int num_classes, int d_in,
                                    double separation, double noise_std,
                                    Rng& rng) {
  if (num_classes < 1 || d_in < 1) {
    throw ParameterError("class means: need num_classes >= 1 and d_in >= 1");
  }
  if (separation < 0.0) {
    throw ParameterError("class means: separation must be >= 0");
  }
  const double min_dist = separation * noise_std;
  double radius = std::max(min_dist, 1.0);
  constexpr int kMaxAttempts = 100;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    if (attempt > 0 && attempt % 10 == 0) radius *= 1.3;
    std::vector<Vec> means;
    means.reserve(num_classes);
    for (int c = 0; c < num_classes; ++c) {
      Vec direction(d_in);
      for (double& v : direction) v = rng.gaussian(0.0, 1.0);
      Vec mean = l2_normalize(direction);
      kernels::scal(mean.data(), radius, mean.size());
      means.push_back(std::move(mean));
    }
    bool ok = true;
    for (std::size_t i = 0; i + 1 < means.size() && ok; ++i) {
      for (std::size_t j = i + 1; j < means.size(); ++j) {
        const double dist = std::sqrt(kernels::squared_distance(
            means[i].data(), means[j].data(), means[i].size()));
        if (dist < min_dist) {
          ok = false;
          break;
        }
      }
    }
    if (ok) return means;
  }
  throw ParameterError(
      "class means: could not satisfy the separation constraint in " +
      std::to_string(kMaxAttempts) + " attempts");
}

Dataset sample_around_means(const std::vector<Vec>& means, int n_per_class,
                            double noise_std, Rng& rng) {
  if (means.empty() || n_per_class < 1) {
    throw ParameterError("mixture sampling: empty means or n_per_class < 1");
  }
  Dataset data;
  data.num_classes = static_cast<int>(means.size());
  data.xs.reserve(means.size() * n_per_class);
  data.ys.reserve(means.size() * n_per_class);
  for (int c = 0; c < data.num_classes; ++c) {
    for (int i = 0; i < n_per_class; ++i) {
      Vec x = means[c];
      for (double& v : x) v += rng.gaussian(0.0, noise_std);
      data.xs.push_back(std::move(x));
      data.ys.push_back(c);
    }
  }
  return data;
}

Dataset gen_gaussian_mixture(int num_classes, int n_per_class, int d_in,
                             double separation, double noise_std, Rng& rng) {
  if (num_classes < 2) {
    throw ParameterError("gaussian mixture: need at least two classes");
  }
  const std::vector<Vec> means =
      sample_class_means(num_classes, d_in, separation, noise_std, rng);
  return sample_around_means(means, n_per_class, noise_std, rng);
}

namespace {

Partition empty_partition(int num_clients, int num_classes) {
  Partition p;
  p.assignments.resize(num_clients);
  p.class_counts.assign(num_clients,
                        std::vector<std::int64_t>(num_classes, 0));
  return p;
}

void recount(Partition& p, const Dataset& data) {
  for (std::size_t k = 0; k < p.assignments.size(); ++k) {
    std::fill(p.class_counts[k].begin(), p.class_counts[k].end(), 0);
    for (const std::size_t idx : p.assignments[k]) {
      ++p.class_counts[k][data.ys[idx]];
    }
  }
}

std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& data) {
  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    by_class[data.ys[i]].push_back(i);
  }
  return by_class;
}

}  // namespace

Partition partition_iid(const Dataset& data, int num_clients, Rng& rng) {
  if (num_clients < 1) {
    throw ParameterError("partition_iid: need at least one client");
  }
  std::vector<std::size_t> indices(data.size());
  std::iota(indices.begin(), indices.end(), 0);
  rng.shuffle(indices);
  Partition p = empty_partition(num_clients, data.num_classes);
  const std::size_t base = data.size() / num_clients;
  const std::size_t extra = data.size() % num_clients;
  std::size_t cursor = 0;
  for (int k = 0; k < num_clients; ++k) {
    const std::size_t take = base + (static_cast<std::size_t>(k) < extra);
    p.assignments[k].assign(indices.begin() + cursor,
                            indices.begin() + cursor + take);
    cursor += take;
  }
  recount(p, data);
  return p;
}

Partition partition_dirichlet(const Dataset& data, int num_clients,
                              double alpha, Rng& rng) {
  if (num_clients < 1) {
    throw ParameterError("partition_dirichlet: need at least one client");
  }
  Partition p = empty_partition(num_clients, data.num_classes);
  auto by_class = indices_by_class(data);
  for (int c = 0; c < data.num_classes; ++c) {
    std::vector<std::size_t>& pool = by_class[c];
    rng.shuffle(pool);
    const Vec q = rng.dirichlet(alpha, num_clients);
    const std::int64_t total = static_cast<std::int64_t>(pool.size());
    // Largest-remainder rounding keeps the per-class totals exact.
    std::vector<std::int64_t> counts(num_clients);
    std::vector<std::pair<double, int>> remainders(num_clients);
    std::int64_t assigned = 0;
    for (int k = 0; k < num_clients; ++k) {
      const double share = q[k] * static_cast<double>(total);
      counts[k] = static_cast<std::int64_t>(std::floor(share));
      assigned += counts[k];
      remainders[k] = {share - std::floor(share), k};
    }
    std::sort(remainders.begin(), remainders.end(),
              [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;
              });
    for (std::int64_t r = 0; r < total - assigned; ++r) {
      ++counts[remainders[r % num_clients].second];
    }
    std::size_t cursor = 0;
    for (int k = 0; k < num_clients; ++k) {
      p.assignments[k].insert(p.assignments[k].end(), pool.begin() + cursor,
                              pool.begin() + cursor + counts[k]);
      cursor += counts[k];
    }
  }
  recount(p, data);
  return p;
}

Partition partition_pathological(const Dataset& data, int num_clients,
                                 int classes_per_client, Rng& rng) {
  if (num_clients < 1 || classes_per_client < 1) {
    throw ParameterError("partition_pathological: invalid sizes");
  }
  if (static_cast<std::int64_t>(classes_per_client) * num_clients >
      data.num_classes) {
    throw ParameterError(
        "partition_pathological: classes_per_client * clients exceeds the "
        "class count");
  }
  std::vector<int> classes(data.num_classes);
  std::iota(classes.begin(), classes.end(), 0);
  rng.shuffle(classes);
  const auto by_class = indices_by_class(data);
  Partition p = empty_partition(num_clients, data.num_classes);
  for (int k = 0; k < num_clients; ++k) {
    std::vector<int> own(classes.begin() + k * classes_per_client,
                         classes.begin() + (k + 1) * classes_per_client);
    std::sort(own.begin(), own.end());
    for (const int c : own) {
      p.assignments[k].insert(p.assignments[k].end(), by_class[c].begin(),
                              by_class[c].end());
    }
  }
  recount(p, data);
  return p;
}

Partition make_partition(const Dataset& data, const PartitionSpec& spec,
                         Rng& rng) {
  switch (spec.kind) {
    case PartitionKind::iid:
      return partition_iid(data, spec.num_clients, rng);
    case PartitionKind::dirichlet:
      return partition_dirichlet(data, spec.num_clients, spec.alpha, rng);
    case PartitionKind::pathological:
      return partition_pathological(data, spec.num_clients,
                                    spec.classes_per_client, rng);
  }
  throw ParameterError("make_partition: unknown kind");
}

Dataset build_local_testset(const Dataset& test,
                            const std::set<int>& client_labels) {
  Dataset local;
  local.num_classes = test.num_classes;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (client_labels.count(test.ys[i])) {
      local.xs.push_back(test.xs[i]);
      local.ys.push_back(test.ys[i]);
    }
  }
  return local;
}

PartitionStats partition_stats(const Partition& partition,
                               const Dataset& data) {
  PartitionStats stats;
  const int num_clients = static_cast<int>(partition.assignments.size());
  stats.histogram.assign(num_clients,
                         std::vector<std::int64_t>(data.num_classes, 0));
  for (int k = 0; k < num_clients; ++k) {
    for (const std::size_t idx : partition.assignments[k]) {
      if (idx >= data.size()) {
        throw ParameterError("partition_stats: index out of range");
      }
      ++stats.histogram[k][data.ys[idx]];
    }
  }
  stats.max_class_share.assign(num_clients, 0.0);
  stats.effective_classes.assign(num_clients, 0.0);
  for (int k = 0; k < num_clients; ++k) {
    std::int64_t total = 0;
    std::int64_t max_count = 0;
    double sq_share = 0.0;
    for (const std::int64_t c : stats.histogram[k]) {
      total += c;
      max_count = std::max(max_count, c);
    }
    if (total == 0) {
      stats.empty_clients.push_back(k);
      continue;
    }
    for (const std::int64_t c : stats.histogram[k]) {
      const double share = static_cast<double>(c) / static_cast<double>(total);
      sq_share += share * share;
    }
    stats.max_class_share[k] =
        static_cast<double>(max_count) / static_cast<double>(total);
    stats.effective_classes[k] = 1.0 / sq_share;
  }
  return stats;
}

std::set<int> client_label_set(const Partition& partition, int client) {
  std::set<int> labels;
  const auto& counts = partition.class_counts[client];
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] > 0) labels.insert(static_cast<int>(c));
  }
  return labels;
}

}  // namespace fedalign
