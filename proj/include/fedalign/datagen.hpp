#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "fedalign/matrix.hpp"
#include "fedalign/rng.hpp"

namespace fedalign {

struct Dataset {
  std::vector<Vec> xs;
  std::vector<int> ys;
  int num_classes = 0;

  std::size_t size() const { return xs.size(); }
  bool empty() const { return xs.empty(); }
};

enum class PartitionKind { iid, dirichlet, pathological };

const char* to_string(PartitionKind k);
PartitionKind partition_kind_from_string(const std::string& s);

struct PartitionSpec {
  PartitionKind kind = PartitionKind::dirichlet;
  double alpha = 0.1;            // Dir concentration
  int classes_per_client = 1;    // Path group size
  int num_clients = 5;
};

struct Partition {
  std::vector<std::vector<std::size_t>> assignments;   // per client indices
  std::vector<std::vector<std::int64_t>> class_counts; // K x C
};

struct PartitionStats {
  std::vector<std::vector<std::int64_t>> histogram;  // K x C, recounted
  std::vector<double> max_class_share;   // per client; 0 for empty clients
  std::vector<double> effective_classes; // inverse Simpson index per client
  std::vector<int> empty_clients;
};

// Gaussian mixture with class means kept at pairwise distance
// >= separation * noise_std; exact n_per_class samples per class.
Dataset gen_gaussian_mixture(int num_classes, int n_per_class, int d_in,
                             double separation, double noise_std, Rng& rng);

// The two halves of gen_gaussian_mixture, so train and test splits can share
// one set of means.
std::vector<Vec> sample_class_means(int num_classes, int d_in,
                                    double separation, double noise_std,
                                    Rng& rng);
Dataset sample_around_means(const std::vector<Vec>& means, int n_per_class,
                            double noise_std, Rng& rng);

Partition partition_iid(const Dataset& data, int num_clients, Rng& rng);
Partition partition_dirichlet(const Dataset& data, int num_clients,
                              double alpha, Rng& rng);
Partition partition_pathological(const Dataset& data, int num_clients,
                                 int classes_per_client, Rng& rng);

Partition make_partition(const Dataset& data, const PartitionSpec& spec,
                         Rng& rng);

// Test samples whose label the client owns; may be empty.
Dataset build_local_testset(const Dataset& test,
                            const std::set<int>& client_labels);

PartitionStats partition_stats(const Partition& partition,
                               const Dataset& data);

std::set<int> client_label_set(const Partition& partition, int client);

}  // namespace fedalign
