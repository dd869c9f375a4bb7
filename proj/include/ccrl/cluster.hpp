#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ccrl/tensor.hpp"

namespace ccrl {

struct KMeansConfig {
  std::size_t k = 3;
  std::size_t restarts = 10;
  std::size_t max_iterations = 300;
  std::uint64_t seed = 0;
};

struct KMeansResult {
  std::vector<int> assignment;
  Tensor<double> centers;  // k×D
  double inertia = 0;
  std::size_t iterations = 0;
  std::vector<double> inertia_trace;  // after each assignment step
};

/// k-means++ seeding and Lloyd iterations from the given seed.
KMeansResult kmeans_single(const Tensor<double>& points, std::size_t k, std::size_t max_iterations, std::uint64_t seed);
/// Best of cfg.restarts runs by inertia; restart r uses its own derived seed,
/// so the result does not depend on thread scheduling.
KMeansResult kmeans(const Tensor<double>& points, const KMeansConfig& cfg);

/// Counts with rows = distinct truth labels, columns = distinct predicted
/// labels, both in ascending label order.
struct Contingency {
  std::vector<std::vector<std::size_t>> counts;
  std::vector<std::size_t> rows, cols;
  std::size_t n = 0;
  friend bool operator==(const Contingency&, const Contingency&) = default;
};

Contingency contingency(std::span<const int> truth, std::span<const int> pred);
/// Same partition up to renaming of ids.
bool equivalent(std::span<const int> a, std::span<const int> b);

double purity(std::span<const int> truth, std::span<const int> pred);
double ari(std::span<const int> truth, std::span<const int> pred);
double ami(std::span<const int> truth, std::span<const int> pred);
double mutual_information(const Contingency& c);
double expected_mutual_information(const Contingency& c);

struct MetricsReport {
  double ami = 0, ari = 0, purity = 0;
  std::size_t k = 0, restarts = 0, n = 0;
  Contingency table;
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

MetricsReport score(std::span<const int> truth, std::span<const int> pred, std::size_t k, std::size_t restarts);
/// K-means on the embeddings followed by all three scores.
MetricsReport evaluate(const Tensor<double>& embeddings, std::span<const int> labels, const KMeansConfig& cfg);

/// Header + one row; doubles printed round-trip exact, the contingency
/// table as `a b;c d`.
std::string report_csv(const MetricsReport& r);
MetricsReport parse_report_csv(const std::string& text);
/// Percentages with one decimal.
std::string report_table(const MetricsReport& r);

}  // namespace ccrl
