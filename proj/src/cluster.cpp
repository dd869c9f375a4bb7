#include "ccrl/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "ccrl/errors.hpp"
#include "ccrl/rng.hpp"

namespace ccrl {

namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0;
  for (std::size_t i = 0; i < d; ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

// Nearest center for every point; returns inertia.
double assign(const Tensor<double>& points, const Tensor<double>& centers, std::vector<int>& out, std::vector<double>& dist) {
  const std::size_t n = points.dim(0), d = points.dim(1), k = centers.dim(0);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double v = sq_dist(points.data() + i * d, centers.data() + c * d, d);
      if (v < best) best = v, arg = static_cast<int>(c);
    }
    out[i] = arg;
    dist[i] = best;
    total += best;
  }
  return total;
}

Tensor<double> plus_plus(const Tensor<double>& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.dim(0), d = points.dim(1);
  Tensor<double> centers({k, d});
  std::size_t first = rng.below(n);
  std::copy_n(points.data() + first * d, d, centers.data());
  std::vector<double> closest(n);
  for (std::size_t i = 0; i < n; ++i) closest[i] = sq_dist(points.data() + i * d, centers.data(), d);
  for (std::size_t c = 1; c < k; ++c) {
    const double total = std::accumulate(closest.begin(), closest.end(), 0.0);
    std::size_t pick = n - 1;
    if (total > 0) {
      double r = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        r -= closest[i];
        if (r < 0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.below(n);
    }
    std::copy_n(points.data() + pick * d, d, centers.data() + c * d);
    for (std::size_t i = 0; i < n; ++i)
      closest[i] = std::min(closest[i], sq_dist(points.data() + i * d, centers.data() + c * d, d));
  }
  return centers;
}

void check_points(const Tensor<double>& points, std::size_t k) {
  if (points.rank() != 2) throw ShapeError("kmeans expects an N×D matrix, got " + shape_str(points.shape()));
  if (k == 0) throw ConfigError("kmeans needs k >= 1");
  if (k > points.dim(0))
    throw ConfigError("kmeans k=" + std::to_string(k) + " exceeds point count " + std::to_string(points.dim(0)));
  if (!points.all_finite()) throw NonFiniteError("kmeans input contains non-finite values");
}

}  // namespace

KMeansResult kmeans_single(const Tensor<double>& points, std::size_t k, std::size_t max_iterations, std::uint64_t seed) {
  check_points(points, k);
  const std::size_t n = points.dim(0), d = points.dim(1);
  Rng rng(seed);
  KMeansResult res;
  res.centers = plus_plus(points, k, rng);
  res.assignment.assign(n, -1);
  std::vector<int> next(n);
  std::vector<double> dist(n);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    const double inertia = assign(points, res.centers, next, dist);
    res.inertia_trace.push_back(inertia);
    res.iterations = it + 1;
    if (next == res.assignment) break;
    res.assignment = next;
    // Means of the new assignment; an empty cluster takes the farthest point.
    std::vector<double> sums(k * d, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(res.assignment[i]);
      ++counts[c];
      for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += points.data()[i * d + j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        const auto far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
        std::copy_n(points.data() + far * d, d, res.centers.data() + c * d);
        dist[far] = 0;
        continue;
      }
      for (std::size_t j = 0; j < d; ++j) res.centers.data()[c * d + j] = sums[c * d + j] / static_cast<double>(counts[c]);
    }
  }
  res.inertia = assign(points, res.centers, next, dist);
  res.assignment = next;
  return res;
}

KMeansResult kmeans(const Tensor<double>& points, const KMeansConfig& cfg) {
  check_points(points, cfg.k);
  if (cfg.restarts == 0) throw ConfigError("kmeans needs at least one restart");
  std::vector<KMeansResult> runs(cfg.restarts);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t r = 0; r < cfg.restarts; ++r)
    runs[r] = kmeans_single(points, cfg.k, cfg.max_iterations, derive_seed(cfg.seed, "kmeans", r));
  std::size_t best = 0;
  for (std::size_t r = 1; r < runs.size(); ++r)
    if (runs[r].inertia < runs[best].inertia) best = r;
  return std::move(runs[best]);
}

Contingency contingency(std::span<const int> truth, std::span<const int> pred) {
  if (truth.size() != pred.size())
    throw ShapeError("partition lengths differ: " + std::to_string(truth.size()) + " vs " + std::to_string(pred.size()));
  if (truth.empty()) throw ShapeError("partitions are empty");
  std::map<int, std::size_t> ri, ci;
  for (int t : truth) ri.emplace(t, 0);
  for (int p : pred) ci.emplace(p, 0);
  std::size_t idx = 0;
  for (auto& [_, v] : ri) v = idx++;
  idx = 0;
  for (auto& [_, v] : ci) v = idx++;
  Contingency c;
  c.n = truth.size();
  c.counts.assign(ri.size(), std::vector<std::size_t>(ci.size(), 0));
  c.rows.assign(ri.size(), 0);
  c.cols.assign(ci.size(), 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto r = ri[truth[i]], col = ci[pred[i]];
    ++c.counts[r][col];
    ++c.rows[r];
    ++c.cols[col];
  }
  return c;
}

bool equivalent(std::span<const int> a, std::span<const int> b) {
  const auto c = contingency(a, b);
  if (c.rows.size() != c.cols.size()) return false;
  for (const auto& row : c.counts)
    if (std::count_if(row.begin(), row.end(), [](std::size_t v) { return v != 0; }) != 1) return false;
  return true;
}

double purity(std::span<const int> truth, std::span<const int> pred) {
  const auto c = contingency(truth, pred);
  std::size_t total = 0;
  for (std::size_t j = 0; j < c.cols.size(); ++j) {
    std::size_t best = 0;
    for (std::size_t i = 0; i < c.rows.size(); ++i) best = std::max(best, c.counts[i][j]);
    total += best;
  }
  return static_cast<double>(total) / static_cast<double>(c.n);
}

double ari(std::span<const int> truth, std::span<const int> pred) {
  const auto c = contingency(truth, pred);
  if (c.n < 2) throw ShapeError("ari needs at least 2 items");
  if (equivalent(truth, pred)) return 1.0;
  auto pairs = [](std::size_t v) { return 0.5 * static_cast<double>(v) * static_cast<double>(v - (v > 0)); };
  double index = 0, sa = 0, sb = 0;
  for (const auto& row : c.counts)
    for (auto v : row) index += pairs(v);
  for (auto v : c.rows) sa += pairs(v);
  for (auto v : c.cols) sb += pairs(v);
  const double expected = sa * sb / pairs(c.n);
  const double denom = 0.5 * (sa + sb) - expected;
  if (denom == 0.0) return 0.0;
  return (index - expected) / denom;
}

namespace {

double entropy(const std::vector<std::size_t>& sums, std::size_t n) {
  double h = 0;
  for (auto v : sums)
    if (v) {
      const double p = static_cast<double>(v) / static_cast<double>(n);
      h -= p * std::log(p);
    }
  return h;
}

}  // namespace

double mutual_information(const Contingency& c) {
  const double n = static_cast<double>(c.n);
  double mi = 0;
  for (std::size_t i = 0; i < c.rows.size(); ++i)
    for (std::size_t j = 0; j < c.cols.size(); ++j) {
      const double nij = static_cast<double>(c.counts[i][j]);
      if (nij > 0) mi += nij / n * std::log(n * nij / (static_cast<double>(c.rows[i]) * static_cast<double>(c.cols[j])));
    }
  return std::max(0.0, mi);
}

double expected_mutual_information(const Contingency& c) {
  const std::size_t n = c.n;
  std::vector<double> lf(n + 1, 0.0);  // log k!
  for (std::size_t k = 1; k <= n; ++k) lf[k] = lf[k - 1] + std::log(static_cast<double>(k));
  const double nd = static_cast<double>(n);
  double emi = 0;
  for (auto a : c.rows)
    for (auto b : c.cols) {
      const std::size_t lo = std::max<std::size_t>(1, a + b > n ? a + b - n : 0), hi = std::min(a, b);
      const double fixed = lf[a] + lf[b] + lf[n - a] + lf[n - b] - lf[n];
      for (std::size_t k = lo; k <= hi; ++k) {
        const double kd = static_cast<double>(k);
        const double log_p = fixed - lf[k] - lf[a - k] - lf[b - k] - lf[n - a - b + k];
        emi += kd / nd * std::log(nd * kd / (static_cast<double>(a) * static_cast<double>(b))) * std::exp(log_p);
      }
    }
  return emi;
}

double ami(std::span<const int> truth, std::span<const int> pred) {
  const auto c = contingency(truth, pred);
  if (equivalent(truth, pred)) return 1.0;
  if (c.rows.size() == 1 || c.cols.size() == 1) return 0.0;
  const double mi = mutual_information(c), emi = expected_mutual_information(c);
  const double norm = 0.5 * (entropy(c.rows, c.n) + entropy(c.cols, c.n));
  const double denom = norm - emi;
  if (std::abs(denom) < 1e-15) return 0.0;
  return (mi - emi) / denom;
}

MetricsReport score(std::span<const int> truth, std::span<const int> pred, std::size_t k, std::size_t restarts) {
  MetricsReport r;
  r.table = contingency(truth, pred);
  r.n = truth.size();
  r.k = k;
  r.restarts = restarts;
  r.purity = purity(truth, pred);
  r.ari = r.n >= 2 ? ari(truth, pred) : 1.0;
  r.ami = ami(truth, pred);
  return r;
}

MetricsReport evaluate(const Tensor<double>& embeddings, std::span<const int> labels, const KMeansConfig& cfg) {
  if (embeddings.rank() != 2 || embeddings.dim(0) != labels.size())
    throw ShapeError("embeddings " + shape_str(embeddings.shape()) + " do not match " + std::to_string(labels.size()) + " labels");
  const auto km = kmeans(embeddings, cfg);
  return score(labels, km.assignment, cfg.k, cfg.restarts);
}

namespace {

std::string table_str(const Contingency& c) {
  std::string s;
  for (std::size_t i = 0; i < c.counts.size(); ++i) {
    if (i) s += ';';
    for (std::size_t j = 0; j < c.counts[i].size(); ++j) {
      if (j) s += ' ';
      s += std::to_string(c.counts[i][j]);
    }
  }
  return s;
}

Contingency parse_table(const std::string& s) {
  Contingency c;
  std::stringstream rows(s);
  std::string row;
  while (std::getline(rows, row, ';')) {
    std::stringstream cells(row);
    std::vector<std::size_t> r;
    std::size_t v;
    while (cells >> v) r.push_back(v);
    if (!cells.eof()) throw FormatError("bad contingency cell in '" + row + "'");
    if (!c.counts.empty() && r.size() != c.counts[0].size()) throw FormatError("ragged contingency table");
    c.counts.push_back(std::move(r));
  }
  if (c.counts.empty() || c.counts[0].empty()) throw FormatError("empty contingency table");
  c.rows.assign(c.counts.size(), 0);
  c.cols.assign(c.counts[0].size(), 0);
  for (std::size_t i = 0; i < c.counts.size(); ++i)
    for (std::size_t j = 0; j < c.counts[i].size(); ++j) {
      c.rows[i] += c.counts[i][j];
      c.cols[j] += c.counts[i][j];
      c.n += c.counts[i][j];
    }
  return c;
}

}  // namespace

std::string report_csv(const MetricsReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%zu,%zu,%zu,", r.ami, r.ari, r.purity, r.k, r.restarts, r.n);
  return std::string("ami,ari,purity,k,restarts,n,contingency\n") + buf + table_str(r.table) + "\n";
}

MetricsReport parse_report_csv(const std::string& text) {
  std::stringstream in(text);
  std::string header, row;
  std::getline(in, header);
  if (header != "ami,ari,purity,k,restarts,n,contingency") throw FormatError("unexpected metrics header: " + header);
  if (!std::getline(in, row)) throw FormatError("metrics file has no data row");
  std::vector<std::string> f;
  std::stringstream fs(row);
  std::string cell;
  while (std::getline(fs, cell, ',')) f.push_back(cell);
  if (f.size() != 7) throw FormatError("metrics row needs 7 fields, got " + std::to_string(f.size()));
  MetricsReport r;
  try {
    r.ami = std::stod(f[0]);
    r.ari = std::stod(f[1]);
    r.purity = std::stod(f[2]);
    r.k = std::stoul(f[3]);
    r.restarts = std::stoul(f[4]);
    r.n = std::stoul(f[5]);
  } catch (const std::logic_error&) {
    throw FormatError("bad number in metrics row: " + row);
  }
  r.table = parse_table(f[6]);
  if (r.table.n != r.n) throw FormatError("contingency total does not match n");
  return r;
}

std::string report_table(const MetricsReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-8s%8s\n%-8s%7.1f%%\n%-8s%7.1f%%\n%-8s%7.1f%%\n", "metric", "value", "AMI", 100 * r.ami,
                "ARI", 100 * r.ari, "Purity", 100 * r.purity);
  return buf;
}

}  // namespace ccrl
