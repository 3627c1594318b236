#pragma once

// Fixtures and independent oracles shared by the unit and acceptance tests.
// Nothing here calls into the code it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include "cardood/model.hpp"
#include "cardood/query.hpp"
#include "cardood/synthetic.hpp"

namespace cardood::testing {

inline SyntheticTableSpec numeric_table(std::string name, std::size_t rows, std::size_t attrs) {
  SyntheticTableSpec t;
  t.name = std::move(name);
  t.rows = rows;
  for (std::size_t k = 0; k < attrs; ++k) {
    t.attributes.push_back(AttributeMeta::numerical("a" + std::to_string(k), 0.0, 100.0));
  }
  return t;
}

/// One table with numerical and categorical columns.
inline Database mixed_database(std::size_t rows, std::uint64_t seed) {
  SyntheticTableSpec t = numeric_table("t0", rows, 3);
  t.attributes.push_back(AttributeMeta::categorical("c0", {"x", "y", "z", "w", "v"}));
  t.attributes.push_back(AttributeMeta::categorical("c1", {"p", "q", "r", "s", "t", "u", "o", "n", "m"}));
  SyntheticDatabaseSpec spec{{t}, {}};
  return generate_synthetic_database(spec, seed);
}

/// Chain t0 <- t1 <- t2 <- t3 (t1 references t0, ...), `tables` long.
inline Database chain_database(std::size_t tables, std::size_t rows, std::uint64_t seed) {
  SyntheticDatabaseSpec spec;
  for (std::size_t i = 0; i < tables; ++i) {
    SyntheticTableSpec t = numeric_table("t" + std::to_string(i), rows, 2);
    t.attributes.push_back(AttributeMeta::categorical("c", {"a", "b", "c", "d", "e", "f"}));
    spec.tables.push_back(std::move(t));
    if (i > 0) spec.foreign_keys.push_back({"t" + std::to_string(i), "t" + std::to_string(i - 1)});
  }
  return generate_synthetic_database(spec, seed);
}

/// Plain nested-loop count: binds relations one at a time in the order of a
/// breadth-first walk from the lexicographically last relation, scanning every
/// row of each and checking all predicates whose relations are bound.
inline std::uint64_t oracle_count(const Database& db, const SPJQuery& q) {
  std::vector<std::string> order{*std::max_element(q.relations.begin(), q.relations.end())};
  while (order.size() < q.relations.size()) {
    for (const JoinPair& j : q.joins) {
      const bool l = std::count(order.begin(), order.end(), j.left.table) > 0;
      const bool r = std::count(order.begin(), order.end(), j.right.table) > 0;
      if (l != r) {
        order.push_back(l ? j.right.table : j.left.table);
        break;
      }
    }
  }
  std::map<std::string, std::size_t> bound;
  std::function<std::uint64_t(std::size_t)> rec = [&](std::size_t level) -> std::uint64_t {
    if (level == order.size()) return 1;
    const Table& t = db.table(order[level]);
    std::uint64_t total = 0;
    for (std::size_t row = 0; row < t.num_rows(); ++row) {
      bool ok = true;
      for (const Selection& s : q.selections) {
        if (s.attribute.table != t.name) continue;
        const double v = t.at(row, t.attribute_index(s.attribute.attribute));
        if (s.is_range()) {
          ok = v >= s.range().lb && v <= s.range().ub;
        } else {
          const auto& in = s.in().values;
          ok = std::find(in.begin(), in.end(), static_cast<int>(v)) != in.end();
        }
        if (!ok) break;
      }
      if (!ok) continue;
      bound[t.name] = row;
      for (const JoinPair& j : q.joins) {
        if (!bound.count(j.left.table) || !bound.count(j.right.table)) continue;
        if (j.left.table != t.name && j.right.table != t.name) continue;
        const Table& lt = db.table(j.left.table);
        const Table& rt = db.table(j.right.table);
        if (lt.at(bound[lt.name], lt.attribute_index(j.left.attribute)) !=
            rt.at(bound[rt.name], rt.attribute_index(j.right.attribute))) {
          ok = false;
          break;
        }
      }
      if (ok) total += rec(level + 1);
      bound.erase(t.name);
    }
    return total;
  };
  return rec(0);
}

/// Reconstructs the set of domain indices from factorised chunk integers.
inline std::vector<int> decode_bitmap(const std::vector<std::uint64_t>& chunks, std::size_t m, std::size_t s) {
  std::vector<int> out;
  for (std::size_t k = 0; k < m; ++k) {
    const std::uint64_t chunk = chunks[k / s];
    const std::size_t bit = s - 1 - (k % s);
    if ((chunk >> bit) & 1u) out.push_back(static_cast<int>(k));
  }
  return out;
}

/// |a - b| / max(|a|, |b|, floor): relative error with an absolute floor for
/// entries that are numerically zero.
inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of a scalar function along one coordinate.
template <typename F>
double central_difference(F&& f, double& x, double h = 1e-6) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2 * h);
}

/// ||a - b|| / max(||a||, ||b||, floor) over whole tensors.
template <typename A, typename B>
double tensor_rel_error(const A& a, const B& b, double floor = 1e-7) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

/// Central-difference gradient of `f` with respect to every entry of `x`.
template <typename F>
Matrix<double> numeric_gradient(F&& f, Matrix<double>& x, double h = 1e-6) {
  Matrix<double> g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) g.data()[i] = central_difference(f, x.data()[i], h);
  return g;
}

/// Small widths keep finite differencing over every parameter cheap.
inline ModelDims tiny_dims(int groups = 0) {
  ModelDims d;
  d.input_width = 7;
  d.relation_width = 3;
  d.selection_width = 5;
  d.join_width = 2;
  d.set_hidden = 6;
  d.mlp_hidden = 8;
  d.embedding = 5;
  d.groups = groups;
  d.discriminator_hidden = 4;
  return d;
}

/// Random inputs for either architecture. MSCN queries get 1-3 relations,
/// 0-3 selections and 0-2 joins.
inline Batch<double> random_batch(Arch arch, const ModelDims& dims, Eigen::Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto fill = [&](Eigen::Index rows, Eigen::Index cols) {
    Matrix<double> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
  };
  Batch<double> b;
  b.size = n;
  if (arch == Arch::Mlp) {
    b.features = fill(dims.input_width, n);
    return b;
  }
  auto count = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  b.relation_offsets = b.selection_offsets = b.join_offsets = {0};
  for (Eigen::Index q = 0; q < n; ++q) {
    b.relation_offsets.push_back(b.relation_offsets.back() + count(1, 3));
    b.selection_offsets.push_back(b.selection_offsets.back() + count(0, 3));
    b.join_offsets.push_back(b.join_offsets.back() + count(0, 2));
  }
  b.relations = fill(dims.relation_width, b.relation_offsets.back());
  b.selections = fill(dims.selection_width, b.selection_offsets.back());
  b.joins = fill(dims.join_width, b.join_offsets.back());
  return b;
}

inline Matrix<double> random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double lo = -1,
                                    double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

/// Analytic parameter gradients already accumulated in `model` against
/// central differences of `loss(t)`, the scalar whose gradient tensor `t`
/// (visit order) is supposed to hold. Returns the worst per-tensor relative
/// error.
template <typename Loss>
double worst_parameter_gradient_error(Model<double>& model, Loss&& loss) {
  std::vector<Matrix<double>> analytic;
  std::vector<Matrix<double>*> params;
  model.visit_all([&](Matrix<double>& p, Matrix<double>& g) {
    params.push_back(&p);
    analytic.push_back(g);
  });
  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    const Matrix<double> numeric = numeric_gradient([&] { return loss(t); }, *params[t]);
    worst = std::max(worst, tensor_rel_error(analytic[t], numeric));
  }
  return worst;
}

/// Number of tensors visited in the extractor and predictor, i.e. the index
/// of the first discriminator tensor.
inline std::size_t head_tensor_count(Model<double>& model) {
  std::size_t n = 0;
  auto count = [&](Matrix<double>&, Matrix<double>&) { ++n; };
  model.visit_extractor(count);
  model.visit_predictor(count);
  return n;
}

/// Blocking newline-delimited TCP client for 127.0.0.1.
class LineClient {
 public:
  explicit LineClient(std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (fd_ < 0 || ::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      throw std::runtime_error("cannot connect to port " + std::to_string(port));
    }
  }
  ~LineClient() {
    if (fd_ >= 0) ::close(fd_);
  }
  LineClient(const LineClient&) = delete;
  LineClient& operator=(const LineClient&) = delete;

  /// Sends one line and waits for one response line; empty when the server
  /// closed the connection.
  std::string request(const std::string& line) {
    const std::string msg = line + "\n";
    for (std::size_t sent = 0; sent < msg.size();) {
      const ssize_t n = ::send(fd_, msg.data() + sent, msg.size() - sent, MSG_NOSIGNAL);
      if (n <= 0) return {};
      sent += static_cast<std::size_t>(n);
    }
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string out = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return out;
      }
      char chunk[4096];
      const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n <= 0) return {};
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  int fd_ = -1;
  std::string buffer_;
};

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("cardood-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace cardood::testing
