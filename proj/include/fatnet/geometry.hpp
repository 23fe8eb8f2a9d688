#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fatnet/error.hpp"
#include "fatnet/random.hpp"
#include "fatnet/tensor.hpp"

namespace fatnet {

using Vec3 = std::array<double, 3>;

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::size_t, 3>> faces;
};

/// N x 3 coordinates, stored flat as x0 y0 z0 x1 ...
struct PointCloud {
  std::vector<float> xyz;

  std::size_t size() const noexcept { return xyz.size() / 3; }
  std::array<float, 3> point(std::size_t i) const {
    return {xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]};
  }
  void push(double x, double y, double z) {
    xyz.push_back(float(x));
    xyz.push_back(float(y));
    xyz.push_back(float(z));
  }

  /// Throws unless the cloud is non-empty with finite coordinates.
  void validate() const {
    if (xyz.empty() || xyz.size() % 3 != 0)
      throw InvalidArgument("point cloud must hold at least one 3D point");
    for (float v : xyz)
      if (!std::isfinite(v))
        throw InvalidArgument("point cloud has a non-finite coordinate");
  }

  template <typename T>
  Tensor<T> to_tensor() const {
    return Tensor<T>({size(), 3}, std::vector<T>(xyz.begin(), xyz.end()));
  }
};

/// Row i lists the k nearest neighbors of point i (self excluded).
struct NeighborIndex {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<std::size_t> indices;

  std::span<const std::size_t> row(std::size_t i) const {
    return std::span<const std::size_t>(indices).subspan(i * k, k);
  }
};

// ---------------------------------------------------------------------------
// OFF ingestion
// ---------------------------------------------------------------------------

namespace detail {

/// Whitespace tokens with the line each came from; '#' starts a comment.
struct OffTokens {
  std::vector<std::pair<std::string, std::size_t>> tokens;
  std::size_t pos = 0;
  std::size_t last_line = 1;

  explicit OffTokens(std::string_view text) {
    std::size_t line = 1;
    std::string cur;
    bool comment = false;
    auto flush = [&] {
      if (!cur.empty()) tokens.emplace_back(std::move(cur), line), cur.clear();
    };
    for (char ch : text) {
      if (ch == '\n') {
        flush();
        comment = false;
        ++line;
      } else if (comment) {
        continue;
      } else if (ch == '#') {
        flush();
        comment = true;
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        flush();
      } else {
        cur.push_back(ch);
      }
    }
    flush();
    last_line = line;
  }

  bool done() const { return pos >= tokens.size(); }
  std::size_t line() const {
    return done() ? last_line : tokens[pos].second;
  }

  const std::string& next(const char* what) {
    if (done()) throw ParseError(last_line, std::string("truncated file, expected ") + what);
    return tokens[pos++].first;
  }

  double number(const char* what) {
    const std::size_t ln = line();
    const std::string& tok = next(what);
    std::istringstream is(tok);
    double v;
    if (!(is >> v) || !is.eof()) throw ParseError(ln, std::string("bad ") + what + " '" + tok + "'");
    return v;
  }

  std::size_t count(const char* what) {
    const std::size_t ln = line();
    const std::string& tok = next(what);
    return parse_count(tok, ln, what);
  }

  static std::size_t parse_count(const std::string& tok, std::size_t ln,
                                 const char* what) {
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) {
          return std::isdigit(static_cast<unsigned char>(c));
        }))
      throw ParseError(ln, std::string("bad ") + what + " '" + tok + "'");
    return std::stoull(tok);
  }
};

}  // namespace detail

/**
 * Parses an OFF mesh. Accepts the header fused with the vertex count
 * ("OFF490 518 0") as found in ModelNet. Polygons with more than three
 * vertices are fan-triangulated around their first vertex.
 */
inline TriangleMesh parse_off(std::string_view text) {
  detail::OffTokens tk(text);
  if (tk.done()) throw ParseError(1, "empty input, expected OFF header");
  const std::size_t header_line = tk.line();
  const std::string head = tk.next("OFF header");
  if (head.rfind("OFF", 0) != 0)
    throw ParseError(header_line, "missing OFF header");

  std::size_t nv;
  if (head.size() > 3) {
    nv = detail::OffTokens::parse_count(head.substr(3), header_line,
                                        "vertex count");
  } else {
    nv = tk.count("vertex count");
  }
  const std::size_t nf = tk.count("face count");
  tk.count("edge count");

  TriangleMesh mesh;
  mesh.vertices.reserve(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    Vec3 v{};
    const std::size_t ln = tk.line();
    for (auto& c : v) c = tk.number("vertex coordinate");
    if (!std::isfinite(v[0]) || !std::isfinite(v[1]) || !std::isfinite(v[2]))
      throw ParseError(ln, "non-finite vertex coordinate");
    mesh.vertices.push_back(v);
  }
  for (std::size_t f = 0; f < nf; ++f) {
    const std::size_t ln = tk.line();
    const std::size_t arity = tk.count("face arity");
    if (arity < 3) throw ParseError(ln, "face with fewer than 3 vertices");
    std::vector<std::size_t> idx(arity);
    for (auto& i : idx) {
      i = tk.count("face index");
      if (i >= nv)
        throw ParseError(ln, "face index " + std::to_string(i) +
                                 " out of range for " + std::to_string(nv) +
                                 " vertices");
    }
    // Anything after the indices on the face line (colors) is ignored.
    while (!tk.done() && tk.line() == ln) tk.next("face attribute");
    for (std::size_t j = 1; j + 1 < arity; ++j)
      mesh.faces.push_back({idx[0], idx[j], idx[j + 1]});
  }
  return mesh;
}

// ---------------------------------------------------------------------------
// Sampling and normalization
// ---------------------------------------------------------------------------

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 u{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const Vec3 v{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
  const Vec3 x{u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2],
               u[0] * v[1] - u[1] * v[0]};
  return 0.5 * std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
}

/**
 * n points uniformly distributed over the mesh surface: a face is picked
 * with probability proportional to its area, then a uniform barycentric
 * point inside it. Zero-area faces never receive samples.
 */
inline PointCloud sample_surface(const TriangleMesh& mesh, std::size_t n,
                                 std::uint64_t seed) {
  std::vector<double> cumulative;
  std::vector<std::size_t> face_ids;
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& [a, b, c] = mesh.faces[f];
    const double area =
        triangle_area(mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
    if (!(area > 0.0) || !std::isfinite(area)) continue;
    total += area;
    cumulative.push_back(total);
    face_ids.push_back(f);
  }
  if (face_ids.empty())
    throw InvalidArgument("mesh has no face with nonzero area");

  Rng rng = substream(seed, "sample_surface");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PointCloud pc;
  pc.xyz.reserve(3 * n);
  for (std::size_t s = 0; s < n; ++s) {
    const double pick = unit(rng) * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    if (it == cumulative.end()) --it;
    const auto& face = mesh.faces[face_ids[it - cumulative.begin()]];
    double r1 = unit(rng), r2 = unit(rng);
    if (r1 + r2 > 1.0) {
      r1 = 1.0 - r1;
      r2 = 1.0 - r2;
    }
    const Vec3& a = mesh.vertices[face[0]];
    const Vec3& b = mesh.vertices[face[1]];
    const Vec3& c = mesh.vertices[face[2]];
    pc.push(a[0] + r1 * (b[0] - a[0]) + r2 * (c[0] - a[0]),
            a[1] + r1 * (b[1] - a[1]) + r2 * (c[1] - a[1]),
            a[2] + r1 * (b[2] - a[2]) + r2 * (c[2] - a[2]));
  }
  return pc;
}

/// Centers on the centroid and scales the farthest point to unit norm.
inline PointCloud normalize_unit_sphere(const PointCloud& pc) {
  pc.validate();
  const std::size_t n = pc.size();
  double c[3] = {0, 0, 0};
  for (std::size_t i = 0; i < n; ++i)
    for (int d = 0; d < 3; ++d) c[d] += pc.xyz[3 * i + d];
  for (double& v : c) v /= double(n);
  std::vector<double> centered(3 * n);
  double max_norm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int d = 0; d < 3; ++d) {
      centered[3 * i + d] = pc.xyz[3 * i + d] - c[d];
      s += centered[3 * i + d] * centered[3 * i + d];
    }
    max_norm = std::max(max_norm, std::sqrt(s));
  }
  const double inv = max_norm > 0.0 ? 1.0 / max_norm : 1.0;
  PointCloud out;
  out.xyz.resize(3 * n);
  for (std::size_t i = 0; i < 3 * n; ++i) out.xyz[i] = float(centered[i] * inv);
  return out;
}

struct AugmentOptions {
  bool rotate = true;
  bool scale = true;
  bool jitter = true;
  double scale_low = 0.8;
  double scale_high = 1.25;
  double jitter_sigma = 0.01;
  double jitter_clip = 0.05;
};

/**
 * Training-time perturbation: random rotation about the up (y) axis,
 * uniform global scale, then clipped Gaussian per-coordinate jitter.
 */
inline PointCloud augment(const PointCloud& pc, std::uint64_t seed,
                          const AugmentOptions& opt = {}) {
  Rng rng = substream(seed, "augment");
  std::uniform_real_distribution<double> angle_dist(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> scale_dist(opt.scale_low, opt.scale_high);
  std::normal_distribution<double> noise(0.0, opt.jitter_sigma);

  const double theta = opt.rotate ? angle_dist(rng) : 0.0;
  const double s = opt.scale ? scale_dist(rng) : 1.0;
  const double cs = std::cos(theta), sn = std::sin(theta);

  PointCloud out;
  out.xyz.resize(pc.xyz.size());
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const double x = pc.xyz[3 * i], y = pc.xyz[3 * i + 1], z = pc.xyz[3 * i + 2];
    double p[3] = {cs * x + sn * z, y, -sn * x + cs * z};
    for (double& v : p) {
      v *= s;
      if (opt.jitter)
        v += std::clamp(noise(rng), -opt.jitter_clip, opt.jitter_clip);
    }
    for (int d = 0; d < 3; ++d) out.xyz[3 * i + d] = float(p[d]);
  }
  return out;
}

/// keep points chosen uniformly without replacement, in shuffled order.
inline PointCloud random_dropout(const PointCloud& pc, std::size_t keep,
                                 std::uint64_t seed) {
  const std::size_t n = pc.size();
  if (keep < 1 || keep > n) {
    throw InvalidArgument("dropout keep count " + std::to_string(keep) +
                          " outside [1, " + std::to_string(n) + "]");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = substream(seed, "dropout");
  std::shuffle(order.begin(), order.end(), rng);
  PointCloud out;
  out.xyz.reserve(3 * keep);
  for (std::size_t i = 0; i < keep; ++i)
    for (int d = 0; d < 3; ++d) out.xyz.push_back(pc.xyz[3 * order[i] + d]);
  return out;
}

// ---------------------------------------------------------------------------
// Neighborhood graph
// ---------------------------------------------------------------------------

/**
 * Brute-force kNN over n rows of width d starting at `data`. Squared
 * distances are accumulated in double in coordinate order; ties go to the
 * lower index. Indices are local to the block.
 */
template <typename T>
void knn_block(const T* data, std::size_t n, std::size_t d, std::size_t k,
               std::size_t* out) {
  if (k >= n) {
    throw InvalidArgument("knn needs k < N, got k=" + std::to_string(k) +
                          " N=" + std::to_string(n));
  }
  std::vector<std::pair<double, std::size_t>> cand(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = data + i * d;
    std::size_t c = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const T* xj = data + j * d;
      double s = 0.0;
      for (std::size_t q = 0; q < d; ++q) {
        const double diff = double(xj[q]) - double(xi[q]);
        s += diff * diff;
      }
      cand[c++] = {s, j};
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    for (std::size_t q = 0; q < k; ++q) out[i * k + q] = cand[q].second;
  }
}

template <typename T>
NeighborIndex knn_graph(const Tensor<T>& features, std::size_t k) {
  if (features.rank() != 2)
    throw DimensionError("knn_graph expects N x D features, got " +
                         shape_string(features.shape()));
  for (T v : features.data())
    if (!std::isfinite(v)) throw InvalidArgument("knn_graph: non-finite feature");
  NeighborIndex idx{features.rows(), k, {}};
  idx.indices.resize(idx.n * k);
  knn_block(features.raw(), idx.n, features.cols(), k, idx.indices.data());
  return idx;
}

inline NeighborIndex knn_graph(const PointCloud& pc, std::size_t k) {
  return knn_graph(pc.to_tensor<float>(), k);
}

/// diffs[i][j] = features[nbrs[i][j]] - features[i], shape N x K x D.
template <typename T>
Tensor<T> edge_features(const Tensor<T>& features, const NeighborIndex& nbrs) {
  if (features.rank() != 2 || features.rows() != nbrs.n)
    throw DimensionError("edge_features: features " +
                         shape_string(features.shape()) +
                         " do not match neighbor index of " +
                         std::to_string(nbrs.n) + " points");
  const std::size_t n = nbrs.n, k = nbrs.k, d = features.cols();
  Tensor<T> out({n, k, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t nb = nbrs.indices[i * k + j];
      if (nb >= n) throw InvalidArgument("neighbor index out of range");
      for (std::size_t c = 0; c < d; ++c)
        out[(i * k + j) * d + c] = features.at(nb, c) - features.at(i, c);
    }
  return out;
}

}  // namespace fatnet
