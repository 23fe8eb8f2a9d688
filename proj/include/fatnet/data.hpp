#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fatnet/checkpoint.hpp"
#include "fatnet/config.hpp"
#include "fatnet/geometry.hpp"

namespace fatnet {

// ---------------------------------------------------------------------------
// CloudFile: "FPTS0001" | u32 N | u32 D | N*D f32 | [u32 L | L u32 labels]
// ---------------------------------------------------------------------------

inline constexpr char kCloudMagic[8] = {'F', 'P', 'T', 'S', '0', '0', '0', '1'};

struct CloudFile {
  std::uint32_t n = 0;
  std::uint32_t d = 3;
  std::vector<float> values;
  std::vector<std::uint32_t> labels;  ///< empty, one class label, or n part labels
  bool has_labels = false;
};

inline std::string encode_cloud(const CloudFile& c) {
  if (c.values.size() != std::size_t(c.n) * c.d)
    throw InvalidArgument("cloud file holds " + std::to_string(c.values.size()) +
                          " values, header says " + std::to_string(c.n) + "x" +
                          std::to_string(c.d));
  std::string out(kCloudMagic, 8);
  detail::put_u32(out, c.n);
  detail::put_u32(out, c.d);
  for (float v : c.values) detail::put_f32(out, v);
  if (c.has_labels) {
    detail::put_u32(out, std::uint32_t(c.labels.size()));
    for (auto l : c.labels) detail::put_u32(out, l);
  }
  return out;
}

inline CloudFile decode_cloud(const std::string& bytes, const std::string& context = "cloud") {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCloudMagic, 8) != 0)
    throw FormatError(context + ": not a point-cloud file");
  CloudFile c;
  try {
    detail::ByteReader r(bytes, context);
    r.str(8);
    c.n = r.u32();
    c.d = r.u32();
    if (c.n == 0 || c.d == 0) throw FormatError(context + ": empty cloud");
    const std::size_t count = std::size_t(c.n) * c.d;
    if (count > r.remaining() / 4) throw FormatError(context + ": file ends inside the points");
    c.values.resize(count);
    for (auto& v : c.values) v = r.f32();
    if (r.remaining() > 0) {
      c.has_labels = true;
      const std::uint32_t l = r.u32();
      if (std::size_t(l) > r.remaining() / 4)
        throw FormatError(context + ": file ends inside the labels");
      c.labels.resize(l);
      for (auto& x : c.labels) x = r.u32();
    }
    if (r.remaining() != 0)
      throw FormatError(context + ": " + std::to_string(r.remaining()) + " trailing bytes");
  } catch (const CheckpointError& e) {
    throw FormatError(e.what());
  }
  return c;
}

inline void write_cloud_file(const std::string& path, const CloudFile& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  const std::string bytes = encode_cloud(c);
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw Error("cannot write " + path);
}

inline CloudFile read_cloud_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return decode_cloud(std::string(std::istreambuf_iterator<char>(in), {}), path);
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct Sample {
  PointCloud cloud;
  std::size_t label = 0;                  ///< class (classification)
  std::vector<std::size_t> point_labels;  ///< per-point part ids (segmentation)
};

struct Dataset {
  Task task = Task::kClassify;
  std::vector<std::string> class_names;  ///< classes, or categories when segmenting
  std::vector<std::vector<std::size_t>> category_parts;
  std::size_t num_labels = 0;  ///< c classes or r parts
  std::vector<Sample> train, test;

  /// Category whose part set contains the sample's labels.
  std::size_t category_of(const Sample& s) const {
    for (std::size_t c = 0; c < category_parts.size(); ++c) {
      const auto& parts = category_parts[c];
      if (std::all_of(s.point_labels.begin(), s.point_labels.end(), [&](std::size_t l) {
            return std::find(parts.begin(), parts.end(), l) != parts.end();
          }))
        return c;
    }
    throw InvalidArgument("sample labels do not fit any category");
  }
};

inline CloudFile to_cloud_file(const Sample& s, Task task) {
  CloudFile c;
  c.n = std::uint32_t(s.cloud.size());
  c.values = s.cloud.xyz;
  c.has_labels = true;
  if (task == Task::kClassify) c.labels = {std::uint32_t(s.label)};
  else for (auto l : s.point_labels) c.labels.push_back(std::uint32_t(l));
  return c;
}

inline Sample from_cloud_file(const CloudFile& c, Task task, const std::string& context) {
  if (c.d != 3) throw FormatError(context + ": expected 3 coordinates per point");
  Sample s;
  s.cloud.xyz = c.values;
  s.cloud.validate();
  if (!c.has_labels) throw FormatError(context + ": unlabeled cloud in a dataset");
  if (task == Task::kClassify) {
    if (c.labels.size() != 1) throw FormatError(context + ": expected one class label");
    s.label = c.labels[0];
  } else {
    if (c.labels.size() != c.n) throw FormatError(context + ": expected one label per point");
    s.point_labels.assign(c.labels.begin(), c.labels.end());
  }
  return s;
}

/**
 * Dataset directory: meta.txt plus train/ and test/ folders of .fpts
 * files read in file-name order. meta.txt holds
 *   task = classify | segment
 *   classes = name,name,...            (classification)
 *   category.<name> = part,part,...    (segmentation, one line each)
 */
inline void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "train");
  fs::create_directories(fs::path(dir) / "test");
  std::ofstream meta(fs::path(dir) / "meta.txt");
  meta << "task = " << (ds.task == Task::kClassify ? "classify" : "segment") << "\n";
  if (ds.task == Task::kClassify) {
    meta << "classes = ";
    for (std::size_t i = 0; i < ds.class_names.size(); ++i)
      meta << (i ? "," : "") << ds.class_names[i];
    meta << "\n";
  } else {
    for (std::size_t c = 0; c < ds.class_names.size(); ++c)
      meta << "category." << ds.class_names[c] << " = "
           << detail::join_list(ds.category_parts[c]) << "\n";
  }
  if (!meta) throw Error("cannot write " + dir + "/meta.txt");
  for (const auto* split : {&ds.train, &ds.test}) {
    const std::string name = split == &ds.train ? "train" : "test";
    for (std::size_t i = 0; i < split->size(); ++i) {
      std::ostringstream file;
      file << std::setw(6) << std::setfill('0') << i << ".fpts";
      write_cloud_file((fs::path(dir) / name / file.str()).string(),
                       to_cloud_file((*split)[i], ds.task));
    }
  }
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  Dataset ds;
  const std::string meta_path = (fs::path(dir) / "meta.txt").string();
  for (const auto& e : parse_config_text(read_text_file(meta_path))) {
    if (e.key == "task") {
      if (e.value == "classify") ds.task = Task::kClassify;
      else if (e.value == "segment") ds.task = Task::kSegment;
      else throw ParseError(e.line, meta_path + ": unknown task " + e.value);
    } else if (e.key == "classes") {
      std::stringstream ss(e.value);
      std::string item;
      while (std::getline(ss, item, ',')) ds.class_names.push_back(detail::trim(item));
    } else if (e.key.rfind("category.", 0) == 0) {
      ds.class_names.push_back(e.key.substr(9));
      ds.category_parts.push_back(detail::parse_list(e));
    } else {
      throw ParseError(e.line, meta_path + ": unknown key " + e.key);
    }
  }
  if (ds.task == Task::kClassify) {
    ds.num_labels = ds.class_names.size();
  } else {
    std::set<std::size_t> all;
    for (const auto& p : ds.category_parts) all.insert(p.begin(), p.end());
    ds.num_labels = all.empty() ? 0 : *all.rbegin() + 1;
  }
  if (ds.num_labels < 2) throw FormatError(meta_path + ": need at least two labels");

  for (auto* split : {&ds.train, &ds.test}) {
    const fs::path sub = fs::path(dir) / (split == &ds.train ? "train" : "test");
    if (!fs::exists(sub)) continue;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(sub))
      if (entry.path().extension() == ".fpts") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      Sample s = from_cloud_file(read_cloud_file(f.string()), ds.task, f.string());
      const bool ok = ds.task == Task::kClassify
                          ? s.label < ds.num_labels
                          : std::all_of(s.point_labels.begin(), s.point_labels.end(),
                                        [&](std::size_t l) { return l < ds.num_labels; });
      if (!ok) throw FormatError(f.string() + ": label out of range");
      split->push_back(std::move(s));
    }
  }
  if (ds.train.empty() && ds.test.empty()) throw FormatError(dir + ": dataset has no clouds");
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic shapes
// ---------------------------------------------------------------------------

enum class ShapeKind { kSphere, kCube, kCylinder, kCone, kTorus };

inline const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> names{"sphere", "cube", "cylinder", "cone", "torus"};
  return names;
}

inline ShapeKind parse_shape(const std::string& s) {
  const auto& names = shape_names();
  auto it = std::find(names.begin(), names.end(), s);
  if (it == names.end()) throw InvalidArgument("unknown shape '" + s + "'");
  return ShapeKind(it - names.begin());
}

namespace detail {

struct Surface {
  std::mt19937_64& rng;
  std::uniform_real_distribution<double> unit{0.0, 1.0};

  double u() { return unit(rng); }
  double angle() { return 2.0 * std::numbers::pi * u(); }

  std::array<double, 3> sphere(double r) {
    std::normal_distribution<double> g(0.0, 1.0);
    double x, y, z, n;
    do {
      x = g(rng), y = g(rng), z = g(rng);
      n = std::sqrt(x * x + y * y + z * z);
    } while (n < 1e-12);
    return {r * x / n, r * y / n, r * z / n};
  }

  /// Uniform point on a disk of radius r in the plane orthogonal to y.
  std::array<double, 2> disk(double r) {
    const double rad = r * std::sqrt(u()), t = angle();
    return {rad * std::cos(t), rad * std::sin(t)};
  }
};

}  // namespace detail

/**
 * One point uniformly distributed over the surface of a canonical shape:
 * unit sphere, cube [-1,1]^3, cylinder and cone of radius 1 and height 2
 * along y (cone apex at y = 1), torus with radii 1 and 0.35 around y.
 */
inline std::array<double, 3> sample_shape_point(ShapeKind kind, std::mt19937_64& rng) {
  detail::Surface s{rng};
  constexpr double pi = std::numbers::pi;
  switch (kind) {
    case ShapeKind::kSphere:
      return s.sphere(1.0);
    case ShapeKind::kCube: {
      const int face = std::min(5, int(s.u() * 6));
      const double a = 2 * s.u() - 1, b = 2 * s.u() - 1, sign = face % 2 ? 1.0 : -1.0;
      if (face / 2 == 0) return {sign, a, b};
      if (face / 2 == 1) return {a, sign, b};
      return {a, b, sign};
    }
    case ShapeKind::kCylinder: {
      // Lateral area 4 pi, caps 2 pi together.
      if (s.u() < 2.0 / 3.0) {
        const double t = s.angle();
        return {std::cos(t), 2 * s.u() - 1, std::sin(t)};
      }
      const auto d = s.disk(1.0);
      return {d[0], s.u() < 0.5 ? -1.0 : 1.0, d[1]};
    }
    case ShapeKind::kCone: {
      // Lateral area pi*sqrt(5), base pi.
      const double lateral = std::sqrt(5.0) / (std::sqrt(5.0) + 1.0);
      if (s.u() < lateral) {
        const double t = std::sqrt(s.u()), a = s.angle();  // distance from apex
        return {t * std::cos(a), 1.0 - 2.0 * t, t * std::sin(a)};
      }
      const auto d = s.disk(1.0);
      return {d[0], -1.0, d[1]};
    }
    case ShapeKind::kTorus: {
      constexpr double big = 1.0, small = 0.35;
      double theta, phi;
      do {
        theta = 2 * pi * s.u();
        phi = 2 * pi * s.u();
      } while (s.u() * (big + small) > big + small * std::cos(theta));
      const double ring = big + small * std::cos(theta);
      return {ring * std::cos(phi), small * std::sin(theta), ring * std::sin(phi)};
    }
  }
  return {0, 0, 0};
}

struct SyntheticSpec {
  std::vector<std::string> classes{"sphere", "cube", "cylinder", "cone"};
  std::size_t train_per_class = 50;
  std::size_t test_per_class = 20;
  std::size_t points = 64;
  double scale_low = 0.75;   ///< per-axis stretch applied before the pose
  double scale_high = 1.25;
  bool random_pose = true;   ///< rotation about the up axis
  std::uint64_t seed = 1;

  void validate() const {
    if (classes.size() < 2) throw InvalidArgument("synthetic data needs at least 2 classes");
    for (const auto& c : classes) parse_shape(c);
    if (points < 1) throw InvalidArgument("synthetic clouds need at least one point");
    if (!(scale_low > 0 && scale_low <= scale_high))
      throw InvalidArgument("bad synthetic scale range");
  }
};

namespace detail {

inline PointCloud pose_and_normalize(std::vector<std::array<double, 3>> pts,
                                     std::mt19937_64& rng, double lo, double hi, bool rotate) {
  std::uniform_real_distribution<double> stretch(lo, hi), turn(0.0, 2 * std::numbers::pi);
  const double sx = stretch(rng), sy = stretch(rng), sz = stretch(rng);
  const double t = rotate ? turn(rng) : 0.0, c = std::cos(t), s = std::sin(t);
  PointCloud pc;
  for (auto& p : pts) {
    const double x = p[0] * sx, y = p[1] * sy, z = p[2] * sz;
    pc.push(c * x + s * z, y, -s * x + c * z);
  }
  return normalize_unit_sphere(pc);
}

}  // namespace detail

/// Balanced labelled clouds, deterministic in the spec's seed.
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.task = Task::kClassify;
  ds.class_names = spec.classes;
  ds.num_labels = spec.classes.size();
  for (auto* split : {&ds.train, &ds.test}) {
    const bool train = split == &ds.train;
    const std::size_t per = train ? spec.train_per_class : spec.test_per_class;
    for (std::size_t i = 0; i < per; ++i) {
      for (std::size_t c = 0; c < spec.classes.size(); ++c) {
        const ShapeKind kind = parse_shape(spec.classes[c]);
        Rng rng = substream(spec.seed, (train ? "synth:train:" : "synth:test:") + spec.classes[c],
                            i);
        std::vector<std::array<double, 3>> pts(spec.points);
        for (auto& p : pts) p = sample_shape_point(kind, rng);
        Sample s;
        s.cloud = detail::pose_and_normalize(std::move(pts), rng, spec.scale_low,
                                             spec.scale_high, spec.random_pose);
        s.label = c;
        split->push_back(std::move(s));
      }
    }
  }
  return ds;
}

struct SegSyntheticSpec {
  std::size_t train_per_category = 40;
  std::size_t test_per_category = 10;
  std::size_t points = 128;
  std::uint64_t seed = 1;
};

namespace detail {

/// Splits n points across parts by area, giving every part at least one.
inline std::vector<std::size_t> allocate_points(std::size_t n, const std::vector<double>& areas) {
  const double total = std::accumulate(areas.begin(), areas.end(), 0.0);
  std::vector<std::size_t> counts(areas.size(), 1);
  std::size_t used = areas.size();
  for (std::size_t i = 0; i < areas.size() && used < n; ++i) {
    const std::size_t extra = std::min(
        n - used, std::size_t(std::floor(double(n - areas.size()) * areas[i] / total)));
    counts[i] += extra;
    used += extra;
  }
  counts[std::max_element(areas.begin(), areas.end()) - areas.begin()] += n - used;
  return counts;
}

}  // namespace detail

/**
 * Two-part shape families with globally unique part ids:
 * barbell = balls (0) + bar (1); arrow = shaft (2) + head (3).
 */
inline Dataset generate_seg_synthetic(const SegSyntheticSpec& spec) {
  if (spec.points < 2) throw InvalidArgument("segmentation clouds need at least 2 points");
  constexpr double pi = std::numbers::pi;
  Dataset ds;
  ds.task = Task::kSegment;
  ds.class_names = {"barbell", "arrow"};
  ds.category_parts = {{0, 1}, {2, 3}};
  ds.num_labels = 4;
  for (auto* split : {&ds.train, &ds.test}) {
    const bool train = split == &ds.train;
    const std::size_t per = train ? spec.train_per_category : spec.test_per_category;
    for (std::size_t i = 0; i < per; ++i) {
      for (std::size_t cat = 0; cat < 2; ++cat) {
        Rng rng = substream(spec.seed, (train ? "seg:train:" : "seg:test:") + ds.class_names[cat], i);
        detail::Surface s{rng};
        std::uniform_real_distribution<double> vary(0.85, 1.15);
        std::vector<std::array<double, 3>> pts;
        Sample sample;
        auto tube = [&](double r, double x0, double x1) -> std::array<double, 3> {
          const double t = s.angle();
          return {x0 + (x1 - x0) * s.u(), r * std::cos(t), r * std::sin(t)};
        };
        if (cat == 0) {
          const double ball = 0.35 * vary(rng), bar = 0.1 * vary(rng), centre = 0.8;
          const double reach = centre - std::sqrt(ball * ball - bar * bar);
          auto counts = detail::allocate_points(
              spec.points, {2 * 4 * pi * ball * ball, 2 * pi * bar * 2 * reach});
          for (std::size_t k = 0; k < counts[0]; ++k) {
            auto p = s.sphere(ball);
            p[0] += (k % 2 ? centre : -centre);
            pts.push_back(p);
            sample.point_labels.push_back(0);
          }
          for (std::size_t k = 0; k < counts[1]; ++k) {
            pts.push_back(tube(bar, -reach, reach));
            sample.point_labels.push_back(1);
          }
        } else {
          const double shaft = 0.08 * vary(rng), head = 0.3 * vary(rng), len = 0.6 * vary(rng);
          const double slant = std::sqrt(head * head + len * len);
          auto counts = detail::allocate_points(
              spec.points, {2 * pi * shaft * 1.4, pi * head * slant + pi * head * head});
          for (std::size_t k = 0; k < counts[0]; ++k) {
            pts.push_back(tube(shaft, -1.0, 0.4));
            sample.point_labels.push_back(2);
          }
          const double lateral = slant / (slant + head);
          for (std::size_t k = 0; k < counts[1]; ++k) {
            const double a = s.angle();
            if (s.u() < lateral) {
              const double t = std::sqrt(s.u());
              pts.push_back({0.4 + len * (1 - t), head * t * std::cos(a), head * t * std::sin(a)});
            } else {
              const auto d = s.disk(head);
              pts.push_back({0.4, d[0], d[1]});
            }
            sample.point_labels.push_back(3);
          }
        }
        // Shuffle so labels carry no positional pattern.
        std::vector<std::size_t> order(pts.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<std::array<double, 3>> shuffled;
        std::vector<std::size_t> labels;
        for (std::size_t o : order) {
          shuffled.push_back(pts[o]);
          labels.push_back(sample.point_labels[o]);
        }
        sample.point_labels = std::move(labels);
        sample.cloud = detail::pose_and_normalize(std::move(shuffled), rng, 0.9, 1.1, true);
        split->push_back(std::move(sample));
      }
    }
  }
  return ds;
}

/// OFF mesh -> normalized cloud of n surface samples.
inline PointCloud cloud_from_off(const std::string& off_text, std::size_t n, std::uint64_t seed) {
  return normalize_unit_sphere(sample_surface(parse_off(off_text), n, seed));
}

}  // namespace fatnet
