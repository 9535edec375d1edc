// Procedural scenes with exact ground-truth depth and template captions.
//
// Scenes are ray-cast per pixel. Depth is the z-distance from the camera
// plane to the nearest hit; pixels with no hit get the far plane and the
// mask is all-ones (the background is a valid far surface). Orthographic
// shading is flat albedo, which makes depth-ambiguous scene pairs render
// byte-identically; perspective shading is albedo * max(0, n.l) + 0.1.
//
// Images are quantized onto the 8-bit grid (k/255) at render time so the
// PPM round trip is bit-exact.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "textdepth/common.hpp"
#include "textdepth/io.hpp"
#include "textdepth/rng.hpp"
#include "textdepth/tensor.hpp"
#include "textdepth/vocab.hpp"

namespace textdepth {

enum class ShapeKind { kRectangle, kSphere, kFloorPlane };
enum class CameraMode { kOrthographic, kPerspective };
enum class AmbiguityTag { kNone, kLeftNear, kRightNear };

inline std::string to_string(AmbiguityTag t) {
  switch (t) {
    case AmbiguityTag::kLeftNear: return "left-near";
    case AmbiguityTag::kRightNear: return "right-near";
    default: return "none";
  }
}

inline AmbiguityTag ambiguity_tag_from_string(const std::string& s) {
  if (s == "none") return AmbiguityTag::kNone;
  if (s == "left-near") return AmbiguityTag::kLeftNear;
  if (s == "right-near") return AmbiguityTag::kRightNear;
  throw DataError("unknown ambiguity tag: " + s);
}

struct Vec3 {
  double x = 0, y = 0, z = 0;
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

struct ObjectSpec {
  ShapeKind shape = ShapeKind::kRectangle;
  Vec3 center;        // camera frame, +z away from the camera
  double size = 1.0;  // half-extent (rectangle) or radius (sphere)
  double albedo = 0.8;
  std::string label = "cube";
  friend bool operator==(const ObjectSpec&, const ObjectSpec&) = default;
};

// The orthographic camera spans [-kOrthoHalfWidth, +kOrthoHalfWidth] meters
// in x and y; +y points down, matching image rows.
inline constexpr double kOrthoHalfWidth = 4.0;
inline constexpr double kBackgroundAlbedo = 0.05;
inline constexpr double kAmbientLight = 0.1;

struct CameraSpec {
  CameraMode mode = CameraMode::kOrthographic;
  int height = 64;
  int width = 64;
  double focal = 64.0;  // pixels, perspective only
  double far_plane = 10.0;

  void validate() const {
    if (height < 8 || width < 8) throw ConfigError("camera: image size must be >= 8x8");
    if (mode == CameraMode::kPerspective && focal <= 0.0)
      throw ConfigError("camera: focal length must be positive");
    if (far_plane <= 0.0) throw ConfigError("camera: far plane must be positive");
  }

  friend bool operator==(const CameraSpec&, const CameraSpec&) = default;
};

struct SceneSpec {
  std::vector<ObjectSpec> objects;
  CameraSpec camera;
  Vec3 light_dir{0.3, -0.5, -0.8};  // perspective mode only
  AmbiguityTag ambiguity = AmbiguityTag::kNone;
  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

struct Sample {
  Tensor<float> image;    // HxWx3 in [0,1], on the 8-bit grid
  Tensor<float> depth;    // HxW meters
  Tensor<uint8_t> mask;   // HxW, all ones for rendered samples
  std::string caption;
  TokenSequence tokens;
  AmbiguityTag tag = AmbiguityTag::kNone;
};

struct GeneratorConfig {
  int min_objects = 1;
  int max_objects = 3;
  double z_min = 1.5;
  double z_max = 9.0;
  double ambiguous_fraction = 0.0;
  CameraSpec camera;
  double pair_near = 2.0;
  double pair_far = 8.0;
  double min_size = 0.8;
  double max_size = 1.6;
  double albedo_min = 0.3;
  double albedo_max = 0.95;

  void validate() const {
    camera.validate();
    if (z_min <= 0.0) throw ConfigError("generator: z_min must be positive");
    if (!(z_min < z_max)) throw ConfigError("generator: need z_min < z_max");
    if (z_max >= camera.far_plane)
      throw ConfigError("generator: z_max must stay below the far plane");
    if (min_objects < 1 || max_objects < min_objects)
      throw ConfigError("generator: empty object-count range");
    if (ambiguous_fraction < 0.0 || ambiguous_fraction > 1.0)
      throw ConfigError("generator: ambiguous_fraction must be in [0,1]");
    if (!(pair_near < pair_far))
      throw ConfigError("generator: pair near depth must be below far depth");
    if (!(min_size > 0.0 && min_size <= max_size))
      throw ConfigError("generator: invalid size range");
  }
};

struct RenderResult {
  Tensor<float> image;
  Tensor<float> depth;
  Tensor<uint8_t> mask;
};

namespace detail {

struct Hit {
  bool ok = false;
  double depth = 0.0;
  Vec3 normal{0, 0, -1};
};

inline Hit intersect_ortho(const ObjectSpec& obj, double x, double y) {
  Hit h;
  switch (obj.shape) {
    case ShapeKind::kRectangle:
      if (std::abs(x - obj.center.x) <= obj.size && std::abs(y - obj.center.y) <= obj.size) {
        h.ok = true;
        h.depth = obj.center.z;
        h.normal = {0, 0, -1};
      }
      break;
    case ShapeKind::kSphere: {
      const double dx = x - obj.center.x, dy = y - obj.center.y;
      const double d2 = dx * dx + dy * dy;
      if (d2 <= obj.size * obj.size) {
        h.ok = true;
        h.depth = obj.center.z - std::sqrt(obj.size * obj.size - d2);
        h.normal = {dx / obj.size, dy / obj.size,
                    -std::sqrt(std::max(0.0, obj.size * obj.size - d2)) / obj.size};
      }
      break;
    }
    case ShapeKind::kFloorPlane:
      break;  // a horizontal plane is edge-on to orthographic rays
  }
  return h;
}

// Perspective ray direction has dz == 1, so the parameter t is the z-depth.
inline Hit intersect_persp(const ObjectSpec& obj, double dx, double dy) {
  Hit h;
  switch (obj.shape) {
    case ShapeKind::kRectangle: {
      const double t = obj.center.z;
      const double px = dx * t, py = dy * t;
      if (std::abs(px - obj.center.x) <= obj.size && std::abs(py - obj.center.y) <= obj.size) {
        h.ok = true;
        h.depth = t;
        h.normal = {0, 0, -1};
      }
      break;
    }
    case ShapeKind::kSphere: {
      const double a = dx * dx + dy * dy + 1.0;
      const double b = -2.0 * (dx * obj.center.x + dy * obj.center.y + obj.center.z);
      const double c = obj.center.x * obj.center.x + obj.center.y * obj.center.y +
                       obj.center.z * obj.center.z - obj.size * obj.size;
      const double disc = b * b - 4.0 * a * c;
      if (disc >= 0.0) {
        const double t = (-b - std::sqrt(disc)) / (2.0 * a);
        if (t > 0.0) {
          h.ok = true;
          h.depth = t;
          h.normal = {(dx * t - obj.center.x) / obj.size, (dy * t - obj.center.y) / obj.size,
                      (t - obj.center.z) / obj.size};
        }
      }
      break;
    }
    case ShapeKind::kFloorPlane:
      if (dy > 1e-9 && obj.center.y > 0.0) {
        const double t = obj.center.y / dy;
        if (t > 0.0) {
          h.ok = true;
          h.depth = t;
          h.normal = {0, -1, 0};
        }
      }
      break;
  }
  return h;
}

inline float quantize_u8(double shade) {
  const double s = std::clamp(shade, 0.0, 1.0);
  return static_cast<float>(std::lround(255.0 * s)) / 255.0f;
}

}  // namespace detail

inline RenderResult render(const SceneSpec& scene) {
  scene.camera.validate();
  const int h = scene.camera.height, w = scene.camera.width;
  const double far = scene.camera.far_plane;
  RenderResult out;
  out.image = Tensor<float>({h, w, 3});
  out.depth = Tensor<float>({h, w});
  out.mask = Tensor<uint8_t>({h, w});
  out.mask.fill(1);

  Vec3 light = scene.light_dir;
  const double ln = std::sqrt(light.x * light.x + light.y * light.y + light.z * light.z);
  if (ln > 0) light = {light.x / ln, light.y / ln, light.z / ln};

  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double best = far;
      double shade = kBackgroundAlbedo;
      bool hit_any = false;
      for (const ObjectSpec& obj : scene.objects) {
        detail::Hit hit;
        if (scene.camera.mode == CameraMode::kOrthographic) {
          const double x = ((j + 0.5) / w * 2.0 - 1.0) * kOrthoHalfWidth;
          const double y = ((i + 0.5) / h * 2.0 - 1.0) * kOrthoHalfWidth;
          hit = detail::intersect_ortho(obj, x, y);
        } else {
          const double dx = (j + 0.5 - w / 2.0) / scene.camera.focal;
          const double dy = (i + 0.5 - h / 2.0) / scene.camera.focal;
          hit = detail::intersect_persp(obj, dx, dy);
        }
        if (!hit.ok || hit.depth <= 0.0 || hit.depth > far) continue;
        if (!hit_any || hit.depth < best) {
          hit_any = true;
          best = hit.depth;
          if (scene.camera.mode == CameraMode::kOrthographic) {
            shade = obj.albedo;
          } else {
            const double ndotl = std::max(
                0.0, hit.normal.x * light.x + hit.normal.y * light.y + hit.normal.z * light.z);
            shade = obj.albedo * ndotl + kAmbientLight;
          }
        }
      }
      out.depth.at(i, j) = static_cast<float>(best);
      const float q = detail::quantize_u8(shade);
      out.image.at(i, j, 0) = q;
      out.image.at(i, j, 1) = q;
      out.image.at(i, j, 2) = q;
    }
  }
  return out;
}

enum class DetailLevel { kBlank, kGeneric, kFull };

namespace detail {

inline std::string depth_word(double z, double z_min, double z_max) {
  const double third = (z_max - z_min) / 3.0;
  if (z < z_min + third) return "near";
  if (z < z_min + 2.0 * third) return "middle";
  return "far";
}

inline std::string position_phrase(double x) {
  if (x < -0.8) return "on the left";
  if (x > 0.8) return "on the right";
  return "in the center";
}

inline const std::string& pair_label(const SceneSpec& scene) {
  return scene.objects.front().label;
}

}  // namespace detail

// Full captions enumerate object labels with position words and near/middle/
// far depth words derived from equal thirds of [z_min, z_max]. The rng
// stream is accepted for interface uniformity; the templates are
// deterministic and consume nothing from it.
inline std::string caption_for(const SceneSpec& scene, DetailLevel level,
                               RngStream& /*rng*/,
                               double z_min = 1.5, double z_max = 9.0) {
  if (level == DetailLevel::kBlank) return "";
  if (level == DetailLevel::kGeneric) return "an image of simple shapes";
  if (scene.ambiguity == AmbiguityTag::kLeftNear) {
    const std::string& l = detail::pair_label(scene);
    return "the left " + l + " is near and the right " + l + " is far";
  }
  if (scene.ambiguity == AmbiguityTag::kRightNear) {
    const std::string& l = detail::pair_label(scene);
    return "the right " + l + " is near and the left " + l + " is far";
  }
  std::string caption;
  for (const ObjectSpec& obj : scene.objects) {
    if (!caption.empty()) caption += " and ";
    if (obj.shape == ShapeKind::kFloorPlane) {
      caption += "a " + obj.label + " at the bottom";
    } else {
      caption += "a " + obj.label + " " + detail::position_phrase(obj.center.x) + ", " +
                 detail::depth_word(obj.center.z, z_min, z_max);
    }
  }
  return caption;
}

namespace detail {

// Shared geometry of an ambiguity pair; only the depth assignment differs
// between the two tags.
struct PairLayout {
  double offset_x = 1.8;
  double size = 1.1;
  double albedo = 0.8;
};

inline SceneSpec ambiguity_scene(const PairLayout& layout, AmbiguityTag tag,
                                 const GeneratorConfig& cfg) {
  SceneSpec scene;
  scene.camera = cfg.camera;
  scene.camera.mode = CameraMode::kOrthographic;
  scene.ambiguity = tag;
  const double near_z = cfg.pair_near, far_z = cfg.pair_far;
  ObjectSpec left;
  left.shape = ShapeKind::kRectangle;
  left.label = "cube";
  left.center = {-layout.offset_x, 0.0, tag == AmbiguityTag::kLeftNear ? near_z : far_z};
  left.size = layout.size;
  left.albedo = layout.albedo;
  ObjectSpec right = left;
  right.center = {layout.offset_x, 0.0, tag == AmbiguityTag::kLeftNear ? far_z : near_z};
  scene.objects = {left, right};
  return scene;
}

inline PairLayout draw_pair_layout(RngStream& rng) {
  PairLayout layout;
  layout.offset_x = rng.uniform(1.5, 2.1);
  layout.size = rng.uniform(0.9, 1.3);
  layout.albedo = rng.uniform(0.55, 0.95);
  return layout;
}

}  // namespace detail

inline SceneSpec generate_scene(RngStream& rng, const GeneratorConfig& cfg) {
  cfg.validate();
  const bool ambiguous = rng.uniform() < cfg.ambiguous_fraction;
  if (ambiguous) {
    const auto layout = detail::draw_pair_layout(rng);
    const AmbiguityTag tag =
        rng.uniform() < 0.5 ? AmbiguityTag::kLeftNear : AmbiguityTag::kRightNear;
    return detail::ambiguity_scene(layout, tag, cfg);
  }
  SceneSpec scene;
  scene.camera = cfg.camera;
  const int span = cfg.max_objects - cfg.min_objects + 1;
  const int count = cfg.min_objects + static_cast<int>(rng.bounded(static_cast<uint64_t>(span)));
  const bool persp = scene.camera.mode == CameraMode::kPerspective;
  if (persp) {
    scene.light_dir = {rng.uniform(-0.5, 0.5), rng.uniform(-0.6, 0.0), rng.uniform(-1.0, -0.5)};
  }
  for (int k = 0; k < count; ++k) {
    ObjectSpec obj;
    const double roll = rng.uniform();
    if (persp && roll < 0.2) {
      obj.shape = ShapeKind::kFloorPlane;
      obj.label = "floor";
      obj.center = {0.0, rng.uniform(1.0, 3.0), 0.0};
      obj.size = 0.0;
      obj.albedo = rng.uniform(cfg.albedo_min, cfg.albedo_max);
      scene.objects.push_back(obj);
      continue;
    }
    const bool rect = roll < (persp ? 0.6 : 0.5);
    obj.shape = rect ? ShapeKind::kRectangle : ShapeKind::kSphere;
    obj.label = rect ? "cube" : "sphere";
    obj.size = rng.uniform(cfg.min_size, cfg.max_size);
    const double x = rng.uniform(-2.5, 2.5);
    const double y = rng.uniform(-2.5, 2.5);
    double z = rng.uniform(cfg.z_min, cfg.z_max);
    if (!rect) z = std::max(z, obj.size + 0.2);  // keep the near surface in front
    obj.center = {x, y, z};
    obj.albedo = rng.uniform(cfg.albedo_min, cfg.albedo_max);
    scene.objects.push_back(obj);
  }
  return scene;
}

inline Sample sample_from_scene(const SceneSpec& scene, RngStream& rng,
                                const GeneratorConfig& cfg,
                                const Vocabulary& vocab = Vocabulary::builtin(),
                                DetailLevel level = DetailLevel::kFull) {
  RenderResult r = render(scene);
  Sample s;
  s.image = std::move(r.image);
  s.depth = std::move(r.depth);
  s.mask = std::move(r.mask);
  s.caption = caption_for(scene, level, rng, cfg.z_min, cfg.z_max);
  s.tokens = tokenize(s.caption, vocab);
  s.tag = scene.ambiguity;
  return s;
}

// Two samples with pixel-identical images whose depths (and captions) are
// mirrored: A puts the near depth on the left rectangle, B on the right.
inline std::pair<Sample, Sample> make_ambiguous_pair(
    RngStream& rng, const GeneratorConfig& cfg,
    const Vocabulary& vocab = Vocabulary::builtin()) {
  cfg.validate();
  const auto layout = detail::draw_pair_layout(rng);
  SceneSpec scene_a = detail::ambiguity_scene(layout, AmbiguityTag::kLeftNear, cfg);
  SceneSpec scene_b = detail::ambiguity_scene(layout, AmbiguityTag::kRightNear, cfg);
  Sample a = sample_from_scene(scene_a, rng, cfg, vocab);
  Sample b = sample_from_scene(scene_b, rng, cfg, vocab);
  return {std::move(a), std::move(b)};
}

// Mirrors image/depth/mask about the vertical axis and swaps the words
// "left" and "right" in the caption. Captions rejoin with single spaces, so
// the involution property holds for generator-produced samples.
inline Sample horizontal_flip(const Sample& sample,
                              const Vocabulary& vocab = Vocabulary::builtin()) {
  Sample out;
  const int64_t h = sample.depth.dim(0), w = sample.depth.dim(1);
  out.image = Tensor<float>(sample.image.shape());
  out.depth = Tensor<float>(sample.depth.shape());
  out.mask = Tensor<uint8_t>(sample.mask.shape());
  for (int64_t i = 0; i < h; ++i) {
    for (int64_t j = 0; j < w; ++j) {
      const int64_t jj = w - 1 - j;
      out.depth.at(i, j) = sample.depth.at(i, jj);
      out.mask.at(i, j) = sample.mask.at(i, jj);
      for (int64_t c = 0; c < 3; ++c) out.image.at(i, j, c) = sample.image.at(i, jj, c);
    }
  }
  // Swap the words "left" and "right", preserving attached punctuation.
  std::string word;
  auto emit = [&out](std::string& w) {
    if (w.empty()) return;
    size_t b = 0, e = w.size();
    while (b < e && !std::isalnum(static_cast<unsigned char>(w[b]))) ++b;
    while (e > b && !std::isalnum(static_cast<unsigned char>(w[e - 1]))) --e;
    const std::string core = w.substr(b, e - b);
    if (core == "left") w = w.substr(0, b) + "right" + w.substr(e);
    else if (core == "right") w = w.substr(0, b) + "left" + w.substr(e);
    if (!out.caption.empty()) out.caption += " ";
    out.caption += w;
    w.clear();
  };
  for (char ch : sample.caption) {
    if (std::isspace(static_cast<unsigned char>(ch))) emit(word);
    else word.push_back(ch);
  }
  emit(word);
  out.tokens = tokenize(out.caption, vocab);
  if (sample.tag == AmbiguityTag::kLeftNear) out.tag = AmbiguityTag::kRightNear;
  else if (sample.tag == AmbiguityTag::kRightNear) out.tag = AmbiguityTag::kLeftNear;
  else out.tag = AmbiguityTag::kNone;
  return out;
}

// --- dataset files ---------------------------------------------------------

inline constexpr int kManifestVersion = 1;

struct ManifestEntry {
  std::string id;
  std::string image_path;
  std::string depth_path;
  std::string caption;
  AmbiguityTag tag = AmbiguityTag::kNone;
  uint64_t seed = 0;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::string vocabulary_path = "vocab.json";
  int format_version = kManifestVersion;
};

namespace detail {
inline std::string mask_path_for(const std::string& id) { return "masks/" + id + ".pdr"; }
}  // namespace detail

inline void write_dataset(const std::vector<Sample>& samples, const DatasetManifest& manifest,
                          const std::filesystem::path& dir,
                          const Vocabulary& vocab = Vocabulary::builtin()) {
  if (samples.size() != manifest.entries.size())
    throw ConfigError("write_dataset: sample count does not match manifest entries");
  std::set<std::string> ids;
  for (const auto& e : manifest.entries)
    if (!ids.insert(e.id).second) throw DataError("write_dataset: duplicate id " + e.id);
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "depth");
  fs::create_directories(dir / "masks");
  for (size_t k = 0; k < samples.size(); ++k) {
    const auto& e = manifest.entries[k];
    const auto& s = samples[k];
    write_ppm(dir / e.image_path, s.image);
    write_pdr_float(dir / e.depth_path, s.depth);
    write_pdr_u8(dir / detail::mask_path_for(e.id), s.mask);
  }
  vocab.save(dir / manifest.vocabulary_path);
  nlohmann::json j;
  j["format_version"] = manifest.format_version;
  j["vocabulary_path"] = manifest.vocabulary_path;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : manifest.entries) {
    entries.push_back({{"id", e.id},
                       {"image_path", e.image_path},
                       {"depth_path", e.depth_path},
                       {"caption", e.caption},
                       {"ambiguity_tag", to_string(e.tag)},
                       {"seed", e.seed}});
  }
  j["entries"] = std::move(entries);
  std::ofstream f(dir / "manifest.json", std::ios::trunc);
  if (!f) throw DataError("cannot write manifest in " + dir.string());
  f << j.dump(2) << "\n";
}

// Lazy accessor over a dataset directory. Tokens are recomputed on load
// from the dataset's vocabulary file.
class Dataset {
 public:
  Dataset() = default;

  static Dataset open(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    Dataset d;
    d.root_ = dir;
    const fs::path manifest_path = dir / "manifest.json";
    std::ifstream f(manifest_path);
    if (!f) throw DataError("cannot open manifest: " + manifest_path.string());
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("invalid manifest JSON: " + manifest_path.string() + ": " + e.what());
    }
    const int version = j.at("format_version").get<int>();
    if (version != kManifestVersion)
      throw DataError("manifest format-version " + std::to_string(version) +
                      " unsupported (expected " + std::to_string(kManifestVersion) + ")");
    d.manifest_.format_version = version;
    d.manifest_.vocabulary_path = j.at("vocabulary_path").get<std::string>();
    d.vocab_ = Vocabulary::load(dir / d.manifest_.vocabulary_path);
    std::set<std::string> ids;
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.id = je.at("id").get<std::string>();
      e.image_path = je.at("image_path").get<std::string>();
      e.depth_path = je.at("depth_path").get<std::string>();
      e.caption = je.at("caption").get<std::string>();
      e.tag = ambiguity_tag_from_string(je.at("ambiguity_tag").get<std::string>());
      e.seed = je.at("seed").get<uint64_t>();
      if (!ids.insert(e.id).second) throw DataError("manifest: duplicate id " + e.id);
      if (!fs::exists(dir / e.image_path))
        throw DataError("manifest references missing file: " + (dir / e.image_path).string());
      if (!fs::exists(dir / e.depth_path))
        throw DataError("manifest references missing file: " + (dir / e.depth_path).string());
      d.manifest_.entries.push_back(std::move(e));
    }
    return d;
  }

  size_t size() const { return manifest_.entries.size(); }
  const DatasetManifest& manifest() const { return manifest_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const std::filesystem::path& root() const { return root_; }

  Sample load(size_t index) const {
    const ManifestEntry& e = manifest_.entries.at(index);
    Sample s;
    s.image = read_ppm(root_ / e.image_path);
    s.depth = read_pdr_float(root_ / e.depth_path);
    const auto mask_path = root_ / detail::mask_path_for(e.id);
    if (std::filesystem::exists(mask_path)) {
      s.mask = read_pdr_u8(mask_path);
    } else {
      s.mask = Tensor<uint8_t>(s.depth.shape());
      s.mask.fill(1);
    }
    s.caption = e.caption;
    s.tokens = tokenize(s.caption, vocab_);
    s.tag = e.tag;
    return s;
  }

 private:
  std::filesystem::path root_;
  DatasetManifest manifest_;
  Vocabulary vocab_;
};

// Deterministic dataset builder: sample k draws from the stream derived as
// mix(master_seed, {kScene, k}). Ambiguity pairs occupy two consecutive
// sample slots (ids pair<k>_a / pair<k>_b) and share one stream.
inline DatasetManifest generate_dataset(const GeneratorConfig& cfg, int n_pairs, int n_scenes,
                                        uint64_t master_seed, const std::filesystem::path& dir,
                                        const Vocabulary& vocab = Vocabulary::builtin()) {
  cfg.validate();
  std::vector<Sample> samples;
  DatasetManifest manifest;
  char idbuf[32];
  auto add = [&](Sample&& s, const std::string& id, uint64_t seed) {
    ManifestEntry e;
    e.id = id;
    e.image_path = "images/" + id + ".ppm";
    e.depth_path = "depth/" + id + ".pdr";
    e.caption = s.caption;
    e.tag = s.tag;
    e.seed = seed;
    manifest.entries.push_back(std::move(e));
    samples.push_back(std::move(s));
  };
  for (int p = 0; p < n_pairs; ++p) {
    const uint64_t key = mix_key(master_seed, {rng_tag::kScene, static_cast<uint64_t>(p)});
    RngStream rng(key);
    auto [a, b] = make_ambiguous_pair(rng, cfg, vocab);
    std::snprintf(idbuf, sizeof(idbuf), "pair%05d", p);
    add(std::move(a), std::string(idbuf) + "_a", key);
    add(std::move(b), std::string(idbuf) + "_b", key);
  }
  GeneratorConfig plain = cfg;
  plain.ambiguous_fraction = 0.0;
  for (int k = 0; k < n_scenes; ++k) {
    const uint64_t key =
        mix_key(master_seed, {rng_tag::kScene, static_cast<uint64_t>(n_pairs + k)});
    RngStream rng(key);
    SceneSpec scene = generate_scene(rng, plain);
    Sample s = sample_from_scene(scene, rng, plain, vocab);
    std::snprintf(idbuf, sizeof(idbuf), "scene%05d", k);
    add(std::move(s), idbuf, key);
  }
  write_dataset(samples, manifest, dir, vocab);
  return manifest;
}

}  // namespace textdepth
