#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "secretgen/image.hpp"
#include "secretgen/mask.hpp"

namespace secretgen {

struct ManifestRecord {
  std::string image_path;
  int identity_label = 0;  // 1-based
  std::string split_tag;   // pub | pri_train | pri_test (empty for raw pools)
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  int num_classes = 0;  // C of the private identity set (0 for raw pools)

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write manifest: " + path);
    for (const auto& r : records)
      os << r.image_path << ", " << r.identity_label << ", " << r.split_tag << "\n";
  }

  static DatasetManifest load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw validation_error("cannot read manifest: " + path);
    DatasetManifest m;
    std::set<int> pri_ids;
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      ManifestRecord r;
      std::string label;
      if (!std::getline(ss, r.image_path, ',') || !std::getline(ss, label, ','))
        throw validation_error("malformed manifest line: " + line);
      std::getline(ss, r.split_tag);
      auto trim = [](std::string& s) {
        auto b = s.find_first_not_of(" \t");
        auto e = s.find_last_not_of(" \t");
        s = (b == std::string::npos) ? "" : s.substr(b, e - b + 1);
      };
      trim(r.image_path);
      trim(label);
      trim(r.split_tag);
      r.identity_label = std::stoi(label);
      if (r.split_tag.rfind("pri", 0) == 0) pri_ids.insert(r.identity_label);
      m.records.push_back(std::move(r));
    }
    m.num_classes = int(pri_ids.size());
    return m;
  }

  std::vector<ManifestRecord> with_tag(const std::string& tag) const {
    std::vector<ManifestRecord> out;
    for (const auto& r : records)
      if (r.split_tag == tag) out.push_back(r);
    return out;
  }
};

struct SplitConfig {
  int num_pub_identities = 20;
  int num_pri_identities = 10;
  int pri_test_per_identity = 1;
  std::uint64_t seed = 0;
};

// Identity-disjoint pub / pri_train / pri_test partition of a raw pool.
// Records keep their original identity labels; training code maps the labels
// of a split onto contiguous class indices.
inline DatasetManifest build_splits(const DatasetManifest& pool, const SplitConfig& cfg) {
  std::map<int, std::vector<const ManifestRecord*>> by_id;
  for (const auto& r : pool.records) by_id[r.identity_label].push_back(&r);

  const int need = cfg.num_pub_identities + cfg.num_pri_identities;
  if (int(by_id.size()) < need)
    throw validation_error("build_splits: need " + std::to_string(need) +
                           " identities, pool has " + std::to_string(by_id.size()));

  std::vector<int> ids;
  for (auto& [id, v] : by_id) ids.push_back(id);
  Rng rng(cfg.seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  DatasetManifest out;
  out.num_classes = cfg.num_pri_identities;
  for (int i = 0; i < cfg.num_pub_identities; ++i)
    for (const auto* r : by_id[ids[std::size_t(i)]])
      out.records.push_back({r->image_path, r->identity_label, "pub"});

  for (int i = 0; i < cfg.num_pri_identities; ++i) {
    int id = ids[std::size_t(cfg.num_pub_identities + i)];
    auto imgs = by_id[id];
    if (int(imgs.size()) <= cfg.pri_test_per_identity)
      throw validation_error("build_splits: identity " + std::to_string(id) +
                             " has too few images for the test split");
    std::shuffle(imgs.begin(), imgs.end(), rng);
    for (std::size_t j = 0; j < imgs.size(); ++j) {
      bool test = int(j) < cfg.pri_test_per_identity;
      out.records.push_back({imgs[j]->image_path, id, test ? "pri_test" : "pri_train"});
    }
  }
  return out;
}

// ---- synthetic identity corpus ----
//
// Procedural stand-in for a face dataset: each identity has a distinctive
// center color (the "sensitive" content hidden by the masks) plus a weaker
// border appearance shared between identities of the same tint group.

struct SyntheticSpec {
  int total_identities = 30;
  int images_per_identity = 10;
  int side = 32;
  int tint_groups = 5;
  double border_cue = 0.10;   // amplitude of the group-keyed border stripes
  double id_cue = 0.04;       // amplitude of the faint identity pattern in the border
  double mark_cue = 0.04;     // amplitude of the identity-keyed border mark
  double noise_sigma = 0.03;  // per-image pixel noise
  std::uint64_t seed = 0;
};

namespace detail {

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  h = h - std::floor(h);
  double i = std::floor(h * 6.0);
  double f = h * 6.0 - i;
  double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  switch (int(i) % 6) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

}  // namespace detail

// Values in [0,1] per channel before the [-1,1] mapping.
inline ImageTensor render_synthetic(int identity, std::uint64_t image_seed,
                                    const SyntheticSpec& spec) {
  const int s = spec.side;
  ImageTensor img(s, s, 3);
  Rng rng(image_seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, spec.noise_sigma);

  const double id_hue = std::fmod(identity * 0.6180339887498949, 1.0);
  const double mark_phase = 2.0 * M_PI * std::fmod(identity * 0.7548776662466927, 1.0);
  const int group = identity % spec.tint_groups;
  const double group_hue = std::fmod(group / double(spec.tint_groups) + 0.07, 1.0);
  const double group_phase = 2.0 * M_PI * group / double(spec.tint_groups);
  const double brightness = 0.85 + 0.3 * uni(rng);
  const double phase_jitter = (uni(rng) - 0.5) * 0.5;

  double cr, cg, cb, br, bg, bb;
  detail::hsv_to_rgb(id_hue, 0.9, 0.9, cr, cg, cb);
  detail::hsv_to_rgb(group_hue, 0.45, 0.65, br, bg, bb);

  const int c0 = s / 4, c1 = s - s / 4;  // center block, matches the 0.5 center mask
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      double r, g, b;
      bool center = (y >= c0 && y < c1 && x >= c0 && x < c1);
      if (center) {
        // identity color with a mild radial falloff
        double dy = (y - s / 2.0) / s, dx = (x - s / 2.0) / s;
        double fall = 1.0 - 0.8 * (dx * dx + dy * dy);
        r = cr * fall; g = cg * fall; b = cb * fall;
      } else {
        // border carries a strong group stripe plus a fainter ripple whose
        // phase weakly tracks the identity color: an inpainting model fit on
        // public identities picks up a noisy version of the correlation, while
        // a briefly trained classifier keys on the much simpler center color
        // a third, identity-keyed mark has a phase unrelated to the center
        // color, so it reveals nothing about the hidden content per se but
        // lets a classifier trained long enough tell identities apart from
        // the border alone
        double stripe =
            spec.border_cue * std::sin(2.0 * M_PI * x / 8.0 + group_phase + phase_jitter) +
            spec.id_cue * std::sin(2.0 * M_PI * (y / 4.0 + id_hue)) +
            spec.mark_cue * std::sin(2.0 * M_PI * x / 4.0 + mark_phase);
        r = br + stripe; g = bg + stripe; b = bb + stripe;
      }
      double scale = brightness;
      img.at(0, y, x) = 2.0 * std::clamp(r * scale + gauss(rng), 0.0, 1.0) - 1.0;
      img.at(1, y, x) = 2.0 * std::clamp(g * scale + gauss(rng), 0.0, 1.0) - 1.0;
      img.at(2, y, x) = 2.0 * std::clamp(b * scale + gauss(rng), 0.0, 1.0) - 1.0;
    }
  return img;
}

// Writes PNGs plus a raw pool manifest (no split tags yet); returns the pool.
inline DatasetManifest generate_synthetic_corpus(const std::string& dir,
                                                 const SyntheticSpec& spec) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  DatasetManifest pool;
  for (int id = 0; id < spec.total_identities; ++id)
    for (int j = 0; j < spec.images_per_identity; ++j) {
      std::string name = "id" + std::to_string(id) + "_" + std::to_string(j) + ".png";
      std::string path = (fs::path(dir) / name).string();
      std::uint64_t iseed = derive_seed(spec.seed, name);
      save_image(render_synthetic(id, iseed, spec), path);
      pool.records.push_back({path, id + 1, ""});
    }
  return pool;
}

}  // namespace secretgen
