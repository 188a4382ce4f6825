#pragma once

#include <functional>

#include "secretgen/image.hpp"

namespace secretgen {

// Deterministic, shape-preserving image transforms used by the
// discrimination metric.
struct TransformList {
  std::string family;  // cutout | hflip | grayscale | color_jitter | none
  std::vector<std::function<ImageTensor(const ImageTensor&)>> transforms;

  std::size_t size() const { return transforms.size(); }
};

// m = (side/patch)^2 cutouts; t_j zeroes the j-th patch in row-major order.
inline TransformList sequential_cutout(int side, int patch) {
  if (patch <= 0 || side % patch != 0)
    throw validation_error("sequential_cutout: image side must be divisible by patch side");
  const int per_row = side / patch;
  TransformList list;
  list.family = "cutout";
  for (int j = 0; j < per_row * per_row; ++j) {
    const int py = (j / per_row) * patch, px = (j % per_row) * patch;
    list.transforms.push_back([py, px, patch](const ImageTensor& img) {
      ImageTensor out = img;
      for (int c = 0; c < img.channels; ++c)
        for (int y = py; y < py + patch; ++y)
          for (int x = px; x < px + patch; ++x) out.at(c, y, x) = 0.0;
      return out;
    });
  }
  return list;
}

struct ColorJitterParams {
  double brightness = 1.5, contrast = 1.5, saturation = 1.5;
};

inline TransformList ablation_family(const std::string& tag,
                                     const ColorJitterParams& jitter = {}) {
  TransformList list;
  list.family = tag;
  if (tag == "none") return list;
  if (tag == "hflip") {
    list.transforms.push_back([](const ImageTensor& img) {
      ImageTensor out = img;
      for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
          for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
      return out;
    });
    return list;
  }
  if (tag == "grayscale") {
    list.transforms.push_back([](const ImageTensor& img) {
      ImageTensor out = img;
      if (img.channels != 3) return out;
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
          double m = (img.at(0, y, x) + img.at(1, y, x) + img.at(2, y, x)) / 3.0;
          out.at(0, y, x) = out.at(1, y, x) = out.at(2, y, x) = m;
        }
      return out;
    });
    return list;
  }
  if (tag == "color_jitter") {
    list.transforms.push_back([jitter](const ImageTensor& img) {
      // deterministic brightness/contrast/saturation scaling in [0,1] space
      ImageTensor out = img;
      auto to01 = [](double v) { return (v + 1.0) * 0.5; };
      auto from01 = [](double v) { return std::clamp(v, 0.0, 1.0) * 2.0 - 1.0; };
      double mean = 0.0;
      for (Eigen::Index i = 0; i < img.values.size(); ++i) mean += to01(img.values[i]);
      mean /= double(img.values.size());
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
          double px[3];
          for (int c = 0; c < img.channels; ++c) px[c] = to01(img.at(c, y, x));
          double gray = 0.0;
          for (int c = 0; c < img.channels; ++c) gray += px[c];
          gray /= img.channels;
          for (int c = 0; c < img.channels; ++c) {
            double v = px[c] * jitter.brightness;
            v = mean + (v - mean) * jitter.contrast;
            v = gray + (v - gray) * jitter.saturation;
            out.at(c, y, x) = from01(v);
          }
        }
      return out;
    });
    return list;
  }
  throw validation_error("ablation_family: unknown tag " + tag);
}

}  // namespace secretgen
