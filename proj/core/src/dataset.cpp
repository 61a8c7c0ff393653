#include "asfp/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "asfp/random.hpp"

namespace asfp {

const std::array<float, 3> kCifarMean = {0.4914f, 0.4822f, 0.4465f};
const std::array<float, 3> kCifarStd = {0.2470f, 0.2435f, 0.2616f};

namespace {

constexpr int kCifarDim = 32;
constexpr std::size_t kRecordBytes = 1 + 3 * kCifarDim * kCifarDim;

void append_cifar_file(const std::string& path, std::vector<float>& pixels,
                       std::vector<int>& labels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("cifar10: cannot open " + path);
  in.seekg(0, std::ios::end);
  const std::int64_t size = in.tellg();
  in.seekg(0, std::ios::beg);
  if (size <= 0 || size % static_cast<std::int64_t>(kRecordBytes) != 0)
    throw format_error("cifar10: " + path + " has " + std::to_string(size) +
                       " bytes, not a multiple of " + std::to_string(kRecordBytes));
  const std::int64_t records = size / static_cast<std::int64_t>(kRecordBytes);
  std::vector<unsigned char> record(kRecordBytes);
  for (std::int64_t r = 0; r < records; ++r) {
    in.read(reinterpret_cast<char*>(record.data()), static_cast<std::streamsize>(kRecordBytes));
    if (!in) throw format_error("cifar10: short read in " + path);
    if (record[0] > 9)
      throw format_error("cifar10: label byte " + std::to_string(record[0]) +
                         " > 9 in record " + std::to_string(r) + " of " + path);
    labels.push_back(static_cast<int>(record[0]));
    for (int c = 0; c < 3; ++c) {
      const float mean = kCifarMean[static_cast<std::size_t>(c)];
      const float std_dev = kCifarStd[static_cast<std::size_t>(c)];
      const unsigned char* plane = record.data() + 1 + c * kCifarDim * kCifarDim;
      for (int i = 0; i < kCifarDim * kCifarDim; ++i)
        pixels.push_back((static_cast<float>(plane[i]) / 255.0f - mean) / std_dev);
    }
  }
}

Dataset finish(std::vector<float> pixels, std::vector<int> labels) {
  Dataset d;
  const int n = static_cast<int>(labels.size());
  d.images = Tensor<float>({n, 3, kCifarDim, kCifarDim}, std::move(pixels));
  d.labels = std::move(labels);
  d.classes = 10;
  return d;
}

}  // namespace

Dataset load_cifar10_file(const std::string& path) {
  std::vector<float> pixels;
  std::vector<int> labels;
  append_cifar_file(path, pixels, labels);
  return finish(std::move(pixels), std::move(labels));
}

Dataset load_cifar10(const std::string& dir) {
  std::vector<float> pixels;
  std::vector<int> labels;
  int found = 0;
  for (int i = 1; i <= 5; ++i) {
    const std::string path = dir + "/data_batch_" + std::to_string(i) + ".bin";
    if (!std::filesystem::exists(path)) continue;
    append_cifar_file(path, pixels, labels);
    ++found;
  }
  if (found == 0)
    throw format_error("cifar10: no data_batch_*.bin files under " + dir);
  return finish(std::move(pixels), std::move(labels));
}

Dataset load_cifar10_test(const std::string& dir) {
  return load_cifar10_file(dir + "/test_batch.bin");
}

Dataset gen_synthetic(int classes, int n_per_class, int image_size, std::uint32_t seed) {
  if (classes < 2) throw config_error("gen_synthetic: needs at least 2 classes");
  if (n_per_class < 1) throw config_error("gen_synthetic: n_per_class must be >= 1");
  if (image_size < 4) throw config_error("gen_synthetic: image_size must be >= 4");

  const int n = classes * n_per_class;
  Dataset d;
  d.images = Tensor<float>({n, 3, image_size, image_size});
  d.labels.resize(static_cast<std::size_t>(n));
  d.classes = classes;

  // Class template: a Gaussian bump whose center walks a circle with the
  // class index, tinted differently per channel.
  const double pi = 3.14159265358979323846;
  const double radius = image_size / 3.2;
  const double spot = image_size / 4.0;
  const double amplitude = 2.0;
  const double noise = 1.0;

  Rng rng(seed);
  float* out = d.images.data();
  const std::int64_t plane = static_cast<std::int64_t>(image_size) * image_size;
  std::int64_t cursor = 0;
  for (int c = 0; c < classes; ++c) {
    const double theta = 2.0 * pi * c / classes;
    const double cy = image_size / 2.0 + radius * std::sin(theta);
    const double cx = image_size / 2.0 + radius * std::cos(theta);
    double tint[3];
    for (int ch = 0; ch < 3; ++ch)
      tint[ch] = 1.0 + 0.5 * std::cos(theta + 2.0 * pi * ch / 3.0);

    for (int s = 0; s < n_per_class; ++s) {
      d.labels[static_cast<std::size_t>(c * n_per_class + s)] = c;
      for (int ch = 0; ch < 3; ++ch) {
        float* p = out + cursor + ch * plane;
        for (int y = 0; y < image_size; ++y) {
          for (int x = 0; x < image_size; ++x) {
            const double dy = y - cy, dx = x - cx;
            const double bump =
                amplitude * tint[ch] * std::exp(-(dy * dy + dx * dx) / (2.0 * spot * spot));
            p[y * image_size + x] = static_cast<float>(bump + noise * rng.normal());
          }
        }
      }
      cursor += 3 * plane;
    }
  }
  return d;
}

}  // namespace asfp
