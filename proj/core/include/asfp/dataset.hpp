#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "asfp/tensor.hpp"

namespace asfp {

struct Dataset {
  Tensor<float> images;     // [N, C, H, W]
  std::vector<int> labels;  // values in [0, classes)
  int classes = 0;
};

// Per-channel statistics used to standardize CIFAR-10 pixels after scaling
// to [0,1].
extern const std::array<float, 3> kCifarMean;
extern const std::array<float, 3> kCifarStd;

// One canonical binary batch file: records of 1 label byte + 3072 pixel
// bytes (R plane, G plane, B plane, each 32x32 row-major). Any record count
// is accepted as long as the file length is an exact multiple.
Dataset load_cifar10_file(const std::string& path);

// Concatenation of data_batch_1.bin .. data_batch_5.bin found in `dir`
// (at least one must exist; the full set yields N = 50,000).
Dataset load_cifar10(const std::string& dir);

// test_batch.bin from `dir`.
Dataset load_cifar10_test(const std::string& dir);

// Deterministic desk-scale stand-in: class c is Gaussian noise around a
// fixed class-specific spatial template, 3 channels.
Dataset gen_synthetic(int classes, int n_per_class, int image_size, std::uint32_t seed);

}  // namespace asfp
