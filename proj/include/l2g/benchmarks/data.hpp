#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "l2g/search/dataset.hpp"

namespace l2g {

/// Input data is missing or unreadable.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> values;
};

/// Reads an unsigned-byte IDX file (magic 0x00000801 or 0x00000803), gzip or plain.
IdxArray read_idx(const std::filesystem::path& path);

/// Images as [N, rows*cols] in [0,1] with labels 0..9.
struct ImageDataset {
  ExampleSet train;
  ExampleSet test;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// Loads the four standard MNIST files from `dir`, accepting a `.gz` suffix.
/// Throws DataError naming the expected files when any is missing.
ImageDataset load_mnist(const std::filesystem::path& dir);

/// `configured` unless L2G_DATA_DIR is set.
std::filesystem::path resolve_data_dir(const std::filesystem::path& configured);

}  // namespace l2g
