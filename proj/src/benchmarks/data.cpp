#include "l2g/benchmarks/data.hpp"

#include <zlib.h>

#include <cstdlib>
#include <memory>

namespace l2g {
namespace {

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) throw DataError("cannot open " + path.string());
  std::unique_ptr<gzFile_s, int (*)(gzFile)> guard(f, gzclose);
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> chunk(1 << 20);
  for (;;) {
    const int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
    if (n < 0) throw DataError("read error in " + path.string());
    if (n == 0) break;
    out.insert(out.end(), chunk.begin(), chunk.begin() + n);
  }
  return out;
}

std::uint32_t big_endian(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

std::filesystem::path find_file(const std::filesystem::path& dir, const std::string& stem) {
  for (const auto& name : {stem, stem + ".gz"}) {
    if (std::filesystem::exists(dir / name)) return dir / name;
  }
  return {};
}

}  // namespace

IdxArray read_idx(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  if (bytes.size() < 4) throw DataError(path.string() + ": too short for an IDX header");
  const std::uint32_t magic = big_endian(bytes.data());
  if ((magic & 0xffffff00u) != 0x00000800u) {
    throw DataError(path.string() + ": bad IDX magic, expected unsigned-byte data");
  }
  const std::size_t rank = magic & 0xffu;
  if (rank == 0 || bytes.size() < 4 + 4 * rank) throw DataError(path.string() + ": truncated IDX header");
  IdxArray a;
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    a.dims.push_back(big_endian(bytes.data() + 4 + 4 * i));
    count *= a.dims.back();
  }
  const std::size_t offset = 4 + 4 * rank;
  if (bytes.size() != offset + count) {
    throw DataError(path.string() + ": expected " + std::to_string(count) + " values, found " +
                    std::to_string(bytes.size() - offset));
  }
  a.values.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
  return a;
}

ImageDataset load_mnist(const std::filesystem::path& dir) {
  const char* stems[] = {"train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
                         "t10k-labels-idx1-ubyte"};
  std::filesystem::path paths[4];
  std::string missing;
  for (int i = 0; i < 4; ++i) {
    paths[i] = find_file(dir, stems[i]);
    if (paths[i].empty()) missing += std::string(missing.empty() ? "" : ", ") + stems[i] + "[.gz]";
  }
  if (!missing.empty()) throw DataError("MNIST files missing in " + dir.string() + ": " + missing);

  ImageDataset out;
  auto build = [&](const std::filesystem::path& img_path, const std::filesystem::path& lbl_path) {
    IdxArray img = read_idx(img_path);
    IdxArray lbl = read_idx(lbl_path);
    if (img.dims.size() != 3 || lbl.dims.size() != 1 || img.dims[0] != lbl.dims[0]) {
      throw DataError("MNIST shape mismatch between " + img_path.string() + " and " + lbl_path.string());
    }
    out.rows = img.dims[1];
    out.cols = img.dims[2];
    const std::size_t n = img.dims[0], width = out.rows * out.cols;
    ExampleSet set{Tensor({n, width}), {}, 10};
    for (std::size_t i = 0; i < img.values.size(); ++i) set.inputs[i] = img.values[i] / 255.0;
    for (auto y : lbl.values) {
      if (y > 9) throw DataError(lbl_path.string() + ": label " + std::to_string(y) + " out of range");
      set.labels.push_back(y);
    }
    return set;
  };
  out.train = build(paths[0], paths[1]);
  out.test = build(paths[2], paths[3]);
  return out;
}

std::filesystem::path resolve_data_dir(const std::filesystem::path& configured) {
  if (const char* env = std::getenv("L2G_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return configured;
}

}  // namespace l2g
