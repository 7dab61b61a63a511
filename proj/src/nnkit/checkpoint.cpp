#include "nnkit/checkpoint.hpp"

#include <fstream>
#include <map>

#include "orbits/binary_io.hpp"
#include "orbits/errors.hpp"

namespace nnkit {

namespace bin = orbits::binary;

void save_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw orbits::IoError("cannot open checkpoint for writing: " + path.string());
  bin::write_magic(out, "NNKC");
  bin::write_u32(out, kCheckpointVersion);
  bin::write_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    bin::write_string(out, p->name);
    bin::write_u32(out, static_cast<std::uint32_t>(p->value.rows()));
    bin::write_u32(out, static_cast<std::uint32_t>(p->value.cols()));
    for (Eigen::Index r = 0; r < p->value.rows(); ++r)
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) bin::write_f64(out, p->value(r, c));
  }
  if (!out) throw orbits::IoError("failed writing checkpoint: " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw orbits::IoError("cannot open checkpoint: " + path.string());
  bin::expect_magic(in, "NNKC", path.string());
  const auto version = bin::read_u32(in);
  if (version != kCheckpointVersion) throw orbits::IoError("unsupported checkpoint version " + std::to_string(version));
  const auto count = bin::read_u32(in);
  std::map<std::string, Matrix> stored;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = bin::read_string(in);
    const auto rows = bin::read_u32(in), cols = bin::read_u32(in);
    Matrix m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = bin::read_f64(in);
    stored.emplace(std::move(name), std::move(m));
  }
  for (Parameter* p : params) {
    auto it = stored.find(p->name);
    if (it == stored.end()) throw orbits::IoError("checkpoint lacks parameter " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
      throw orbits::ShapeMismatch("checkpoint shape mismatch for " + p->name);
    p->value = it->second;
    p->zero_grad();
  }
}

}  // namespace nnkit
