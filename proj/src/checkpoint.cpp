#include "omg/checkpoint.hpp"

#include "binio.hpp"
#include "omg/hash.hpp"

#include <cmath>
#include <cstdio>
#include <map>

namespace omg {

const MatF* CheckpointData::find(const std::string& name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return &m;
  return nullptr;
}

std::vector<std::byte> encode_checkpoint(const std::string& metadata, const TensorList<float>& tensors) {
  detail::ByteWriter w;
  w.magic("OMGC");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(metadata.size()));
  w.str(metadata);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.str(t.name);
    if (t.is_vector) {
      w.u32(1);
      w.u32(static_cast<std::uint32_t>(t.value->size()));
    } else {
      w.u32(2);
      w.u32(static_cast<std::uint32_t>(t.value->rows()));
      w.u32(static_cast<std::uint32_t>(t.value->cols()));
    }
    for (Eigen::Index i = 0; i < t.value->size(); ++i) w.f32(t.value->data()[i]);
  }
  return std::move(w.buffer());
}

CheckpointData decode_checkpoint(std::span<const std::byte> bytes, const std::string& origin) {
  detail::ByteReader r(bytes, origin);
  require(r.has_magic("OMGC"), ErrorCode::kBadMagic, origin + ": not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  require(version == kCheckpointVersion, ErrorCode::kCheckpointMismatch,
          origin + ": unsupported checkpoint version " + std::to_string(version));
  CheckpointData out;
  out.metadata = r.str(r.u32());
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    require(rank == 1 || rank == 2, ErrorCode::kCheckpointMismatch,
            origin + ": tensor " + name + " has unsupported rank " + std::to_string(rank));
    const std::uint32_t rows = rank == 1 ? 1 : r.u32();
    const std::uint32_t cols = r.u32();
    require(static_cast<std::uint64_t>(rows) * cols * 4 <= r.remaining(), ErrorCode::kIo, origin + ": truncated file");
    MatF m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = r.f32();
    out.tensors.emplace_back(std::move(name), std::move(m));
  }
  require(r.remaining() == 0, ErrorCode::kIo, origin + ": trailing bytes after last tensor");
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const std::string& metadata,
                      const TensorList<float>& tensors) {
  const auto bytes = encode_checkpoint(metadata, tensors);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  detail::write_file_bytes(tmp, bytes);
  std::filesystem::rename(tmp, path);
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorCode::kIo, "checkpoint not found: " + path.string());
  const auto bytes = detail::read_file_bytes(path);
  return decode_checkpoint(bytes, path.string());
}

void assign_tensors(const CheckpointData& data, const TensorList<float>& dst, const std::string& origin) {
  std::map<std::string, const MatF*> by_name;
  for (const auto& [n, m] : data.tensors) by_name[n] = &m;
  for (const auto& t : dst) {
    const auto it = by_name.find(t.name);
    require(it != by_name.end(), ErrorCode::kCheckpointMismatch, origin + ": missing tensor " + t.name);
    const MatF& src = *it->second;
    require(src.size() == t.value->size() && (t.is_vector || src.rows() == t.value->rows()),
            ErrorCode::kCheckpointMismatch,
            origin + ": tensor " + t.name + " has dims " + std::to_string(src.rows()) + "x" +
                std::to_string(src.cols()) + ", expected " + std::to_string(t.value->rows()) + "x" +
                std::to_string(t.value->cols()));
    require(src.allFinite(), ErrorCode::kNonFiniteValue, origin + ": tensor " + t.name + " holds non-finite values");
    *t.value = Eigen::Map<const MatF>(src.data(), t.value->rows(), t.value->cols());
  }
}

std::string file_hash(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(std::span<const std::byte>(bytes))));
  return buf;
}

}  // namespace omg
