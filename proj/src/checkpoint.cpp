#include "nowcast/checkpoint.hpp"

#include <map>

#include "detail/binary.hpp"
#include "nowcast/errors.hpp"

namespace nowcast {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'N', 'C'};
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeF64 = 1;

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& records) {
  detail::ByteWriter w;
  w.bytes(kMagic, 4);
  w.uint<std::uint16_t>(kCheckpointVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(records.size()));
  for (const auto& [name, t] : records) {
    if (!t.defined()) throw ConfigError("checkpoint record '" + name + "' is undefined");
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.uint<std::uint8_t>(kDtypeF32);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.uint<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (float v : t.data()) w.f32(v);
  }
  return std::move(w.buffer());
}

NamedTensors decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size());
  if (r.str(4, "magic") != std::string(kMagic, 4)) throw FormatError("bad checkpoint magic", 0);
  const std::size_t version_at = r.offset();
  const auto version = r.uint<std::uint16_t>("version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
  const auto count = r.uint<std::uint32_t>("record count");
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.uint<std::uint32_t>("name length");
    auto name = r.str(name_len, "record name");
    const std::size_t dtype_at = r.offset();
    const auto dtype = r.uint<std::uint8_t>("dtype");
    if (dtype != kDtypeF32 && dtype != kDtypeF64)
      throw FormatError("unknown dtype " + std::to_string(dtype) + " in '" + name + "'", dtype_at);
    const auto rank = r.uint<std::uint32_t>("rank");
    if (rank > 8) throw FormatError("implausible rank in '" + name + "'", r.offset() - 4);
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(r.uint<std::uint32_t>("dims"));
      numel *= static_cast<std::uint64_t>(shape.back());
    }
    const std::size_t width = dtype == kDtypeF32 ? 4 : 8;
    if (numel > r.remaining() / width) r.need(numel * width, "payload");
    std::vector<float> data(numel);
    for (auto& v : data) v = dtype == kDtypeF32 ? r.f32("payload") : static_cast<float>(r.f64("payload"));
    out.emplace_back(std::move(name), Tensor<float>(shape, std::move(data)));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last record", r.offset());
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const NamedTensors& records) {
  detail::write_file_bytes(path.string(), encode_checkpoint(records));
}

NamedTensors read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file_bytes(path.string()));
}

void save_params(const std::filesystem::path& path, const ModelParams& params) {
  write_checkpoint(path, params.named());
}

ModelParams params_from_records(const NamedTensors& records, const ModelConfig& cfg) {
  std::map<std::string, Tensor<float>> by_name;
  for (const auto& [name, t] : records) {
    if (!by_name.emplace(name, t).second) throw ConfigError("duplicate checkpoint record '" + name + "'");
  }
  // Start from a template so every slot exists, then overwrite by name.
  ModelParams params = init_params(cfg, 0);
  auto slots = params.named();
  if (slots.size() != by_name.size())
    throw ConfigError("checkpoint has " + std::to_string(by_name.size()) + " records, config expects " +
                      std::to_string(slots.size()));
  for (auto& [name, slot] : slots) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("checkpoint is missing '" + name + "'");
    if (it->second.shape() != slot.shape())
      throw ConfigError("checkpoint record '" + name + "' has shape " + to_string(it->second.shape()) +
                        ", expected " + to_string(slot.shape()));
    auto dst = slot.mutable_data();
    auto src = it->second.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return params;
}

ModelParams load_params(const std::filesystem::path& path, const ModelConfig& cfg) {
  return params_from_records(read_checkpoint(path), cfg);
}

}  // namespace nowcast
