#include "eeseg/weights_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

#include "eeseg/errors.hpp"

namespace eeseg {

namespace {

constexpr char kMagic[4] = {'T', 'U', 'W', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw TruncationError(std::string("weights: stream ended while reading ") + what);
  return value;
}

void read_floats(std::istream& in, float* dst, std::size_t n, const std::string& what) {
  in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n * sizeof(float)));
  if (!in) throw TruncationError("weights: stream ended while reading " + what);
}

}  // namespace

void save_weights(const ParameterSet& params, const ModelConfig& cfg, std::ostream& sink) {
  cfg.validate();
  sink.write(kMagic, 4);
  write_pod<std::uint32_t>(sink, kVersion);
  write_pod<std::uint16_t>(sink, static_cast<std::uint16_t>(cfg.in_channels));
  write_pod<std::uint16_t>(sink, static_cast<std::uint16_t>(cfg.classes));
  write_pod<std::uint16_t>(sink, static_cast<std::uint16_t>(cfg.resolution));
  for (int w : cfg.widths) write_pod<std::uint16_t>(sink, static_cast<std::uint16_t>(w));
  write_pod<std::uint32_t>(sink, static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& layer : params.layers) {
    write_pod<std::uint16_t>(sink, static_cast<std::uint16_t>(layer.name.size()));
    sink.write(layer.name.data(), static_cast<std::streamsize>(layer.name.size()));
    write_pod<std::uint8_t>(sink, static_cast<std::uint8_t>(layer.kernel.rank()));
    for (int d : layer.kernel.dims()) write_pod<std::uint32_t>(sink, static_cast<std::uint32_t>(d));
    sink.write(reinterpret_cast<const char*>(layer.kernel.data()),
               static_cast<std::streamsize>(layer.kernel.size() * sizeof(float)));
    write_pod<std::uint32_t>(sink, static_cast<std::uint32_t>(layer.bias.size()));
    sink.write(reinterpret_cast<const char*>(layer.bias.data()),
               static_cast<std::streamsize>(layer.bias.size() * sizeof(float)));
  }
  if (!sink) throw IoError("weights: write failed");
}

std::pair<ModelConfig, ParameterSet> load_weights(std::istream& source) {
  char magic[4];
  source.read(magic, 4);
  if (!source) throw TruncationError("weights: stream ended while reading magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("weights: bad magic, not a TUW1 file");
  const auto version = read_pod<std::uint32_t>(source, "version");
  if (version != kVersion) throw FormatError("weights: unsupported version " + std::to_string(version));

  ModelConfig cfg;
  cfg.in_channels = read_pod<std::uint16_t>(source, "in_channels");
  cfg.classes = read_pod<std::uint16_t>(source, "classes");
  cfg.resolution = read_pod<std::uint16_t>(source, "resolution");
  for (int i = 0; i < 3; ++i) cfg.widths[i] = read_pod<std::uint16_t>(source, "widths");
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw CorruptionError(std::string("weights: embedded config invalid: ") + e.what());
  }

  const auto table = architecture(cfg);
  const auto layer_count = read_pod<std::uint32_t>(source, "layer count");
  if (layer_count != table.size())
    throw CorruptionError("weights: layer count " + std::to_string(layer_count) + " != expected " +
                          std::to_string(table.size()));

  ParameterSet ps;
  ps.layers.reserve(layer_count);
  std::vector<bool> seen(table.size(), false);
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    const auto name_len = read_pod<std::uint16_t>(source, "layer name length");
    std::string name(name_len, '\0');
    source.read(name.data(), name_len);
    if (!source) throw TruncationError("weights: stream ended while reading layer name");

    std::size_t spec_idx = table.size();
    for (std::size_t s = 0; s < table.size(); ++s) {
      if (table[s].name == name) {
        spec_idx = s;
        break;
      }
    }
    if (spec_idx == table.size()) throw CorruptionError("weights: unknown layer \"" + name + "\"");
    if (seen[spec_idx]) throw CorruptionError("weights: duplicate layer \"" + name + "\"");
    seen[spec_idx] = true;
    const LayerSpec& spec = table[spec_idx];

    const auto rank = read_pod<std::uint8_t>(source, "kernel rank");
    std::vector<int> dims(rank);
    for (auto& d : dims) d = static_cast<int>(read_pod<std::uint32_t>(source, "kernel extent"));
    const std::vector<int> expect = kernel_dims<float>(spec);
    if (dims != expect) throw CorruptionError("weights: kernel shape mismatch for layer \"" + name + "\"");

    LayerT<float> layer;
    layer.name = name;
    layer.kernel = Tensor(dims);
    read_floats(source, layer.kernel.data(), static_cast<std::size_t>(layer.kernel.size()),
                "kernel of \"" + name + "\"");
    const auto bias_len = read_pod<std::uint32_t>(source, "bias length");
    if (bias_len != static_cast<std::uint32_t>(spec.out_ch))
      throw CorruptionError("weights: bias length mismatch for layer \"" + name + "\"");
    layer.bias = Vecf::Zero(bias_len);
    read_floats(source, layer.bias.data(), bias_len, "bias of \"" + name + "\"");
    ps.layers.push_back(std::move(layer));
  }
  return {cfg, std::move(ps)};
}

void save_weights_file(const ParameterSet& params, const ModelConfig& cfg, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("weights: cannot open for writing: " + path);
  save_weights(params, cfg, f);
  f.close();
  if (!f) throw IoError("weights: write failed: " + path);
}

std::pair<ModelConfig, ParameterSet> load_weights_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("weights: cannot open: " + path);
  return load_weights(f);
}

}  // namespace eeseg
