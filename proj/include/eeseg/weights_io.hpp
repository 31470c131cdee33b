#pragma once

#include <iosfwd>
#include <string>
#include <utility>

#include "eeseg/net.hpp"

namespace eeseg {

// TUW1 weight container, little-endian:
//   magic "TUW1"; u32 version = 1; u16 R; u16 C; u16 resolution; u16 widths[3];
//   u32 layer count; per layer: u16 name length, UTF-8 name, u8 rank,
//   u32 extents[rank], f32 kernel values, u32 bias length, f32 bias values.
void save_weights(const ParameterSet& params, const ModelConfig& cfg, std::ostream& sink);
std::pair<ModelConfig, ParameterSet> load_weights(std::istream& source);

void save_weights_file(const ParameterSet& params, const ModelConfig& cfg, const std::string& path);
std::pair<ModelConfig, ParameterSet> load_weights_file(const std::string& path);

}  // namespace eeseg
