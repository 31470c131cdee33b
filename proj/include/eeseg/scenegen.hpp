#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "eeseg/rng.hpp"
#include "eeseg/tensor.hpp"

namespace eeseg {

// Environment: slicks of 0..10 mm (0 = clean water) on wind-roughened water.
// Water temperature / salinity are informative; the seawater permittivity
// surrogate below has them folded into its fixed constants.
struct EnvironmentParams {
  double u10_min = 2.0;
  double u10_max = 8.0;
  double eps_oil = 3.0;
  double a_rough_mm = 0.4;  // rms surface height per (m/s) of wind, millimetres
  double sigma_noise = 0.01;
  double water_temp_c = 20.0;
  double salinity_ppt = 35.0;

  void validate() const;
};

// Nadir-looking wide-band radiometric sensor, one channel per frequency.
struct RadarSpec {
  std::vector<double> freq_ghz = {4, 5, 6, 7, 8, 9, 10, 11, 12};

  int channels() const { return static_cast<int>(freq_ghz.size()); }
  void validate() const;  // strictly increasing, >= 2 channels
};

constexpr int kThicknessClasses = 11;  // 0..10 mm

namespace detail {
// Single-Debye seawater term without the conductivity part; no range check
// (exposed so the high-frequency limit is testable).
std::complex<double> debye_water(double f_ghz);
}  // namespace detail

// Relative permittivity of seawater at 20 degC / 35 ppt:
// eps_inf + (eps_s - eps_inf)/(1 + j f/f_rel) - j sigma/(2 pi f eps0).
std::complex<double> water_permittivity(double f_ghz);

// Normal-incidence power reflectance of an oil film of thickness d on water:
// two-interface interference between the air-oil and oil-water boundaries.
double film_reflectance(double d_mm, double f_ghz, double eps_oil = 3.0);

// Specular attenuation of a wind-roughened surface, exp(-(2 k sigma_h)^2)
// with sigma_h = a_rough * wind. Monotone non-increasing in wind and f.
double roughness_factor(double wind_mps, double f_ghz, double a_rough_mm = 0.4);

// Layered slicks: 1..4 slicks, each a sum of 1..3 anisotropic Gaussian bumps
// peaking in [2,10] mm, rounded to integer mm and clamped to [0,10].
LabelMap synth_thickness_map(Rng& rng, int h, int w);

// Per-channel received power: class reflectance x roughness + white noise.
Tensor render_cube(const LabelMap& labels, double wind, const EnvironmentParams& env, const RadarSpec& radar,
                   Rng& rng);

// 11 x R lookup of noiseless channel signatures at the given wind.
std::vector<std::vector<double>> class_signatures(double wind, const EnvironmentParams& env, const RadarSpec& radar);

struct Scene {
  LabelMap labels;
  float wind = 0.0f;
  Tensor cube;
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stdev;
};

struct SceneEntry {
  std::string file;
  std::string split;  // "train" | "test"
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  EnvironmentParams env;
  RadarSpec radar;
  std::vector<SceneEntry> scenes;
  NormStats norm;
};

// ceil(0.908 * n) in integer arithmetic.
inline int train_split_count(int n) { return static_cast<int>((908LL * n + 999) / 1000); }

// Generates n scenes into out_dir as OSS1 files plus manifest.json. Scene i
// draws from an independent stream seeded with splitmix64(seed, i); the first
// ceil(0.908 n) scenes are the train split and normalization statistics come
// from that split only.
DatasetManifest generate_dataset(const EnvironmentParams& env, const RadarSpec& radar, int n_scenes, int h, int w,
                                 std::uint64_t seed, const std::string& out_dir);

void save_scene(const Scene& scene, const std::string& path);
Scene load_scene(const std::string& path);

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

// (value - mean[ch]) / std[ch] elementwise.
Tensor normalize(const Tensor& cube, const NormStats& stats);

// Normalized input ready for the network, paired with its ground truth.
struct Sample {
  Tensor input;
  LabelMap labels;
};

struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

LoadedDataset load_dataset(const std::string& dir);

}  // namespace eeseg
