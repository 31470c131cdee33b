#include "eeseg/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "eeseg/errors.hpp"
#include "eeseg/parallel.hpp"

namespace eeseg {

namespace {

constexpr double kTwoPi = 6.283185307179586476925;
constexpr double kC0 = 299792458.0;            // m/s
constexpr double kEps0 = 8.8541878128e-12;     // F/m
// Seawater surrogate constants (20 degC, 35 ppt).
constexpr double kEpsStatic = 72.0;
constexpr double kEpsInf = 4.9;
constexpr double kRelaxGhz = 17.0;
constexpr double kConductivity = 4.8;          // S/m

constexpr char kSceneMagic[4] = {'O', 'S', 'S', '1'};
constexpr std::uint32_t kSceneVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw TruncationError(std::string("scene: stream ended while reading ") + what);
  return value;
}

}  // namespace

void EnvironmentParams::validate() const {
  if (u10_min < 0 || u10_max < u10_min) throw ConfigError("env: wind range invalid");
  if (eps_oil <= 1.0) throw ConfigError("env: eps_oil must exceed 1");
  if (a_rough_mm < 0) throw ConfigError("env: a_rough must be >= 0");
  if (sigma_noise < 0) throw ConfigError("env: sigma_noise must be >= 0");
}

void RadarSpec::validate() const {
  if (channels() < 2) throw ConfigError("radar: need at least 2 channels");
  for (std::size_t i = 1; i < freq_ghz.size(); ++i)
    if (freq_ghz[i] <= freq_ghz[i - 1]) throw ConfigError("radar: frequencies must be strictly increasing");
}

namespace detail {

std::complex<double> debye_water(double f_ghz) {
  const std::complex<double> j(0.0, 1.0);
  return kEpsInf + (kEpsStatic - kEpsInf) / (1.0 + j * (f_ghz / kRelaxGhz));
}

}  // namespace detail

std::complex<double> water_permittivity(double f_ghz) {
  if (f_ghz < 1.0 || f_ghz > 20.0) throw ConfigError("water_permittivity: frequency outside [1, 20] GHz");
  const double f_hz = f_ghz * 1e9;
  return detail::debye_water(f_ghz) - std::complex<double>(0.0, kConductivity / (kTwoPi * f_hz * kEps0));
}

double film_reflectance(double d_mm, double f_ghz, double eps_oil) {
  if (d_mm < 0.0 || d_mm > 10.0) throw ShapeError("film_reflectance: thickness outside [0, 10] mm");
  const std::complex<double> n1(1.0, 0.0);
  const std::complex<double> n2 = std::sqrt(std::complex<double>(eps_oil, 0.0));
  const std::complex<double> n3 = std::sqrt(water_permittivity(f_ghz));
  const std::complex<double> r12 = (n1 - n2) / (n1 + n2);
  const std::complex<double> r23 = (n2 - n3) / (n2 + n3);
  const std::complex<double> beta = kTwoPi * (f_ghz * 1e9) * n2 * (d_mm * 1e-3) / kC0;
  const std::complex<double> phase = std::exp(std::complex<double>(0.0, -2.0) * beta);
  const std::complex<double> r = (r12 + r23 * phase) / (1.0 + r12 * r23 * phase);
  return std::norm(r);
}

double roughness_factor(double wind_mps, double f_ghz, double a_rough_mm) {
  const double sigma_h = a_rough_mm * 1e-3 * wind_mps;  // metres
  const double k = kTwoPi * (f_ghz * 1e9) / kC0;
  const double x = 2.0 * k * sigma_h;
  return std::exp(-x * x);
}

LabelMap synth_thickness_map(Rng& rng, int h, int w) {
  if (h < 16 || w < 16) throw ShapeError("synth_thickness_map: H and W must be >= 16");
  const double scale = static_cast<double>(std::min(h, w));
  std::vector<double> field(static_cast<std::size_t>(h) * w);
  LabelMap labels(h, w);

  for (int attempt = 0; attempt < 64; ++attempt) {
    std::fill(field.begin(), field.end(), 0.0);
    const int slicks = 1 + static_cast<int>(rng.uniform_int(4));
    for (int s = 0; s < slicks; ++s) {
      const double cx = rng.uniform(0.15, 0.85) * w;
      const double cy = rng.uniform(0.15, 0.85) * h;
      const int bumps = 1 + static_cast<int>(rng.uniform_int(3));
      for (int b = 0; b < bumps; ++b) {
        const double bx = cx + rng.normal() * 0.05 * scale;
        const double by = cy + rng.normal() * 0.05 * scale;
        const double amp = rng.uniform(2.0, 10.0);
        const double sx = rng.uniform(0.07, 0.14) * scale;
        const double sy = rng.uniform(0.07, 0.14) * scale;
        const double theta = rng.uniform(0.0, kTwoPi / 2.0);
        const double ct = std::cos(theta), st = std::sin(theta);
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            const double dx = x - bx, dy = y - by;
            const double u = ct * dx + st * dy;
            const double v = -st * dx + ct * dy;
            field[static_cast<std::size_t>(y) * w + x] +=
                amp * std::exp(-0.5 * (u * u / (sx * sx) + v * v / (sy * sy)));
          }
        }
      }
    }

    std::size_t oil = 0;
    for (std::size_t i = 0; i < field.size(); ++i) {
      const long r = std::lround(field[i]);
      const std::uint8_t c = static_cast<std::uint8_t>(std::clamp(r, 0L, 10L));
      labels.v[i] = c;
      if (c > 0) ++oil;
    }
    const double frac = static_cast<double>(oil) / static_cast<double>(field.size());
    if (frac >= 0.08 && frac <= 0.55) break;  // resample degenerate coverage
  }
  return labels;
}

std::vector<std::vector<double>> class_signatures(double wind, const EnvironmentParams& env, const RadarSpec& radar) {
  radar.validate();
  std::vector<std::vector<double>> sig(kThicknessClasses, std::vector<double>(radar.freq_ghz.size()));
  for (int cls = 0; cls < kThicknessClasses; ++cls) {
    for (std::size_t ch = 0; ch < radar.freq_ghz.size(); ++ch) {
      const double f = radar.freq_ghz[ch];
      sig[cls][ch] = film_reflectance(static_cast<double>(cls), f, env.eps_oil) *
                     roughness_factor(wind, f, env.a_rough_mm);
    }
  }
  return sig;
}

Tensor render_cube(const LabelMap& labels, double wind, const EnvironmentParams& env, const RadarSpec& radar,
                   Rng& rng) {
  env.validate();
  const auto sig = class_signatures(wind, env, radar);
  const int channels = radar.channels();
  Tensor cube({channels, labels.h, labels.w});
  float* out = cube.data();
  for (int ch = 0; ch < channels; ++ch) {
    for (std::size_t p = 0; p < labels.size(); ++p) {
      const double value = sig[labels.v[p]][static_cast<std::size_t>(ch)];
      const double noise = env.sigma_noise > 0.0 ? rng.normal() * env.sigma_noise : 0.0;
      *out++ = static_cast<float>(value + noise);
    }
  }
  return cube;
}

void save_scene(const Scene& scene, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("scene: cannot open for writing: " + path);
  f.write(kSceneMagic, 4);
  write_pod<std::uint32_t>(f, kSceneVersion);
  write_pod<std::uint16_t>(f, static_cast<std::uint16_t>(scene.labels.h));
  write_pod<std::uint16_t>(f, static_cast<std::uint16_t>(scene.labels.w));
  write_pod<std::uint16_t>(f, static_cast<std::uint16_t>(scene.cube.dim(0)));
  write_pod<std::uint16_t>(f, static_cast<std::uint16_t>(kThicknessClasses));
  write_pod<float>(f, scene.wind);
  f.write(reinterpret_cast<const char*>(scene.cube.data()),
          static_cast<std::streamsize>(scene.cube.size() * sizeof(float)));
  f.write(reinterpret_cast<const char*>(scene.labels.v.data()),
          static_cast<std::streamsize>(scene.labels.v.size()));
  if (!f) throw IoError("scene: write failed: " + path);
}

Scene load_scene(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("scene: cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f) throw TruncationError("scene: stream ended while reading magic");
  if (std::memcmp(magic, kSceneMagic, 4) != 0) throw FormatError("scene: bad magic, not an OSS1 file");
  const auto version = read_pod<std::uint32_t>(f, "version");
  if (version != kSceneVersion) throw FormatError("scene: unsupported version " + std::to_string(version));
  const int h = read_pod<std::uint16_t>(f, "height");
  const int w = read_pod<std::uint16_t>(f, "width");
  const int channels = read_pod<std::uint16_t>(f, "channels");
  const int classes = read_pod<std::uint16_t>(f, "classes");
  if (h < 1 || w < 1 || channels < 1) throw CorruptionError("scene: degenerate dimensions");
  if (classes != kThicknessClasses)
    throw CorruptionError("scene: class count " + std::to_string(classes) + " != " +
                          std::to_string(kThicknessClasses));

  Scene scene;
  scene.wind = read_pod<float>(f, "wind");
  scene.cube = Tensor({channels, h, w});
  f.read(reinterpret_cast<char*>(scene.cube.data()),
         static_cast<std::streamsize>(scene.cube.size() * sizeof(float)));
  if (!f) throw TruncationError("scene: stream ended while reading cube");
  scene.labels = LabelMap(h, w);
  f.read(reinterpret_cast<char*>(scene.labels.v.data()), static_cast<std::streamsize>(scene.labels.v.size()));
  if (!f) throw TruncationError("scene: stream ended while reading labels");
  for (std::uint8_t c : scene.labels.v)
    if (c >= kThicknessClasses) throw CorruptionError("scene: label out of range");
  return scene;
}

namespace {

nlohmann::json env_to_json(const EnvironmentParams& e) {
  return {{"u10_min", e.u10_min},       {"u10_max", e.u10_max},         {"eps_oil", e.eps_oil},
          {"a_rough_mm", e.a_rough_mm}, {"sigma_noise", e.sigma_noise}, {"water_temp_c", e.water_temp_c},
          {"salinity_ppt", e.salinity_ppt}};
}

EnvironmentParams env_from_json(const nlohmann::json& j) {
  EnvironmentParams e;
  e.u10_min = j.at("u10_min").get<double>();
  e.u10_max = j.at("u10_max").get<double>();
  e.eps_oil = j.at("eps_oil").get<double>();
  e.a_rough_mm = j.at("a_rough_mm").get<double>();
  e.sigma_noise = j.at("sigma_noise").get<double>();
  e.water_temp_c = j.at("water_temp_c").get<double>();
  e.salinity_ppt = j.at("salinity_ppt").get<double>();
  return e;
}

}  // namespace

void save_manifest(const DatasetManifest& m, const std::string& path) {
  nlohmann::json j;
  j["seed"] = m.seed;
  j["env"] = env_to_json(m.env);
  j["radar"] = {{"freq_ghz", m.radar.freq_ghz}, {"geometry", "nadir"}};
  j["scenes"] = nlohmann::json::array();
  for (const auto& s : m.scenes) j["scenes"].push_back({{"file", s.file}, {"split", s.split}});
  j["norm"] = {{"mean", m.norm.mean}, {"std", m.norm.stdev}};
  std::ofstream f(path);
  if (!f) throw IoError("manifest: cannot open for writing: " + path);
  f << j.dump(2) << "\n";
  if (!f) throw IoError("manifest: write failed: " + path);
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("manifest: cannot open: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: invalid JSON: ") + e.what());
  }
  DatasetManifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.env = env_from_json(j.at("env"));
    m.radar.freq_ghz = j.at("radar").at("freq_ghz").get<std::vector<double>>();
    for (const auto& s : j.at("scenes")) m.scenes.push_back({s.at("file").get<std::string>(), s.at("split").get<std::string>()});
    m.norm.mean = j.at("norm").at("mean").get<std::vector<double>>();
    m.norm.stdev = j.at("norm").at("std").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: missing or mistyped field: ") + e.what());
  }
  m.radar.validate();
  return m;
}

DatasetManifest generate_dataset(const EnvironmentParams& env, const RadarSpec& radar, int n_scenes, int h, int w,
                                 std::uint64_t seed, const std::string& out_dir) {
  env.validate();
  radar.validate();
  if (n_scenes < 2) throw ConfigError("generate_dataset: need at least 2 scenes");
  std::filesystem::create_directories(out_dir);

  const int n_train = train_split_count(n_scenes);
  DatasetManifest m;
  m.seed = seed;
  m.env = env;
  m.radar = radar;

  const int channels = radar.channels();
  std::vector<double> sum(channels, 0.0), sumsq(channels, 0.0);
  std::int64_t train_pixels = 0;

  // Scenes are generated in parallel chunks (independent streams) and written
  // in index order.
  const int chunk = 64;
  std::vector<Scene> scenes(static_cast<std::size_t>(std::min(chunk, n_scenes)));
  char namebuf[32];
  for (int base = 0; base < n_scenes; base += chunk) {
    const int count = std::min(chunk, n_scenes - base);
    parallel_for(static_cast<std::size_t>(count), [&](std::size_t k) {
      Rng rng(splitmix64(seed, static_cast<std::uint64_t>(base) + k));
      Scene& sc = scenes[k];
      sc.wind = static_cast<float>(rng.uniform(env.u10_min, env.u10_max));
      sc.labels = synth_thickness_map(rng, h, w);
      sc.cube = render_cube(sc.labels, sc.wind, env, radar, rng);
    });
    for (int k = 0; k < count; ++k) {
      const int i = base + k;
      std::snprintf(namebuf, sizeof(namebuf), "scene_%05d.oss", i);
      save_scene(scenes[static_cast<std::size_t>(k)], out_dir + "/" + namebuf);
      m.scenes.push_back({namebuf, i < n_train ? "train" : "test"});
      if (i < n_train) {
        const Scene& sc = scenes[static_cast<std::size_t>(k)];
        const std::int64_t hw = static_cast<std::int64_t>(h) * w;
        for (int ch = 0; ch < channels; ++ch) {
          const float* plane = sc.cube.data() + static_cast<std::size_t>(ch) * hw;
          for (std::int64_t p = 0; p < hw; ++p) {
            sum[ch] += plane[p];
            sumsq[ch] += static_cast<double>(plane[p]) * plane[p];
          }
        }
        train_pixels += hw;
      }
    }
  }

  m.norm.mean.resize(channels);
  m.norm.stdev.resize(channels);
  for (int ch = 0; ch < channels; ++ch) {
    const double mean = sum[ch] / static_cast<double>(train_pixels);
    m.norm.mean[ch] = mean;
    m.norm.stdev[ch] = std::sqrt(std::max(0.0, sumsq[ch] / static_cast<double>(train_pixels) - mean * mean));
  }

  save_manifest(m, out_dir + "/manifest.json");
  return m;
}

Tensor normalize(const Tensor& cube, const NormStats& stats) {
  if (cube.rank() != 3) throw ShapeError("normalize: cube must be rank 3 (R,H,W)");
  const int channels = cube.dim(0);
  if (stats.mean.size() != static_cast<std::size_t>(channels) ||
      stats.stdev.size() != static_cast<std::size_t>(channels))
    throw ShapeError("normalize: stats channel count does not match cube");
  Tensor out(cube.dims());
  const Eigen::Index hw = static_cast<Eigen::Index>(cube.dim(1)) * cube.dim(2);
  for (int ch = 0; ch < channels; ++ch) {
    if (!(stats.stdev[static_cast<std::size_t>(ch)] > 0.0))
      throw ConfigError("normalize: degenerate channel " + std::to_string(ch) + " (zero std)");
    const float mean = static_cast<float>(stats.mean[static_cast<std::size_t>(ch)]);
    const float inv = static_cast<float>(1.0 / stats.stdev[static_cast<std::size_t>(ch)]);
    const float* src = cube.data() + static_cast<std::size_t>(ch) * hw;
    float* dst = out.data() + static_cast<std::size_t>(ch) * hw;
    for (Eigen::Index p = 0; p < hw; ++p) dst[p] = (src[p] - mean) * inv;
  }
  return out;
}

LoadedDataset load_dataset(const std::string& dir) {
  LoadedDataset ds;
  ds.manifest = load_manifest(dir + "/manifest.json");
  for (const auto& entry : ds.manifest.scenes) {
    Scene sc = load_scene(dir + "/" + entry.file);
    Sample sample{normalize(sc.cube, ds.manifest.norm), std::move(sc.labels)};
    if (entry.split == "train")
      ds.train.push_back(std::move(sample));
    else
      ds.test.push_back(std::move(sample));
  }
  return ds;
}

}  // namespace eeseg
