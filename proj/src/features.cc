// Copyright (c) 2026 JFE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "jfe/features.h"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <numbers>

#include "jfe/error.h"

namespace jfe {

namespace {

constexpr double kLogEnergyFloor = 1e-10;
constexpr double kLogMelFloor = 1e-10;

// In-place iterative radix-2 FFT. n must be a power of two.
void Fft(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

bool IsPowerOfTwo(uint32_t v) { return v != 0 && (v & (v - 1)) == 0; }

}  // namespace

FeatureConfig FeatureConfig::Dvector() { return FeatureConfig{}; }

FeatureConfig FeatureConfig::Xvector() {
  FeatureConfig cfg;
  cfg.n_mels = 40;  // 26 filters cannot yield 30 cepstra
  cfg.n_ceps = 30;
  cfg.include_log_energy = false;
  cfg.append_deltas = false;
  return cfg;
}

size_t FrameCount(size_t num_samples, size_t window_len, size_t hop_len) {
  if (num_samples < window_len) return 0;
  return (num_samples - window_len) / hop_len + 1;
}

double HammingValue(double n, size_t length) {
  return 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n /
                                static_cast<double>(length - 1));
}

WindowedFrames FrameAndWindow(const Waveform& w, const FeatureConfig& cfg) {
  const size_t window_len = w.sample_rate * cfg.window_ms / 1000;
  const size_t hop_len = w.sample_rate * cfg.hop_ms / 1000;
  if (w.samples.size() < window_len) {
    throw EmptyInputError(
        "frame_and_window: waveform of " + std::to_string(w.samples.size()) +
        " samples is shorter than one " + std::to_string(window_len) +
        "-sample window");
  }
  const size_t num_frames = FrameCount(w.samples.size(), window_len, hop_len);
  std::vector<double> window(window_len);
  for (size_t n = 0; n < window_len; ++n) {
    window[n] = HammingValue(static_cast<double>(n), window_len);
  }
  WindowedFrames out;
  out.sample_rate = w.sample_rate;
  out.frames.resize(num_frames);
  out.raw_energy.resize(num_frames);
  for (size_t t = 0; t < num_frames; ++t) {
    const double* src = w.samples.data() + t * hop_len;
    auto& frame = out.frames[t];
    frame.resize(window_len);
    double energy = 0.0;
    for (size_t n = 0; n < window_len; ++n) {
      energy += src[n] * src[n];
      frame[n] = src[n] * window[n];
    }
    out.raw_energy[t] = energy;
  }
  return out;
}

std::vector<double> PowerSpectrum(const std::vector<double>& frame,
                                  uint32_t n_fft) {
  if (!IsPowerOfTwo(n_fft)) {
    throw ConfigError("power_spectrum: n_fft must be a power of two");
  }
  if (frame.size() > n_fft) {
    throw ContractViolation("power_spectrum: frame longer than n_fft");
  }
  std::vector<std::complex<double>> a(n_fft);
  for (size_t i = 0; i < frame.size(); ++i) a[i] = frame[i];
  Fft(a);
  std::vector<double> power(n_fft / 2 + 1);
  for (size_t k = 0; k <= n_fft / 2; ++k) power[k] = std::norm(a[k]);
  return power;
}

double MelScale(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double MelScaleInverse(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

namespace {

// Filter edge frequencies: n_mels + 2 points equally spaced on the mel
// scale from 0 to Nyquist.
std::vector<double> MelPoints(const FeatureConfig& cfg,
                              uint32_t sample_rate) {
  const double lo = MelScale(0.0);
  const double hi = MelScale(sample_rate / 2.0);
  std::vector<double> hz(cfg.n_mels + 2);
  for (size_t i = 0; i < hz.size(); ++i) {
    const double mel = lo + (hi - lo) * static_cast<double>(i) /
                               static_cast<double>(cfg.n_mels + 1);
    hz[i] = MelScaleInverse(mel);
  }
  return hz;
}

}  // namespace

std::vector<double> MelFilterCenters(const FeatureConfig& cfg,
                                     uint32_t sample_rate) {
  std::vector<double> points = MelPoints(cfg, sample_rate);
  return {points.begin() + 1, points.end() - 1};
}

std::vector<double> MelFilterEnergies(const std::vector<double>& power,
                                      const FeatureConfig& cfg,
                                      uint32_t sample_rate) {
  const std::vector<double> edges = MelPoints(cfg, sample_rate);
  const double bin_hz =
      static_cast<double>(sample_rate) / static_cast<double>(cfg.n_fft);
  std::vector<double> energies(cfg.n_mels, 0.0);
  for (size_t m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1],
                 right = edges[m + 2];
    for (size_t k = 0; k < power.size(); ++k) {
      const double f = k * bin_hz;
      double weight = 0.0;
      if (f > left && f < center) {
        weight = (f - left) / (center - left);
      } else if (f >= center && f < right) {
        weight = (right - f) / (right - center);
      }
      if (weight > 0.0) energies[m] += weight * power[k];
    }
  }
  return energies;
}

FeatureMatrix MfccPipeline(const WindowedFrames& frames,
                           const FeatureConfig& cfg) {
  if (cfg.n_ceps >= cfg.n_mels) {
    throw ConfigError("mfcc: n_ceps " + std::to_string(cfg.n_ceps) +
                      " must be smaller than the filter count " +
                      std::to_string(cfg.n_mels));
  }
  const uint32_t static_dim =
      cfg.n_ceps + (cfg.include_log_energy ? 1 : 0);
  FeatureMatrix fm;
  fm.num_frames = static_cast<uint32_t>(frames.frames.size());
  fm.dim = static_dim;
  fm.frame_hop_ms = cfg.hop_ms;
  fm.window_ms = cfg.window_ms;
  fm.layout = "mfcc" + std::to_string(cfg.n_ceps) +
              (cfg.include_log_energy ? "+loge" : "");
  fm.data.resize(static_cast<size_t>(fm.num_frames) * fm.dim);

  // Orthonormal DCT-II rows 1..n_ceps over n_mels points.
  const size_t n = cfg.n_mels;
  std::vector<double> dct(static_cast<size_t>(cfg.n_ceps) * n);
  const double scale = std::sqrt(2.0 / static_cast<double>(n));
  for (size_t j = 1; j <= cfg.n_ceps; ++j) {
    for (size_t i = 0; i < n; ++i) {
      dct[(j - 1) * n + i] =
          scale * std::cos(std::numbers::pi * static_cast<double>(j) *
                           (static_cast<double>(i) + 0.5) /
                           static_cast<double>(n));
    }
  }

  for (size_t t = 0; t < frames.frames.size(); ++t) {
    const std::vector<double> power =
        PowerSpectrum(frames.frames[t], cfg.n_fft);
    std::vector<double> mel =
        MelFilterEnergies(power, cfg, frames.sample_rate);
    for (double& e : mel) e = std::log(std::max(e, kLogMelFloor));
    double* row = fm.Row(t);
    for (size_t j = 0; j < cfg.n_ceps; ++j) {
      double c = 0.0;
      const double* basis = dct.data() + j * n;
      for (size_t i = 0; i < n; ++i) c += basis[i] * mel[i];
      row[j] = c;
    }
    if (cfg.include_log_energy) {
      row[cfg.n_ceps] =
          std::log(std::max(frames.raw_energy[t], kLogEnergyFloor));
    }
  }
  return fm;
}

FeatureMatrix AppendDeltas(const FeatureMatrix& fm) {
  constexpr int kWindow = 2;  // regression window K
  constexpr double kNorm = 10.0;  // 2 * (1^2 + 2^2)
  if (fm.num_frames < 2 * kWindow + 1) {
    throw ShortUtteranceError(
        "append_deltas: need at least " + std::to_string(2 * kWindow + 1) +
        " frames, got " + std::to_string(fm.num_frames));
  }
  const uint32_t d = fm.dim;
  FeatureMatrix out;
  out.num_frames = fm.num_frames;
  out.dim = 3 * d;
  out.frame_hop_ms = fm.frame_hop_ms;
  out.window_ms = fm.window_ms;
  out.layout = fm.layout + "+delta+deltadelta";
  out.data.resize(static_cast<size_t>(out.num_frames) * out.dim);

  auto regress = [&](const auto& value_at, size_t t, size_t j) {
    const int T = static_cast<int>(fm.num_frames);
    auto clamp = [T](int i) { return std::clamp(i, 0, T - 1); };
    double acc = 0.0;
    for (int k = 1; k <= kWindow; ++k) {
      acc += k * (value_at(clamp(static_cast<int>(t) + k), j) -
                  value_at(clamp(static_cast<int>(t) - k), j));
    }
    return acc / kNorm;
  };

  auto statics = [&](int t, size_t j) { return fm.at(t, j); };
  for (size_t t = 0; t < fm.num_frames; ++t) {
    double* row = out.Row(t);
    std::memcpy(row, fm.Row(t), d * sizeof(double));
    for (size_t j = 0; j < d; ++j) row[d + j] = regress(statics, t, j);
  }
  auto deltas = [&](int t, size_t j) { return out.at(t, d + j); };
  for (size_t t = 0; t < fm.num_frames; ++t) {
    double* row = out.Row(t);
    for (size_t j = 0; j < d; ++j) row[2 * d + j] = regress(deltas, t, j);
  }
  return out;
}

FeatureMatrix ComputeFeatures(const Waveform& w, const FeatureConfig& cfg) {
  FeatureMatrix fm = MfccPipeline(FrameAndWindow(w, cfg), cfg);
  if (cfg.append_deltas) fm = AppendDeltas(fm);
  return fm;
}

void WriteFeatureFile(const std::string& path, const FeatureMatrix& fm) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("feature file: cannot write " + path);
  f.write("JFEF", 4);
  f.write(reinterpret_cast<const char*>(&fm.num_frames), 4);
  f.write(reinterpret_cast<const char*>(&fm.dim), 4);
  f.write(reinterpret_cast<const char*>(fm.data.data()),
          static_cast<std::streamsize>(fm.data.size() * sizeof(double)));
  if (!f) throw IoError("feature file: write failed for " + path);
}

FeatureMatrix ReadFeatureFile(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("feature file: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "JFEF", 4) != 0) {
    throw IoError("feature file: bad magic in " + path);
  }
  FeatureMatrix fm;
  f.read(reinterpret_cast<char*>(&fm.num_frames), 4);
  f.read(reinterpret_cast<char*>(&fm.dim), 4);
  if (!f) throw IoError("feature file: truncated header in " + path);
  fm.data.resize(static_cast<size_t>(fm.num_frames) * fm.dim);
  f.read(reinterpret_cast<char*>(fm.data.data()),
         static_cast<std::streamsize>(fm.data.size() * sizeof(double)));
  if (!f) throw IoError("feature file: truncated payload in " + path);
  return fm;
}

}  // namespace jfe
