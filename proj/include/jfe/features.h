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
//
// Acoustic front-end: framing, Hamming window, MFCC (power spectrum, mel
// filterbank, DCT-II), log-energy and regression deltas. Two layouts are
// used downstream: 19 MFCCs + log-energy + deltas + delta-deltas (60-dim)
// and 30 plain MFCCs (30-dim).

#ifndef JFE_FEATURES_H_
#define JFE_FEATURES_H_

#include <cstdint>
#include <string>
#include <vector>

#include "jfe/wav_io.h"

namespace jfe {

struct FeatureConfig {
  uint32_t window_ms = 20;
  uint32_t hop_ms = 10;
  uint32_t n_fft = 512;    // power of two; frames are zero-padded
  uint32_t n_mels = 26;
  uint32_t n_ceps = 19;    // DCT coefficients 1..n_ceps (0 excluded)
  bool include_log_energy = true;
  bool append_deltas = true;

  static FeatureConfig Dvector();  // 19 MFCC + logE + d + dd = 60
  static FeatureConfig Xvector();  // 30 MFCC = 30 (40 mel filters)
};

struct FeatureMatrix {
  std::vector<double> data;  // row-major, num_frames x dim
  uint32_t num_frames = 0;
  uint32_t dim = 0;
  uint32_t frame_hop_ms = 10;
  uint32_t window_ms = 20;
  std::string layout;

  const double* Row(size_t t) const { return data.data() + t * dim; }
  double* Row(size_t t) { return data.data() + t * dim; }
  double at(size_t t, size_t d) const { return data[t * dim + d]; }
};

// Windowed frames plus the pre-window frame energies the log-energy term
// is computed from.
struct WindowedFrames {
  std::vector<std::vector<double>> frames;
  std::vector<double> raw_energy;
  uint32_t sample_rate = 16000;
};

// floor((num_samples - window_len) / hop_len) + 1
size_t FrameCount(size_t num_samples, size_t window_len, size_t hop_len);

// 0.54 - 0.46 cos(2 pi n / (L - 1))
double HammingValue(double n, size_t length);

WindowedFrames FrameAndWindow(const Waveform& w, const FeatureConfig& cfg);

// Static MFCC part: power spectrum -> mel filterbank -> floored log ->
// orthonormal DCT-II keeping coefficients 1..n_ceps, plus floored
// log-energy when configured.
FeatureMatrix MfccPipeline(const WindowedFrames& frames,
                           const FeatureConfig& cfg);

// Regression deltas with window K=2 and clamped edges; output dim is
// three times the static dim.
FeatureMatrix AppendDeltas(const FeatureMatrix& fm);

// Full chain per the configured layout.
FeatureMatrix ComputeFeatures(const Waveform& w, const FeatureConfig& cfg);

// Magnitude-squared DFT bins 0..n_fft/2 of a zero-padded frame.
std::vector<double> PowerSpectrum(const std::vector<double>& frame,
                                  uint32_t n_fft);

double MelScale(double hz);
double MelScaleInverse(double mel);
// Center frequencies (Hz) of the triangular filters.
std::vector<double> MelFilterCenters(const FeatureConfig& cfg,
                                     uint32_t sample_rate);
// Per-frame mel filterbank energies (before the log), exposed for tests.
std::vector<double> MelFilterEnergies(const std::vector<double>& power,
                                      const FeatureConfig& cfg,
                                      uint32_t sample_rate);

// Binary feature file: magic "JFEF", u32 frames, u32 dim, float64 payload,
// little-endian. Round-trips bit-exactly.
void WriteFeatureFile(const std::string& path, const FeatureMatrix& fm);
FeatureMatrix ReadFeatureFile(const std::string& path);

}  // namespace jfe

#endif  // JFE_FEATURES_H_
