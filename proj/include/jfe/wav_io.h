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

#ifndef JFE_WAV_IO_H_
#define JFE_WAV_IO_H_

#include <cstdint>
#include <string>
#include <vector>

namespace jfe {

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  uint32_t sample_rate = 16000;
};

// Mono 16-bit PCM only; anything else is an IoError naming the path.
Waveform ReadWav(const std::string& path);
void WriteWav(const std::string& path, const Waveform& w);

// The int16 round trip applied in memory, so in-memory pipelines see
// exactly what a write-then-read pipeline would.
void QuantizeToPcm16(Waveform& w);

}  // namespace jfe

#endif  // JFE_WAV_IO_H_
