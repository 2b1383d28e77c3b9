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

#include "jfe/wav_io.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "jfe/error.h"

namespace jfe {

namespace {

int16_t ToPcm16(double x) {
  const double clamped = std::clamp(x, -1.0, 1.0);
  return static_cast<int16_t>(std::lround(clamped * 32767.0));
}

void PutU32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>(v >> (8 * i)));
}

void PutU16(std::string& s, uint16_t v) {
  for (int i = 0; i < 2; ++i) s.push_back(static_cast<char>(v >> (8 * i)));
}

uint32_t GetU32(const char* p) {
  uint32_t v;
  std::memcpy(&v, p, 4);
  return v;  // little-endian hosts only, as is the rest of the file I/O
}

uint16_t GetU16(const char* p) {
  uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}

}  // namespace

void QuantizeToPcm16(Waveform& w) {
  for (double& s : w.samples) s = ToPcm16(s) / 32767.0;
}

void WriteWav(const std::string& path, const Waveform& w) {
  const uint32_t n = static_cast<uint32_t>(w.samples.size());
  const uint32_t data_bytes = n * 2;
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  PutU32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  PutU32(out, 16);
  PutU16(out, 1);  // PCM
  PutU16(out, 1);  // mono
  PutU32(out, w.sample_rate);
  PutU32(out, w.sample_rate * 2);
  PutU16(out, 2);
  PutU16(out, 16);
  out += "data";
  PutU32(out, data_bytes);
  for (double s : w.samples) {
    const int16_t q = ToPcm16(s);
    out.push_back(static_cast<char>(q & 0xff));
    out.push_back(static_cast<char>((q >> 8) & 0xff));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f || !f.write(out.data(), static_cast<std::streamsize>(out.size()))) {
    throw IoError("wav: cannot write " + path);
  }
}

Waveform ReadWav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("wav: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < 44 || buf.compare(0, 4, "RIFF") != 0 ||
      buf.compare(8, 4, "WAVE") != 0) {
    throw IoError("wav: not a RIFF/WAVE file: " + path);
  }
  Waveform w;
  bool have_fmt = false;
  size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::string id = buf.substr(pos, 4);
    const uint32_t size = GetU32(buf.data() + pos + 4);
    const size_t body = pos + 8;
    if (body + size > buf.size()) {
      throw IoError("wav: truncated chunk in " + path);
    }
    if (id == "fmt ") {
      if (size < 16) throw IoError("wav: bad fmt chunk in " + path);
      const uint16_t format = GetU16(buf.data() + body);
      const uint16_t channels = GetU16(buf.data() + body + 2);
      const uint16_t bits = GetU16(buf.data() + body + 14);
      if (format != 1 || channels != 1 || bits != 16) {
        throw IoError("wav: only mono 16-bit PCM is supported: " + path);
      }
      w.sample_rate = GetU32(buf.data() + body + 4);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw IoError("wav: data before fmt in " + path);
      const size_t n = size / 2;
      w.samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        const int16_t q =
            static_cast<int16_t>(GetU16(buf.data() + body + 2 * i));
        w.samples[i] = q / 32767.0;
      }
      return w;
    }
    pos = body + size + (size & 1);
  }
  throw IoError("wav: no data chunk in " + path);
}

}  // namespace jfe
