// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "zsu/dsp.hpp"
#include "zsu/tensor.hpp"

namespace zsu::corpus {

// ---- WAV (16-bit PCM, little-endian; stereo downmixed with a warning) ----

dsp::AudioBuffer load_wav(const std::string &path);
void save_wav(const std::string &path, const dsp::AudioBuffer &audio);

// ---- Manifest: UTF-8 tab-separated text with a header line ----

struct ManifestEntry {
  std::string utterance_id;
  std::string audio_path;
  std::string speaker_id;
  std::optional<double> duration_seconds;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  int sample_rate = 16000;

  std::vector<std::string> speakers() const;  // sorted unique speaker ids
};

struct ManifestValidation {
  Manifest manifest;
  std::vector<std::string> errors;  // complete list, not first-error

  bool ok() const { return errors.empty(); }
};

// Parses and checks every entry (id uniqueness, speaker presence, file
// existence).  check_files=false skips the filesystem probe.
ManifestValidation validate_manifest(const std::string &path,
                                     bool check_files = true);
void save_manifest(const std::string &path, const Manifest &manifest);

// ---- ModelBundle: versioned named-tensor container ----
//
// Byte layout (all integers little-endian):
//   magic "ZSU1" | u32 version | kind string | metadata dict | tensor table
//   | payload | u64 CRC-64/XZ over the payload region
// Strings are u32 length + bytes.  Tensor table rows: name, u8 dtype
// (0 = f32, 1 = f64), u32 ndim, u64 dims.  Payload holds tensor data in
// table order.

enum class TensorDType : std::uint8_t { F32 = 0, F64 = 1 };

struct NamedTensor {
  std::string name;
  Tensor tensor;
  TensorDType dtype = TensorDType::F32;
};

struct ModelBundle {
  std::string kind;  // e.g. "kmeans", "gmm", "vqvae", "inverter", "features"
  std::map<std::string, std::string> metadata;
  std::vector<NamedTensor> tensors;

  void add(const std::string &name, Tensor t,
           TensorDType dtype = TensorDType::F64);
  const NamedTensor *find(const std::string &name) const;
  const Tensor &require(const std::string &name) const;
  bool has_meta(const std::string &key) const { return metadata.count(key) > 0; }
  std::string meta(const std::string &key) const;
  double meta_double(const std::string &key) const;
  std::int64_t meta_int(const std::string &key) const;
};

// Atomic write (temp file + rename).
void save_bundle(const ModelBundle &bundle, const std::string &path);
ModelBundle load_bundle(const std::string &path);

constexpr std::uint32_t kBundleVersion = 1;

std::uint64_t crc64(const std::uint8_t *data, std::size_t size);

// ---- Code sequence text format ----
// One line per utterance: "utterance-id idx idx idx ...".

void save_code_lines(const std::string &path,
                     const std::vector<std::pair<std::string, std::vector<std::int64_t>>> &lines);
std::vector<std::pair<std::string, std::vector<std::int64_t>>> load_code_lines(
    const std::string &path);

}  // namespace zsu::corpus
