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

#include "zsu/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace zsu::corpus {

namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

void atomic_write(const std::string &path, const std::vector<std::uint8_t> &bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open file for writing: " + tmp);
    out.write(reinterpret_cast<const char *>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

std::uint16_t read_u16(const std::vector<std::uint8_t> &b, std::size_t off) {
  return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}
std::uint32_t read_u32(const std::vector<std::uint8_t> &b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) |
         (static_cast<std::uint32_t>(b[off + 1]) << 8) |
         (static_cast<std::uint32_t>(b[off + 2]) << 16) |
         (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

void append_u16(std::vector<std::uint8_t> &b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xff));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}
void append_u32(std::vector<std::uint8_t> &b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}
void append_u64(std::vector<std::uint8_t> &b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_u64(const std::vector<std::uint8_t> &b, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[off + i]) << (8 * i);
  return v;
}

}  // namespace

// ---- WAV ----

dsp::AudioBuffer load_wav(const std::string &path) {
  const std::vector<std::uint8_t> b = read_file(path);
  auto fail = [&](std::size_t off, const std::string &what) {
    std::ostringstream os;
    os << "WAV parse error in " << path << " at byte " << off << ": " << what;
    throw DataError(os.str());
  };
  if (b.size() < 12) fail(0, "file shorter than RIFF header");
  if (std::memcmp(b.data(), "RIFF", 4) != 0) fail(0, "missing RIFF magic");
  if (std::memcmp(b.data() + 8, "WAVE", 4) != 0) fail(8, "missing WAVE tag");

  std::size_t off = 12;
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t data_off = 0, data_size = 0;
  while (off + 8 <= b.size()) {
    char id[5] = {0};
    std::memcpy(id, b.data() + off, 4);
    const std::uint32_t chunk_size = read_u32(b, off + 4);
    const std::size_t body = off + 8;
    if (body + chunk_size > b.size()) fail(off, "chunk extends past end of file");
    if (std::strncmp(id, "fmt ", 4) == 0) {
      if (chunk_size < 16) fail(off, "fmt chunk too small");
      format = read_u16(b, body);
      channels = read_u16(b, body + 2);
      rate = read_u32(b, body + 4);
      bits = read_u16(b, body + 14);
      have_fmt = true;
    } else if (std::strncmp(id, "data", 4) == 0) {
      data_off = body;
      data_size = chunk_size;
    }
    off = body + chunk_size + (chunk_size & 1);  // chunks are word-aligned
  }
  if (!have_fmt) fail(12, "missing fmt chunk");
  if (data_off == 0) fail(12, "missing data chunk");
  if (format != 1) throw DataError("unsupported WAV codec in " + path +
                                   " (only 16-bit PCM is supported)");
  if (bits != 16) throw DataError("unsupported bit depth in " + path +
                                  " (only 16-bit PCM is supported)");
  if (channels == 0) fail(12, "zero channels");
  if (channels > 1)
    std::fprintf(stderr, "warning: %s has %u channels; downmixing to mono\n",
                 path.c_str(), channels);

  const std::size_t frame_bytes = static_cast<std::size_t>(channels) * 2;
  const std::size_t n_frames = data_size / frame_bytes;
  dsp::AudioBuffer audio;
  audio.sample_rate = static_cast<int>(rate);
  audio.samples.resize(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (std::uint16_t c = 0; c < channels; ++c) {
      const std::size_t p = data_off + i * frame_bytes + c * 2;
      const std::int16_t s = static_cast<std::int16_t>(read_u16(b, p));
      acc += static_cast<double>(s);
    }
    audio.samples[i] = acc / (channels * 32768.0);
  }
  return audio;
}

void save_wav(const std::string &path, const dsp::AudioBuffer &audio) {
  const std::size_t n = audio.samples.size();
  const std::uint32_t data_size = static_cast<std::uint32_t>(n * 2);
  std::vector<std::uint8_t> b;
  b.reserve(44 + data_size);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  append_u32(b, 36 + data_size);
  b.insert(b.end(), {'W', 'A', 'V', 'E'});
  b.insert(b.end(), {'f', 'm', 't', ' '});
  append_u32(b, 16);
  append_u16(b, 1);  // PCM
  append_u16(b, 1);  // mono
  append_u32(b, static_cast<std::uint32_t>(audio.sample_rate));
  append_u32(b, static_cast<std::uint32_t>(audio.sample_rate * 2));
  append_u16(b, 2);
  append_u16(b, 16);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  append_u32(b, data_size);
  for (double v : audio.samples) {
    const double clamped = std::clamp(v, -1.0, 1.0);
    const std::int16_t s = static_cast<std::int16_t>(
        std::lrint(std::clamp(clamped * 32768.0, -32768.0, 32767.0)));
    append_u16(b, static_cast<std::uint16_t>(s));
  }
  atomic_write(path, b);
}

// ---- Manifest ----

std::vector<std::string> Manifest::speakers() const {
  std::set<std::string> ids;
  for (const auto &e : entries) ids.insert(e.speaker_id);
  return std::vector<std::string>(ids.begin(), ids.end());
}

ManifestValidation validate_manifest(const std::string &path, bool check_files) {
  ManifestValidation result;
  std::ifstream in(path);
  if (!in) {
    result.errors.push_back("cannot open manifest: " + path);
    return result;
  }
  const fs::path base = fs::path(path).parent_path();
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> first_seen;
  bool header_done = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (!header_done) {
      header_done = true;
      if (!fields.empty() && fields[0] == "id") continue;  // header line
    }
    if (fields.size() < 3) {
      result.errors.push_back("line " + std::to_string(line_no) +
                              ": expected at least 3 tab-separated fields (id, audio, speaker)");
      continue;
    }
    ManifestEntry e;
    e.utterance_id = fields[0];
    e.audio_path = fields[1];
    e.speaker_id = fields[2];
    if (fields.size() >= 4 && !fields[3].empty()) {
      try {
        e.duration_seconds = std::stod(fields[3]);
      } catch (const std::exception &) {
        result.errors.push_back("line " + std::to_string(line_no) +
                                ": bad duration '" + fields[3] + "'");
      }
    }
    if (e.speaker_id.empty())
      result.errors.push_back("line " + std::to_string(line_no) +
                              ": missing speaker id for '" + e.utterance_id + "'");
    auto [it, inserted] = first_seen.emplace(e.utterance_id, line_no);
    if (!inserted)
      result.errors.push_back("duplicate utterance id '" + e.utterance_id +
                              "' at lines " + std::to_string(it->second) + " and " +
                              std::to_string(line_no));
    if (check_files) {
      fs::path p(e.audio_path);
      if (p.is_relative()) p = base / p;
      if (!fs::exists(p))
        result.errors.push_back("missing audio file: " + p.string() +
                                " (utterance '" + e.utterance_id + "')");
      else
        e.audio_path = p.string();
    }
    result.manifest.entries.push_back(std::move(e));
  }
  std::sort(result.errors.begin(), result.errors.end());
  return result;
}

void save_manifest(const std::string &path, const Manifest &manifest) {
  std::ostringstream os;
  os << "id\taudio\tspeaker\tduration\n";
  for (const auto &e : manifest.entries) {
    os << e.utterance_id << '\t' << e.audio_path << '\t' << e.speaker_id << '\t';
    if (e.duration_seconds) os << *e.duration_seconds;
    os << '\n';
  }
  const std::string s = os.str();
  atomic_write(path, std::vector<std::uint8_t>(s.begin(), s.end()));
}

// ---- CRC-64/XZ ----

std::uint64_t crc64(const std::uint8_t *data, std::size_t size) {
  static const std::array<std::uint64_t, 256> table = [] {
    std::array<std::uint64_t, 256> t{};
    const std::uint64_t poly = 0xC96C5795D7870F42ull;  // reflected ECMA-182
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint64_t crc = i;
      for (int j = 0; j < 8; ++j)
        crc = (crc & 1) ? (crc >> 1) ^ poly : crc >> 1;
      t[i] = crc;
    }
    return t;
  }();
  std::uint64_t crc = ~0ull;
  for (std::size_t i = 0; i < size; ++i)
    crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return ~crc;
}

// ---- ModelBundle ----

void ModelBundle::add(const std::string &name, Tensor t, TensorDType dtype) {
  tensors.push_back({name, std::move(t), dtype});
}

const NamedTensor *ModelBundle::find(const std::string &name) const {
  for (const auto &nt : tensors)
    if (nt.name == name) return &nt;
  return nullptr;
}

const Tensor &ModelBundle::require(const std::string &name) const {
  const NamedTensor *nt = find(name);
  if (!nt) throw DataError("bundle missing tensor '" + name + "'");
  return nt->tensor;
}

std::string ModelBundle::meta(const std::string &key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw DataError("bundle missing metadata '" + key + "'");
  return it->second;
}

double ModelBundle::meta_double(const std::string &key) const {
  return std::stod(meta(key));
}

std::int64_t ModelBundle::meta_int(const std::string &key) const {
  return std::stoll(meta(key));
}

namespace {

void append_string(std::vector<std::uint8_t> &b, const std::string &s) {
  append_u32(b, static_cast<std::uint32_t>(s.size()));
  b.insert(b.end(), s.begin(), s.end());
}

std::string read_string(const std::vector<std::uint8_t> &b, std::size_t &off) {
  if (off + 4 > b.size()) throw DataError("bundle truncated in string length");
  const std::uint32_t len = read_u32(b, off);
  off += 4;
  if (off + len > b.size()) throw DataError("bundle truncated in string body");
  std::string s(reinterpret_cast<const char *>(b.data() + off), len);
  off += len;
  return s;
}

void append_f32(std::vector<std::uint8_t> &b, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  append_u32(b, bits);
}

void append_f64(std::vector<std::uint8_t> &b, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  append_u64(b, bits);
}

}  // namespace

void save_bundle(const ModelBundle &bundle, const std::string &path) {
  std::vector<std::uint8_t> b;
  b.insert(b.end(), {'Z', 'S', 'U', '1'});
  append_u32(b, kBundleVersion);
  append_string(b, bundle.kind);
  append_u32(b, static_cast<std::uint32_t>(bundle.metadata.size()));
  for (const auto &[k, v] : bundle.metadata) {
    append_string(b, k);
    append_string(b, v);
  }
  append_u32(b, static_cast<std::uint32_t>(bundle.tensors.size()));
  for (const auto &nt : bundle.tensors) {
    append_string(b, nt.name);
    b.push_back(static_cast<std::uint8_t>(nt.dtype));
    append_u32(b, static_cast<std::uint32_t>(nt.tensor.rank()));
    for (auto d : nt.tensor.shape()) append_u64(b, static_cast<std::uint64_t>(d));
  }
  const std::size_t payload_begin = b.size();
  for (const auto &nt : bundle.tensors)
    for (std::int64_t i = 0; i < nt.tensor.numel(); ++i)
      nt.dtype == TensorDType::F32 ? append_f32(b, nt.tensor[i])
                                   : append_f64(b, nt.tensor[i]);
  append_u64(b, crc64(b.data() + payload_begin, b.size() - payload_begin));
  atomic_write(path, b);
}

ModelBundle load_bundle(const std::string &path) {
  const std::vector<std::uint8_t> b = read_file(path);
  if (b.size() < 8 || std::memcmp(b.data(), "ZSU1", 4) != 0)
    throw DataError("not a ZSU1 bundle: " + path);
  std::size_t off = 4;
  const std::uint32_t version = read_u32(b, off);
  off += 4;
  if (version > kBundleVersion)
    throw DataError("unsupported bundle version " + std::to_string(version) +
                    " in " + path);
  ModelBundle bundle;
  bundle.kind = read_string(b, off);
  const std::uint32_t n_meta = read_u32(b, off);
  off += 4;
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string key = read_string(b, off);
    bundle.metadata[key] = read_string(b, off);
  }
  const std::uint32_t n_tensors = read_u32(b, off);
  off += 4;
  struct Row {
    std::string name;
    TensorDType dtype;
    std::vector<std::int64_t> shape;
  };
  std::vector<Row> rows;
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    Row row;
    row.name = read_string(b, off);
    if (off + 5 > b.size()) throw DataError("bundle truncated in tensor table");
    row.dtype = static_cast<TensorDType>(b[off]);
    off += 1;
    const std::uint32_t ndim = read_u32(b, off);
    off += 4;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      if (off + 8 > b.size()) throw DataError("bundle truncated in tensor dims");
      row.shape.push_back(static_cast<std::int64_t>(read_u64(b, off)));
      off += 8;
    }
    rows.push_back(std::move(row));
  }
  const std::size_t payload_begin = off;
  std::size_t payload_size = 0;
  for (const auto &row : rows) {
    std::int64_t numel = 1;
    for (auto d : row.shape) numel *= d;
    payload_size += static_cast<std::size_t>(numel) *
                    (row.dtype == TensorDType::F32 ? 4 : 8);
  }
  if (payload_begin + payload_size + 8 != b.size())
    throw DataError("bundle size mismatch in " + path);
  const std::uint64_t stored = read_u64(b, payload_begin + payload_size);
  const std::uint64_t computed = crc64(b.data() + payload_begin, payload_size);
  if (stored != computed)
    throw DataError("bundle checksum mismatch in " + path + " (corrupt file)");

  for (const auto &row : rows) {
    std::int64_t numel = 1;
    for (auto d : row.shape) numel *= d;
    Tensor t(row.shape);
    for (std::int64_t i = 0; i < numel; ++i) {
      if (row.dtype == TensorDType::F32) {
        const std::uint32_t bits = read_u32(b, off);
        off += 4;
        float f;
        std::memcpy(&f, &bits, 4);
        t[i] = static_cast<double>(f);
      } else {
        const std::uint64_t bits = read_u64(b, off);
        off += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        t[i] = v;
      }
    }
    bundle.tensors.push_back({row.name, std::move(t), row.dtype});
  }
  return bundle;
}

// ---- code lines ----

void save_code_lines(
    const std::string &path,
    const std::vector<std::pair<std::string, std::vector<std::int64_t>>> &lines) {
  std::ostringstream os;
  for (const auto &[id, codes] : lines) {
    os << id;
    for (auto c : codes) os << ' ' << c;
    os << '\n';
  }
  const std::string s = os.str();
  atomic_write(path, std::vector<std::uint8_t>(s.begin(), s.end()));
}

std::vector<std::pair<std::string, std::vector<std::int64_t>>> load_code_lines(
    const std::string &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open code file: " + path);
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id;
    ss >> id;
    std::vector<std::int64_t> codes;
    std::int64_t c;
    while (ss >> c) codes.push_back(c);
    out.emplace_back(std::move(id), std::move(codes));
  }
  return out;
}

}  // namespace zsu::corpus
