#include "promos/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "promos/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace promos {

namespace {

constexpr char kMagic[8] = {'P', 'R', 'O', 'M', 'O', 'S', 'C', 'K'};

template <class T>
void put_le(std::string& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(const std::string& in, std::size_t& pos, const std::string& source) {
  if (pos + sizeof(T) > in.size()) throw CheckpointError(source + ": truncated checkpoint");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  return v;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

const ad::Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw CheckpointError("checkpoint (" + kind + ") has no tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const auto& e) { return e.first == name; });
}

std::string serialize(const Checkpoint& ck) {
  json header;
  header["kind"] = ck.kind;
  header["meta"] = ck.meta;
  header["tensors"] = json::array();
  for (const auto& [name, t] : ck.tensors) header["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
  const std::string h = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, h.size());
  out += h;
  for (const auto& [name, t] : ck.tensors)
    for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Checkpoint deserialize(const std::string& bytes, const std::string& source) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(source + ": not a checkpoint (bad magic)");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = get_le<std::uint32_t>(bytes, pos, source);
  if (version != kCheckpointVersion) {
    throw CheckpointError(source + ": checkpoint version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto hlen = get_le<std::uint64_t>(bytes, pos, source);
  if (pos + hlen > bytes.size()) throw CheckpointError(source + ": truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(pos, hlen));
  } catch (const json::exception& e) {
    throw CheckpointError(source + ": corrupt header: " + e.what());
  }
  pos += hlen;
  Checkpoint ck;
  try {
    ck.kind = header.at("kind").get<std::string>();
    ck.meta = header.at("meta");
    for (const auto& entry : header.at("tensors")) {
      auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      std::size_t count = 1;
      for (auto s : shape) count *= s;
      std::vector<double> data(count);
      for (auto& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos, source));
      ck.tensors.emplace_back(entry.at("name").get<std::string>(), ad::Tensor(std::move(shape), std::move(data)));
    }
  } catch (const json::exception& e) {
    throw CheckpointError(source + ": malformed header: " + e.what());
  }
  if (pos != bytes.size()) throw CheckpointError(source + ": trailing bytes after payload");
  return ck;
}

void write_checkpoint(const fs::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::string bytes = serialize(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint read_checkpoint(const fs::path& path) { return deserialize(slurp(path), path.string()); }

std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const fs::path& path) { return content_hash(slurp(path)); }

Checkpoint teacher_checkpoint(const TeacherModel& t) {
  Checkpoint ck;
  ck.kind = "teacher";
  ck.meta = {{"in_dim", t.in_dim()}, {"hidden_dim", t.hidden_dim()}, {"out_dim", t.out_dim()},
             {"adapter_dim", t.adapter_dim()}, {"frozen", t.frozen}};
  ck.add(t.gcn_w1);
  ck.add(t.gcn_w2);
  ck.add(t.adapter_w);
  ck.add(t.adapter_b);
  return ck;
}

TeacherModel teacher_from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != "teacher" && ck.kind != "model") {
    throw CheckpointError("expected a teacher checkpoint, got kind '" + ck.kind + "'");
  }
  TeacherModel t;
  t.gcn_w1.value = ck.get(t.gcn_w1.name);
  t.gcn_w2.value = ck.get(t.gcn_w2.name);
  t.adapter_w.value = ck.get(t.adapter_w.name);
  t.adapter_b.value = ck.get(t.adapter_b.name);
  t.frozen = true;
  t.validate();
  return t;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

ad::Tensor read_matrix_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<double> values;
  std::size_t rows = 0, cols = 0, line = 0;
  std::string raw;
  while (std::getline(in, raw)) {
    ++line;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (raw.empty()) continue;
    std::size_t count = 0, start = 0;
    while (true) {
      const auto comma = raw.find(',', start);
      std::string tok = raw.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      tok.erase(0, tok.find_first_not_of(' '));
      tok.erase(tok.find_last_not_of(' ') + 1);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw ValidationError(path.filename().string() + ":" + std::to_string(line) + ": malformed value '" + tok + "'");
      }
      values.push_back(v);
      ++count;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (rows == 0) cols = count;
    if (count != cols) {
      throw ValidationError(path.filename().string() + ":" + std::to_string(line) + ": expected " +
                            std::to_string(cols) + " columns, got " + std::to_string(count));
    }
    ++rows;
  }
  if (rows == 0) throw ValidationError(path.string() + ": empty matrix");
  return ad::Tensor({rows, cols}, std::move(values));
}

void write_matrix_csv(const fs::path& path, const ad::Tensor& m) {
  std::string out;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) out.push_back(',');
      out += format_double(m(r, c));
    }
    out.push_back('\n');
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << out;
}

TeacherModel import_teacher_csv(const fs::path& dir) {
  TeacherModel t;
  t.gcn_w1.value = read_matrix_csv(dir / "gcn_w1.csv");
  t.gcn_w2.value = read_matrix_csv(dir / "gcn_w2.csv");
  const std::size_t out = t.gcn_w2.value.cols();
  t.adapter_w.value = fs::exists(dir / "adapter_w.csv") ? read_matrix_csv(dir / "adapter_w.csv") : ad::Tensor::identity(out);
  t.adapter_b.value = fs::exists(dir / "adapter_b.csv") ? read_matrix_csv(dir / "adapter_b.csv")
                                                        : ad::Tensor::matrix(1, t.adapter_w.value.cols());
  t.frozen = true;
  t.validate();
  return t;
}

}  // namespace promos
