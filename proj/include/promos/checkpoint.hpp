#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "promos/autodiff.hpp"
#include "promos/teacher.hpp"

namespace promos {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container: "PROMOSCK", u32 version, u64 header length, JSON header
/// (kind, meta, tensor names and shapes), then little-endian float64 payloads
/// in header order.
struct Checkpoint {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, ad::Tensor>> tensors;

  void add(const ad::Parameter& p) { tensors.emplace_back(p.name, p.value); }
  const ad::Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

std::string serialize(const Checkpoint& ck);
Checkpoint deserialize(const std::string& bytes, const std::string& source = "<memory>");

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// FNV-1a 64 over the bytes, as 16 lowercase hex digits.
std::string content_hash(const std::string& bytes);
std::string file_hash(const std::filesystem::path& path);

Checkpoint teacher_checkpoint(const TeacherModel& t);
TeacherModel teacher_from_checkpoint(const Checkpoint& ck);

/// Builds a frozen teacher from gcn_w1.csv, gcn_w2.csv and optional
/// adapter_w.csv / adapter_b.csv in `dir` (identity / zero when absent).
TeacherModel import_teacher_csv(const std::filesystem::path& dir);

/// Dense CSV matrix reader/writer shared by the importer and dump-prototypes.
ad::Tensor read_matrix_csv(const std::filesystem::path& path);
void write_matrix_csv(const std::filesystem::path& path, const ad::Tensor& m);

std::string format_double(double v);

}  // namespace promos
