#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace ehd {

inline constexpr const char* kCodeVersion = "0.1.0";
inline constexpr const char* kFormatVersions = "shard=1 checkpoint=EHDCKPT1";

// FNV-1a over file bytes; cheap drift detection, not cryptographic.
inline std::string hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("hash_file: cannot open " + path);
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<uint8_t>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

// Provenance record for one CLI run; written with status "running" before
// work starts and rewritten "complete" with wall clock at the end.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::map<std::string, std::string> config;
  uint64_t seed = 0;
  std::string version = kCodeVersion;
  std::string formats = kFormatVersions;
  std::map<std::string, std::string> input_hashes;  // path -> fnv1a hex
  std::vector<std::string> outputs;
  double wall_clock_seconds = 0.0;
  std::string status = "running";

  void add_input(const std::string& path) { input_hashes[path] = hash_file(path); }
};

inline void write_manifest(const RunManifest& m, const std::string& path) {
  nlohmann::json j;
  j["command"] = m.command;
  j["argv"] = m.argv;
  j["config"] = m.config;
  j["seed"] = m.seed;
  j["version"] = m.version;
  j["formats"] = m.formats;
  j["input_hashes"] = m.input_hashes;
  j["outputs"] = m.outputs;
  j["wall_clock_seconds"] = m.wall_clock_seconds;
  j["status"] = m.status;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("manifest: cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("manifest: write failed for " + path);
}

inline RunManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest: cannot read " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.argv = j.at("argv").get<std::vector<std::string>>();
  m.config = j.at("config").get<std::map<std::string, std::string>>();
  m.seed = j.at("seed").get<uint64_t>();
  m.version = j.at("version").get<std::string>();
  m.formats = j.at("formats").get<std::string>();
  m.input_hashes =
      j.at("input_hashes").get<std::map<std::string, std::string>>();
  m.outputs = j.at("outputs").get<std::vector<std::string>>();
  m.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
  m.status = j.at("status").get<std::string>();
  return m;
}

}  // namespace ehd
