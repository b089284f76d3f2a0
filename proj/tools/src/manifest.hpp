#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nowcast::cli {

std::string sha256_hex(std::string_view bytes);

// Provenance record written next to every command's outputs. Inputs and
// outputs are identified by file name and content digest only, so the
// record (and everything citing its hash) is independent of directory
// layout and wall-clock time.
class Manifest {
 public:
  explicit Manifest(std::string command);

  void flag(const std::string& name, const std::string& value);
  void input(const std::string& path);
  void input_bytes(const std::string& name, std::string_view bytes);
  void config_hash(std::string hash) { config_hash_ = std::move(hash); }
  void seed(std::uint64_t seed) { seed_ = seed; }
  void data_range(std::string first, std::string last);

  // Digest of everything recorded so far; outputs cite it.
  std::string hash() const;

  void output(const std::string& name, std::string_view bytes);
  std::string emit() const;

 private:
  std::string core_json() const;

  std::string command_;
  std::vector<std::pair<std::string, std::string>> flags_;
  std::vector<std::pair<std::string, std::string>> inputs_;
  std::vector<std::pair<std::string, std::string>> outputs_;
  std::string config_hash_;
  std::optional<std::uint64_t> seed_;
  std::string first_, last_;
};

}  // namespace nowcast::cli
