#include "manifest.hpp"

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "nowcast/csv.hpp"
#include "version.hpp"

namespace nowcast::cli {

using ordered = nlohmann::ordered_json;

std::string sha256_hex(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

Manifest::Manifest(std::string command) : command_(std::move(command)) {}

void Manifest::flag(const std::string& name, const std::string& value) { flags_.emplace_back(name, value); }

void Manifest::input(const std::string& path) {
  input_bytes(std::filesystem::path(path).filename().string(), csv::read_whole_file(path));
}

void Manifest::input_bytes(const std::string& name, std::string_view bytes) {
  inputs_.emplace_back(name, sha256_hex(bytes));
}

void Manifest::data_range(std::string first, std::string last) {
  first_ = std::move(first);
  last_ = std::move(last);
}

std::string Manifest::core_json() const {
  ordered j;
  j["command"] = command_;
  j["tool_version"] = kToolVersion;
  j["format_version"] = kFormatVersion;
  ordered flags = ordered::object();
  for (const auto& [k, v] : flags_) flags[k] = v;
  j["flags"] = std::move(flags);
  ordered inputs = ordered::array();
  for (const auto& [k, v] : inputs_) inputs.push_back({{"name", k}, {"sha256", v}});
  j["inputs"] = std::move(inputs);
  if (!config_hash_.empty()) j["config_hash"] = config_hash_;
  if (seed_) j["seed"] = *seed_;
  // Timestamps come from the data, never from the clock; a build system can
  // pin an extra one through SOURCE_DATE_EPOCH.
  ordered ts;
  if (!first_.empty()) {
    ts["data_first"] = first_;
    ts["data_last"] = last_;
  }
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) ts["source_date_epoch"] = epoch;
  j["timestamps"] = ts.is_null() ? ordered::object() : ts;
  return j.dump();
}

std::string Manifest::hash() const { return sha256_hex(core_json()); }

void Manifest::output(const std::string& name, std::string_view bytes) { outputs_.emplace_back(name, sha256_hex(bytes)); }

std::string Manifest::emit() const {
  ordered j = ordered::parse(core_json());
  j["manifest_hash"] = hash();
  ordered outputs = ordered::array();
  for (const auto& [k, v] : outputs_) outputs.push_back({{"name", k}, {"sha256", v}});
  j["outputs"] = std::move(outputs);
  return j.dump(2) + "\n";
}

}  // namespace nowcast::cli
