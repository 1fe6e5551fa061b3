#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "comma/text.hpp"
#include "json.hpp"

namespace comma::io {

// Reads a whole file; throws data_error if it cannot be opened.
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

// JSON documents are written with sorted keys (nlohmann's default object
// storage), so identical values serialize byte-identically.
nlohmann::json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& doc);

// FNV-1a over the canonical serialization; stable across runs.
std::string json_fingerprint(const nlohmann::json& doc);

// Token list round trip for trained models; the reserved prefix written by
// the default Vocab constructor is validated on read.
void write_vocab(const text::Vocab& vocab, const std::string& path);
text::Vocab read_vocab(const std::string& path);

// Minimal RFC-4180 style CSV helpers (quotes, embedded commas/newlines).
std::vector<std::string> split_csv_row(const std::string& row);
std::string csv_escape(const std::string& field);

// Named dense tensors in a little-endian binary blob ("CMWT" magic).
using TensorMap = std::map<std::string, Eigen::MatrixXd>;
void write_weights(const std::string& path, const TensorMap& tensors);
TensorMap read_weights(const std::string& path);

}  // namespace comma::io
