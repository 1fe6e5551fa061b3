#include "comma/io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "comma/errors.hpp"
#include "comma/text.hpp"

namespace comma::io {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open file: " + path);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot write file: " + path);
    out << content;
    if (!out) throw data_error("write failed: " + path);
}

nlohmann::json read_json_file(const std::string& path) {
    const std::string raw = read_file(path);
    try {
        return nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error& e) {
        throw data_error("invalid JSON in " + path + ": " + e.what());
    }
}

void write_json_file(const std::string& path, const nlohmann::json& doc) {
    write_file(path, doc.dump(2) + "\n");
}

std::string json_fingerprint(const nlohmann::json& doc) {
    return text::fnv1a64_hex(doc.dump());
}

void write_vocab(const text::Vocab& vocab, const std::string& path) {
    nlohmann::json doc;
    doc["tokens"] = vocab.tokens();
    write_json_file(path, doc);
}

text::Vocab read_vocab(const std::string& path) {
    const nlohmann::json doc = read_json_file(path);
    if (!doc.is_object() || !doc.contains("tokens") ||
        !doc.at("tokens").is_array()) {
        throw data_error("vocab file is malformed: " + path);
    }
    text::Vocab vocab;
    const auto& reserved = vocab.tokens();
    const nlohmann::json stored = doc.at("tokens");
    if (stored.size() < reserved.size()) {
        throw data_error("vocab file misses reserved tokens: " + path);
    }
    for (size_t i = 0; i < stored.size(); ++i) {
        if (!stored[i].is_string()) {
            throw data_error("vocab file is malformed: " + path);
        }
        const std::string token = stored[i].get<std::string>();
        if (i < reserved.size()) {
            if (token != reserved[i]) {
                throw data_error("vocab file reserved prefix mismatch at id " +
                                 std::to_string(i) + ": " + path);
            }
            continue;
        }
        if (vocab.add(token) != static_cast<int>(i)) {
            throw data_error("vocab file has duplicate token '" + token +
                             "': " + path);
        }
    }
    return vocab;
}

std::vector<std::string> split_csv_row(const std::string& row) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < row.size(); ++i) {
        const char c = row[i];
        if (quoted) {
            if (c == '"' && i + 1 < row.size() && row[i + 1] == '"') {
                cur.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

namespace {

constexpr char kMagic[4] = {'C', 'M', 'W', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(char((bits >> (8 * i)) & 0xff));
}

struct Cursor {
    const std::string& buf;
    size_t pos = 0;
    const std::string& path;

    void need(size_t n) const {
        if (pos + n > buf.size()) {
            throw data_error("truncated weights blob at offset " +
                             std::to_string(pos) + ": " + path);
        }
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= std::uint32_t(std::uint8_t(buf[pos + i])) << (8 * i);
        }
        pos += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) {
            bits |= std::uint64_t(std::uint8_t(buf[pos + i])) << (8 * i);
        }
        pos += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void write_weights(const std::string& path, const TensorMap& tensors) {
    std::string out(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, m] : tensors) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<std::uint32_t>(m.rows()));
        put_u32(out, static_cast<std::uint32_t>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                put_f64(out, m(r, c));
            }
        }
    }
    write_file(path, out);
}

TensorMap read_weights(const std::string& path) {
    const std::string raw = read_file(path);
    Cursor cur{raw, 0, path};
    if (cur.bytes(4) != std::string(kMagic, 4)) {
        throw data_error("not a weights blob (bad magic): " + path);
    }
    const auto version = cur.u32();
    if (version != kVersion) {
        throw data_error("unsupported weights version " +
                         std::to_string(version) + ": " + path);
    }
    const auto count = cur.u32();
    TensorMap tensors;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name = cur.bytes(cur.u32());
        const auto rows = cur.u32();
        const auto cols = cur.u32();
        Eigen::MatrixXd m(rows, cols);
        for (std::uint32_t c = 0; c < cols; ++c) {
            for (std::uint32_t r = 0; r < rows; ++r) {
                m(r, c) = cur.f64();
            }
        }
        tensors.emplace(name, std::move(m));
    }
    if (cur.pos != raw.size()) {
        throw data_error("trailing bytes in weights blob at offset " +
                         std::to_string(cur.pos) + ": " + path);
    }
    return tensors;
}

}  // namespace comma::io
