// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "zsinv/io/checkpoint.hpp"

namespace zsinv::io {

/// Hex SHA-1 of `data`.
inline std::string sha1_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha1(), nullptr) != 1) throw IoError("sha1 failed");
    std::string out;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        out += buf;
    }
    return out;
}

/// Object id git assigns to a blob with this content.
inline std::string git_blob_hash(std::string_view content) {
    std::string s = "blob " + std::to_string(content.size());
    s.push_back('\0');
    s.append(content);
    return sha1_hex(s);
}

inline std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Provenance of one CLI run: command, arguments, resolved config, hashed
/// inputs, stage times and outputs.
struct RunManifest {
    std::string command;
    std::vector<std::string> args;  // subcommand arguments other than --config/--seed/--out
    json config;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> inputs;  // path, blob hash
    std::vector<std::pair<std::string, std::string>> stages;  // name, UTC time
    std::vector<std::string> outputs;

    void add_input(const fs::path& p) { inputs.emplace_back(p.string(), git_blob_hash(read_file(p))); }
    void stage(const std::string& name) { stages.emplace_back(name, utc_now()); }

    /// Stable id of what was asked for (not when): hash of command, args and config.
    std::string run_id() const {
        return git_blob_hash(json{{"command", command}, {"args", args}, {"config", config}}.dump());
    }

    json to_json() const {
        json in = json::array(), st = json::array();
        for (const auto& [p, h] : inputs) in.push_back({{"path", p}, {"hash", h}});
        for (const auto& [n, t] : stages) st.push_back({{"stage", n}, {"time", t}});
        return {{"command", command}, {"args", args},   {"config", config}, {"seed", seed},
                {"run_id", run_id()}, {"inputs", in},   {"stages", st},     {"outputs", outputs}};
    }

    static RunManifest from_json(const json& j) {
        RunManifest m;
        try {
            m.command = j.at("command").get<std::string>();
            m.args = j.at("args").get<std::vector<std::string>>();
            m.config = j.at("config");
            m.seed = j.at("seed").get<std::uint64_t>();
            for (const auto& e : j.at("inputs")) m.inputs.emplace_back(e.at("path").get<std::string>(), e.at("hash").get<std::string>());
            for (const auto& e : j.at("stages")) m.stages.emplace_back(e.at("stage").get<std::string>(), e.at("time").get<std::string>());
            m.outputs = j.at("outputs").get<std::vector<std::string>>();
        } catch (const json::exception& e) {
            throw IoError(std::string("malformed manifest: ") + e.what());
        }
        return m;
    }

    void save(const fs::path& path) const { write_file_atomic(path, to_json().dump(2) + "\n"); }
    static RunManifest load(const fs::path& path) {
        try {
            return from_json(json::parse(read_file(path)));
        } catch (const json::parse_error& e) {
            throw IoError("manifest " + path.string() + " is not JSON: " + e.what());
        }
    }
};

/// Append-only line-delimited JSON records.
class JsonlLog {
public:
    explicit JsonlLog(const fs::path& path) : out_(path, std::ios::app) {
        if (!out_) throw IoError("cannot open log " + path.string());
    }
    void write(const json& record) {
        out_ << record.dump() << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
};

} // namespace zsinv::io
