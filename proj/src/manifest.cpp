#include "ehrscale/manifest.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "ehrscale/rng.hpp"

namespace fs = std::filesystem;

namespace ehrscale {

namespace {

std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

std::string digest_string(const std::string& data) { return to_hex(fnv1a64(data)); }

std::string digest_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file for digest: " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const auto n = static_cast<std::size_t>(in.gcount());
        for (std::size_t i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    return to_hex(h);
}

void write_manifest(const std::string& path, const RunManifest& manifest) {
    nlohmann::json j;
    j["command"] = manifest.command;
    j["tool_version"] = manifest.tool_version;
    j["seed"] = manifest.seed;
    j["config_digest"] = manifest.config_digest;
    j["timestamp"] = manifest.timestamp;
    j["artifacts"] = nlohmann::json::array();
    for (const auto& [p, d] : manifest.artifacts) j["artifacts"].push_back({{"path", p}, {"digest", d}});
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open manifest for writing: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("failed writing manifest: " + path);
}

RunManifest read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    nlohmann::json j;
    in >> j;
    RunManifest m;
    m.command = j.value("command", "");
    m.tool_version = j.value("tool_version", "");
    m.seed = j.value("seed", 0ULL);
    m.config_digest = j.value("config_digest", "");
    m.timestamp = j.value("timestamp", "");
    for (const auto& a : j.value("artifacts", nlohmann::json::array()))
        m.artifacts.emplace_back(a.at("path").get<std::string>(), a.at("digest").get<std::string>());
    return m;
}

std::vector<std::string> verify_manifest(const std::string& manifest_path) {
    const RunManifest m = read_manifest(manifest_path);
    const fs::path dir = fs::path(manifest_path).parent_path();
    std::vector<std::string> bad;
    for (const auto& [rel, digest] : m.artifacts) {
        const fs::path p = dir / rel;
        if (!fs::exists(p)) {
            bad.push_back(rel + " (missing)");
            continue;
        }
        if (digest_file(p.string()) != digest) bad.push_back(rel + " (digest mismatch)");
    }
    return bad;
}

OutDirLock::OutDirLock(const std::string& out_dir) {
    fs::create_directories(out_dir);
    path_ = (fs::path(out_dir) / ".ehrscale.lock").string();
    // O_EXCL creation; a live lockfile means another run owns the directory
    FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f)
        throw std::runtime_error("out dir is locked by another run (remove " + path_ +
                                 " if that run is dead)");
    std::fputs("lock\n", f);
    std::fclose(f);
}

OutDirLock::~OutDirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

KvConfig KvConfig::parse_text(const std::string& text) {
    KvConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(lineno) +
                                     ": expected key = value");
        cfg.entries_[trim(stripped.substr(0, eq))] = trim(stripped.substr(eq + 1));
    }
    return cfg;
}

KvConfig KvConfig::parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str());
}

bool KvConfig::has(const std::string& key) const { return entries_.count(key) != 0; }

std::string KvConfig::get(const std::string& key, const std::string& fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
}

double KvConfig::get(const std::string& key, double fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : std::stod(it->second);
}

long KvConfig::get(const std::string& key, long fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : std::stol(it->second);
}

std::uint64_t KvConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : std::stoull(it->second);
}

std::vector<std::string> KvConfig::get_list(const std::string& key) const {
    std::vector<std::string> out;
    auto it = entries_.find(key);
    if (it == entries_.end()) return out;
    std::istringstream ss(it->second);
    std::string field;
    while (std::getline(ss, field, ',')) {
        const auto b = field.find_first_not_of(" \t");
        const auto e = field.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(field.substr(b, e - b + 1));
    }
    return out;
}

std::vector<std::uint64_t> KvConfig::get_u64_list(const std::string& key) const {
    std::vector<std::uint64_t> out;
    for (const auto& s : get_list(key)) out.push_back(static_cast<std::uint64_t>(std::stod(s)));
    return out;
}

std::string iso_timestamp_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace ehrscale
