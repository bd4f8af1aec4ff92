#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ehrscale {

// FNV-1a over file bytes, rendered as 16 hex digits.
std::string digest_file(const std::string& path);
std::string digest_string(const std::string& data);

struct RunManifest {
    std::string command;
    std::string tool_version;
    std::uint64_t seed = 0;
    std::string config_digest;
    std::string timestamp;  // informational; excluded from reproducibility checks
    std::vector<std::pair<std::string, std::string>> artifacts;  // path (relative), digest
};

void write_manifest(const std::string& path, const RunManifest& manifest);
RunManifest read_manifest(const std::string& path);

// Recomputes artifact digests relative to the manifest's directory; returns
// the list of mismatched or missing paths (empty means verified).
std::vector<std::string> verify_manifest(const std::string& manifest_path);

// Exclusive out-dir lock backed by a lockfile created O_EXCL.
class OutDirLock {
public:
    explicit OutDirLock(const std::string& out_dir);
    ~OutDirLock();
    OutDirLock(const OutDirLock&) = delete;
    OutDirLock& operator=(const OutDirLock&) = delete;

private:
    std::string path_;
};

// "key = value" config file with '#' comments. Lookup precedence is handled
// by callers (flags > file > defaults).
class KvConfig {
public:
    KvConfig() = default;
    static KvConfig parse_file(const std::string& path);
    static KvConfig parse_text(const std::string& text);

    bool has(const std::string& key) const;
    std::string get(const std::string& key, const std::string& fallback) const;
    double get(const std::string& key, double fallback) const;
    long get(const std::string& key, long fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    std::vector<std::uint64_t> get_u64_list(const std::string& key) const;  // comma separated
    std::vector<std::string> get_list(const std::string& key) const;

    const std::map<std::string, std::string>& entries() const { return entries_; }

private:
    std::map<std::string, std::string> entries_;
};

std::string iso_timestamp_now();

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace ehrscale
