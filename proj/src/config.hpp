#ifndef SEGFLOW_CONFIG_HPP_
#define SEGFLOW_CONFIG_HPP_

#include <map>
#include <string>
#include <vector>

namespace segflow {

// Plain-text key=value configuration ('#' starts a comment). Flags given on
// the command line override file values; every resolution is recorded so the
// run directory carries the full provenance.

using KvMap = std::map<std::string, std::string>;

KvMap load_kv_file(const std::string& path);

struct ResolvedEntry {
    std::string key, value, source;  // source: default | file | flag (+conflict note)
};

class ConfigResolution {
public:
    explicit ConfigResolution(KvMap file_values) : file_(std::move(file_values)) {}

    // flag_set: the option was given explicitly on the command line.
    // Returns the file value when it should be applied (flag not set).
    const std::string* resolve(const std::string& key, bool flag_set,
                               const std::string& current_value);

    void finalize(const std::string& key, const std::string& value);

    const std::vector<ResolvedEntry>& entries() const { return entries_; }
    void write(const std::string& path) const;

private:
    KvMap file_;
    std::map<std::string, std::string> pending_source_;
    std::vector<ResolvedEntry> entries_;
};

}  // namespace segflow

#endif  // SEGFLOW_CONFIG_HPP_
