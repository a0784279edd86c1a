#include "config.hpp"

#include <fstream>

#include "segflow/errors.hpp"

namespace segflow {

KvMap load_kv_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open config file: " + path);
    KvMap out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        // trim
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw invalid_input("config file " + path + ": line " + std::to_string(lineno) +
                                " is not key=value");
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        const auto ke = key.find_last_not_of(" \t");
        key = key.substr(0, ke + 1);
        const auto vs = val.find_first_not_of(" \t");
        val = vs == std::string::npos ? "" : val.substr(vs);
        out[key] = val;
    }
    return out;
}

const std::string* ConfigResolution::resolve(const std::string& key, bool flag_set,
                                             const std::string& current_value) {
    const auto it = file_.find(key);
    if (flag_set) {
        if (it != file_.end() && it->second != current_value)
            pending_source_[key] = "flag (overrides file value '" + it->second + "')";
        else
            pending_source_[key] = "flag";
        return nullptr;
    }
    if (it != file_.end()) {
        pending_source_[key] = "file";
        return &it->second;
    }
    pending_source_[key] = "default";
    return nullptr;
}

void ConfigResolution::finalize(const std::string& key, const std::string& value) {
    const auto it = pending_source_.find(key);
    entries_.push_back({key, value, it == pending_source_.end() ? "default" : it->second});
}

void ConfigResolution::write(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw io_error("cannot write resolved config: " + path);
    os << "# resolved configuration (precedence: flag > config file > default)\n";
    for (const ResolvedEntry& e : entries_) os << e.key << "=" << e.value << "  # " << e.source
                                               << "\n";
}

}  // namespace segflow
