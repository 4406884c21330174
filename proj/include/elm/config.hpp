#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "elm/errors.hpp"

namespace elm {

// Flat key=value run configuration. One registry covers every module's
// defaults; a config file may override any subset, CLI flags override last,
// and the resolved map is echoed into the run directory. Unknown keys are
// rejected so typos never pass silently.
class RunConfig {
public:
    RunConfig();  // installs the full default registry

    bool known(const std::string& key) const;
    void set(const std::string& key, const std::string& value);  // throws on unknown key
    void load_file(const std::string& path);

    const std::string& get(const std::string& key) const;
    long long get_int(const std::string& key) const;
    double get_real(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    // Canonical "key=value" lines in registry order.
    std::string resolved_text() const;
    // FNV-1a of the resolved text, 16 hex digits.
    std::string hash_hex() const;
    void echo(const std::string& path) const;

private:
    std::vector<std::pair<std::string, std::string>> items_;
};

}  // namespace elm
