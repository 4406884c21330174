#include "elm/config.hpp"

#include <algorithm>
#include <fstream>

namespace elm {

RunConfig::RunConfig() {
    auto def = [&](const char* k, const char* v) { items_.emplace_back(k, v); };
    // corpus generation
    def("corpus.num_classes", "10");
    def("corpus.per_class", "600");
    def("corpus.h", "32");
    def("corpus.w", "32");
    def("corpus.c", "1");
    def("corpus.kind", "shapes");
    def("corpus.val_fraction", "0.166667");
    def("corpus.seed", "7");
    // tokenizer training
    def("tokenizer.kind", "bae");
    def("tokenizer.f", "4");
    def("tokenizer.d", "8");
    def("tokenizer.hidden", "64");
    def("tokenizer.beta", "0.25");
    def("tokenizer.steps", "3000");
    def("tokenizer.batch", "32");
    def("tokenizer.lr", "0.001");
    def("tokenizer.train_quantizer", "bernoulli");
    def("tokenizer.seed", "1");
    // dataset tokenization
    def("tokenize.mode", "sign");
    def("tokenize.vocab", "");  // empty = "1-D"
    def("tokenize.seed", "7");
    // language model training
    def("lm.mode", "ar");
    def("lm.size", "s");
    def("lm.vocab", "2-4");
    def("lm.steps", "2000");
    def("lm.batch", "16");
    def("lm.lr", "0.0003");
    def("lm.wd", "0.05");
    def("lm.class_drop", "0.1");
    def("lm.full_width_tables", "0");
    def("lm.seed", "1");
    // sampling
    def("sample.cfg", "linear:1:3");
    def("sample.topk", "0");
    def("sample.temperature", "1");
    def("sample.tau", "4");
    def("sample.anneal_tau", "1");
    def("sample.iters", "8");
    def("sample.n", "16");
    def("sample.class", "0");
    def("sample.seed", "7");
    // extension
    def("extend.height", "8");
    def("extend.width", "12");
    // analysis
    def("attn.n", "100");
    def("attn.head", "0");
    def("stats.order", "1");
}

bool RunConfig::known(const std::string& key) const {
    return std::any_of(items_.begin(), items_.end(),
                       [&](const auto& kv) { return kv.first == key; });
}

void RunConfig::set(const std::string& key, const std::string& value) {
    for (auto& kv : items_) {
        if (kv.first == key) {
            kv.second = value;
            return;
        }
    }
    throw ConfigError("unknown config key \"" + key + "\"");
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value, got \"" +
                              line + "\"");
        const std::string key = line.substr(0, eq);
        if (!known(key))
            throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown config key \"" +
                              key + "\"");
        set(key, line.substr(eq + 1));
    }
}

const std::string& RunConfig::get(const std::string& key) const {
    for (const auto& kv : items_)
        if (kv.first == key) return kv.second;
    throw ConfigError("unknown config key \"" + key + "\"");
}

long long RunConfig::get_int(const std::string& key) const {
    try {
        return std::stoll(get(key));
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " is not an integer: \"" + get(key) + "\"");
    }
}

double RunConfig::get_real(const std::string& key) const {
    try {
        return std::stod(get(key));
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " is not a number: \"" + get(key) + "\"");
    }
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ConfigError("config key " + key + " is not a boolean: \"" + v + "\"");
}

std::string RunConfig::resolved_text() const {
    std::string out;
    for (const auto& kv : items_) out += kv.first + "=" + kv.second + "\n";
    return out;
}

std::string RunConfig::hash_hex() const {
    const std::string text = resolved_text();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void RunConfig::echo(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw DataError("cannot open " + path + " for writing");
    f << resolved_text();
    if (!f) throw DataError("short write to " + path);
}

}  // namespace elm
