#include "vispe/keyvalue.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "vispe/binio.hpp"
#include "vispe/errors.hpp"

namespace vispe {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> items;
    std::string cur;
    for (char c : text) {
        if (c == ',' || c == ' ' || c == '\t') {
            if (!cur.empty()) items.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) items.push_back(cur);
    return items;
}

bool parse_double_strict(const std::string& s, double& out) {
    try {
        std::size_t pos = 0;
        out = std::stod(s, &pos);
        return pos == s.size() && std::isfinite(out);
    } catch (const std::exception&) {
        return false;
    }
}

bool parse_u64_strict(const std::string& s, std::uint64_t& out) {
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end;
}

}  // namespace

KeyValueFile KeyValueFile::parse(const std::string& text, const std::string& origin) {
    KeyValueFile kv;
    kv.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected `key = value`");
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (kv.values_.count(key)) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key `" + key + "`");
        }
        kv.values_[key] = value;
        kv.lines_[key] = lineno;
    }
    return kv;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
    return parse(binio::read_text(path), path.string());
}

void KeyValueFile::reject_unknown(const std::set<std::string>& known) const {
    for (const auto& [key, value] : values_) {
        if (!known.count(key)) fail(key, "unknown key");
    }
}

void KeyValueFile::fail(const std::string& key, const std::string& what) const {
    const auto it = lines_.find(key);
    const std::string where = it == lines_.end() ? origin_ : origin_ + ":" + std::to_string(it->second);
    throw ConfigError(where + ": " + what + " `" + key + "`");
}

std::string KeyValueFile::get_string(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) fail(key, "missing key");
    return it->second;
}

double KeyValueFile::get_double(const std::string& key) const {
    double v = 0;
    if (!parse_double_strict(get_string(key), v)) fail(key, "expected a finite real for");
    return v;
}

std::uint64_t KeyValueFile::get_u64(const std::string& key) const {
    std::uint64_t v = 0;
    if (!parse_u64_strict(get_string(key), v)) fail(key, "expected a nonnegative integer for");
    return v;
}

bool KeyValueFile::get_bool(const std::string& key) const {
    const auto s = get_string(key);
    if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "off" || s == "no") return false;
    fail(key, "expected a boolean for");
}

std::vector<std::size_t> KeyValueFile::get_size_list(const std::string& key) const {
    try {
        return parse_size_list(get_string(key));
    } catch (const ConfigError&) {
        fail(key, "expected a list of nonnegative integers for");
    }
}

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> out;
    for (const auto& item : split_list(text)) {
        double v = 0;
        if (!parse_double_strict(item, v)) throw ConfigError("not a real number: `" + item + "`");
        out.push_back(v);
    }
    return out;
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(text)) {
        std::uint64_t v = 0;
        if (!parse_u64_strict(item, v)) throw ConfigError("not a nonnegative integer: `" + item + "`");
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

}  // namespace vispe
