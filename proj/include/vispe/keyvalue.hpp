#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace vispe {

// Plain-text `key = value` files: one pair per line, `#` starts a comment.
// Consumers declare the keys they understand; anything else is rejected.
class KeyValueFile {
public:
    static KeyValueFile parse(const std::string& text, const std::string& origin = "<string>");
    static KeyValueFile load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const std::map<std::string, std::string>& entries() const { return values_; }

    // Throws ConfigError naming the first key outside `known`.
    void reject_unknown(const std::set<std::string>& known) const;

    std::string get_string(const std::string& key) const;
    double get_double(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<std::size_t> get_size_list(const std::string& key) const;

private:
    std::string origin_;
    std::map<std::string, std::string> values_;
    std::map<std::string, int> lines_;

    [[noreturn]] void fail(const std::string& key, const std::string& what) const;
};

std::vector<double> parse_double_list(const std::string& text);
std::vector<std::size_t> parse_size_list(const std::string& text);

}  // namespace vispe
