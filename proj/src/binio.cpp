#include "vispe/binio.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include "vispe/errors.hpp"
#include "vispe/rng.hpp"

namespace vispe {

namespace {
bool g_warnings = true;
}

void log_warning(const std::string& msg) {
    if (g_warnings) std::cerr << "warning: " << msg << '\n';
}

void set_warnings_enabled(bool enabled) { g_warnings = enabled; }

std::string rng_state(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

Rng rng_from_state(const std::string& state) {
    Rng rng;
    std::istringstream is(state);
    is >> rng;
    if (!is) throw FormatError("corrupt RNG state in checkpoint");
    return rng;
}

}  // namespace vispe

namespace vispe::binio {

namespace {

template <typename Word>
Word to_little(Word w) {
    if constexpr (std::endian::native == std::endian::little) {
        return w;
    } else {
        Word r = 0;
        for (std::size_t i = 0; i < sizeof(Word); ++i) {
            r = (r << 8) | (w & 0xff);
            w >>= 8;
        }
        return r;
    }
}

template <typename Real, typename Word>
void write_blob(const std::filesystem::path& path, std::span<const Real> values) {
    static_assert(sizeof(Real) == sizeof(Word));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    std::vector<Word> words(values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
        words[i] = to_little(std::bit_cast<Word>(values[i]));
    out.write(reinterpret_cast<const char*>(words.data()),
              static_cast<std::streamsize>(words.size() * sizeof(Word)));
    if (!out) throw IoError("write failed: " + path.string());
}

template <typename Real, typename Word>
std::vector<Real> read_blob(const std::filesystem::path& path, std::size_t expected_count) {
    std::error_code ec;
    const auto size = std::filesystem::file_size(path, ec);
    if (ec) throw IoError("cannot stat " + path.string() + ": " + ec.message());
    if (size != expected_count * sizeof(Word)) {
        throw FormatError("size mismatch in " + path.string() + ": expected " +
                          std::to_string(expected_count * sizeof(Word)) + " bytes, found " +
                          std::to_string(size));
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    std::vector<Word> words(expected_count);
    in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(size));
    if (!in) throw IoError("read failed: " + path.string());
    std::vector<Real> out(expected_count);
    for (std::size_t i = 0; i < expected_count; ++i)
        out[i] = std::bit_cast<Real>(to_little(words[i]));
    return out;
}

}  // namespace

void write_f32(const std::filesystem::path& path, std::span<const float> values) {
    write_blob<float, std::uint32_t>(path, values);
}

void write_f64(const std::filesystem::path& path, std::span<const double> values) {
    write_blob<double, std::uint64_t>(path, values);
}

std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected_count) {
    return read_blob<float, std::uint32_t>(path, expected_count);
}

std::vector<double> read_f64(const std::filesystem::path& path, std::size_t expected_count) {
    return read_blob<double, std::uint64_t>(path, expected_count);
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace vispe::binio
