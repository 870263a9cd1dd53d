#include "hnll/wav.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>

#include "hnll/error.hpp"
#include "hnll/io_util.hpp"

namespace hnll {

namespace {

constexpr std::uint16_t kFormatPcm = 0x0001;
constexpr std::uint16_t kFormatFloat = 0x0003;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

struct Fmt {
    std::uint16_t tag = 0;
    std::uint16_t channels = 0;
    std::uint32_t rate = 0;
    std::uint16_t bits = 0;
};

template <typename T>
T read_or(std::string_view bytes, std::size_t& pos, const char* chunk) {
    if (pos + sizeof(T) > bytes.size()) throw WavError(chunk, "truncated");
    return get_le<T>(bytes, pos);
}

}  // namespace

std::string encode_wav(const Waveform& w, WavEncoding enc) {
    if (w.sample_rate <= 0) throw ConfigError("wav: sample rate must be positive");
    const std::uint16_t bits = enc == WavEncoding::Float32 ? 32 : 16;
    const std::uint16_t block = bits / 8;
    const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * block);
    const std::uint32_t fmt_size = enc == WavEncoding::Float32 ? 18 : 16;

    std::string out;
    out.reserve(46 + data_bytes);
    out += "RIFF";
    put_le(out, static_cast<std::uint32_t>(4 + 8 + fmt_size + 8 + data_bytes));
    out += "WAVE";
    out += "fmt ";
    put_le(out, fmt_size);
    put_le(out, enc == WavEncoding::Float32 ? kFormatFloat : kFormatPcm);
    put_le(out, std::uint16_t{1});
    put_le(out, static_cast<std::uint32_t>(w.sample_rate));
    put_le(out, static_cast<std::uint32_t>(w.sample_rate) * block);
    put_le(out, block);
    put_le(out, bits);
    if (enc == WavEncoding::Float32) put_le(out, std::uint16_t{0});
    out += "data";
    put_le(out, data_bytes);
    for (double v : w.samples) {
        if (!std::isfinite(v)) throw ConfigError("wav: non-finite sample");
        if (enc == WavEncoding::Float32) {
            put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        } else {
            const double q = std::round(std::clamp(v, -1.0, 32767.0 / 32768.0) * 32768.0);
            put_le(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
        }
    }
    if (data_bytes % 2) out.push_back('\0');
    return out;
}

Waveform decode_wav(std::string_view bytes) {
    std::size_t pos = 0;
    if (bytes.size() < 12) throw WavError("RIFF", "truncated header");
    if (bytes.substr(0, 4) != "RIFF") throw WavError("RIFF", "missing RIFF signature");
    pos = 8;
    if (bytes.substr(8, 4) != "WAVE") throw WavError("WAVE", "missing WAVE form type");
    pos = 12;

    std::optional<Fmt> fmt;
    std::optional<std::string_view> data;
    while (pos + 8 <= bytes.size()) {
        const std::string id(bytes.substr(pos, 4));
        pos += 4;
        const auto size = get_le<std::uint32_t>(bytes, pos);
        if (pos + size > bytes.size()) {
            if (id == "data") {
                throw WavError("data", "declared size exceeds file length");
            }
            throw WavError(id, "truncated chunk");
        }
        const std::string_view body = bytes.substr(pos, size);
        if (id == "fmt ") {
            if (size < 16) throw WavError("fmt ", "chunk too small");
            std::size_t p = 0;
            Fmt f;
            f.tag = read_or<std::uint16_t>(body, p, "fmt ");
            f.channels = read_or<std::uint16_t>(body, p, "fmt ");
            f.rate = read_or<std::uint32_t>(body, p, "fmt ");
            p += 4 + 2;  // byte rate, block align
            f.bits = read_or<std::uint16_t>(body, p, "fmt ");
            if (f.tag == kFormatExtensible) {
                if (size < 40) throw WavError("fmt ", "extensible chunk too small");
                p = 24;
                f.tag = read_or<std::uint16_t>(body, p, "fmt ");
            }
            fmt = f;
        } else if (id == "data") {
            data = body;
        }
        pos += size + (size % 2);
    }
    if (!fmt) throw WavError("fmt ", "missing chunk");
    if (!data) throw WavError("data", "missing chunk");
    if (fmt->channels != 1) throw WavError("fmt ", "unsupported channel count " + std::to_string(fmt->channels));
    if (fmt->rate == 0) throw WavError("fmt ", "zero sample rate");

    Waveform w;
    w.sample_rate = static_cast<int>(fmt->rate);
    std::size_t p = 0;
    if (fmt->tag == kFormatFloat && fmt->bits == 32) {
        w.samples.resize(data->size() / 4);
        for (auto& s : w.samples) s = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(*data, p)));
    } else if (fmt->tag == kFormatPcm && fmt->bits == 16) {
        w.samples.resize(data->size() / 2);
        for (auto& s : w.samples)
            s = static_cast<double>(static_cast<std::int16_t>(get_le<std::uint16_t>(*data, p))) / 32768.0;
    } else {
        throw WavError("fmt ", "unsupported encoding (tag " + std::to_string(fmt->tag) + ", " +
                                   std::to_string(fmt->bits) + " bits)");
    }
    return w;
}

void write_wav(const std::filesystem::path& path, const Waveform& w, WavEncoding enc) {
    write_file_atomic(path, encode_wav(w, enc));
}

Waveform read_wav(const std::filesystem::path& path) {
    return decode_wav(read_file(path));
}

}  // namespace hnll
