#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "hnll/dsp.hpp"

namespace hnll {

enum class WavEncoding { Float32, Pcm16 };

// Mono RIFF/WAVE. Float32 files round-trip bit-exactly for samples that are
// representable as float; Pcm16 quantizes with round-to-nearest.
void write_wav(const std::filesystem::path& path, const Waveform& w, WavEncoding enc = WavEncoding::Float32);
Waveform read_wav(const std::filesystem::path& path);

std::string encode_wav(const Waveform& w, WavEncoding enc);
// Throws WavError naming the offending or missing chunk.
Waveform decode_wav(std::string_view bytes);

}  // namespace hnll
