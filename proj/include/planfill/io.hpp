#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "planfill/rvq.hpp"
#include "planfill/types.hpp"

namespace planfill {

// ---------------------------------------------------------------------------
// Raw bytes (atomic writes: temp file in the same directory + rename)
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> read_bytes(const std::string& path);
void write_bytes_atomic(const std::string& path,
                        const std::vector<std::uint8_t>& bytes);
void write_text_atomic(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

// ---------------------------------------------------------------------------
// WAV ingestion / emission
// ---------------------------------------------------------------------------

// RIFF/WAVE, PCM 16-bit or IEEE float 32-bit, mono or stereo. Stereo is
// averaged to mono; integers scale by 1/32768 (so -32768 -> -1.0 exactly);
// the result is linearly resampled to target_rate when rates differ.
// Malformed input raises errors naming the byte offset.
AudioClip read_wav(const std::string& path, std::uint32_t target_rate = 16000);

// 16-bit PCM mono.
void write_wav(const std::string& path, const AudioClip& clip);

// ---------------------------------------------------------------------------
// Motion container: magic "SAMO", version u32, fps f32, frames u32, dims u32,
// row-major little-endian f32 payload, trailing CRC32.
// ---------------------------------------------------------------------------

void write_motion(const std::string& path, const MotionSequence& motion);
MotionSequence read_motion(const std::string& path);

void write_face(const std::string& path, const BlendshapeSequence& face);
BlendshapeSequence read_face(const std::string& path);

// ---------------------------------------------------------------------------
// Token JSON
// ---------------------------------------------------------------------------

void write_tokens(const std::string& path, const TokenizedMotion& tokens);
TokenizedMotion read_tokens(const std::string& path);

// ---------------------------------------------------------------------------
// Corpus manifest
// ---------------------------------------------------------------------------

struct ManifestRow {
    std::string id;
    std::string expression_label;
    std::string action_label;
    std::string utterance;
    std::string audio_path;
    std::string motion_path;
    std::optional<std::string> face_path;
};

struct Manifest {
    std::vector<ManifestRow> rows;
};

// Ids must be unique; check_files additionally requires every referenced file
// to exist (paths are resolved relative to the manifest's directory).
Manifest read_manifest(const std::string& path, bool check_files = true);
void write_manifest(const std::string& path, const Manifest& manifest);

}  // namespace planfill
