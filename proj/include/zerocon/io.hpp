#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "zerocon/tensor.hpp"

namespace zerocon {

// ---------------------------------------------------------------------------
// images
// ---------------------------------------------------------------------------

// 8-bit RGB image. `id` is the source identity used by the toy caption
// provider (the dataset filename); empty for images without provenance.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel
    std::string id;

    bool same_dims(const Image& o) const { return width == o.width && height == o.height; }
};

Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

// ---------------------------------------------------------------------------
// tensor files: magic "ZCT1", u32 rank, u32 dims..., float32 LE payload
// ---------------------------------------------------------------------------

void write_zct1(const std::string& path, const Tensor& t);
Tensor read_zct1(const std::string& path);

// values narrowed through float32, exactly what a ZCT1/ZCKP round trip yields
Tensor quantize_f32(const Tensor& t);

// ---------------------------------------------------------------------------
// checkpoints: magic "ZCKP", u32 format version, u32 entry count, then per
// entry (u32 name_len, name bytes, u32 rank, u32 dims..., u64 payload offset),
// then the float32 LE payload blob. Offsets are relative to the blob start.
// ---------------------------------------------------------------------------

constexpr uint32_t kCheckpointVersion = 1;

void write_zckp(const std::string& path, const std::vector<std::pair<std::string, Tensor>>& entries);
std::vector<std::pair<std::string, Tensor>> read_zckp(const std::string& path);

// ---------------------------------------------------------------------------
// flat key=value config text ('#' lines are comments)
// ---------------------------------------------------------------------------

struct KeyValueFile {
    // insertion-ordered
    std::vector<std::pair<std::string, std::string>> items;

    bool has(const std::string& key) const;
    const std::string* find(const std::string& key) const;
    void set(const std::string& key, const std::string& value);

    std::string get_str(const std::string& key, const std::string& fallback) const;
    real get_real(const std::string& key, real fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    static KeyValueFile parse(const std::string& text);
    static KeyValueFile load(const std::string& path);
    std::string serialize() const;
    void save(const std::string& path) const;
};

// ---------------------------------------------------------------------------
// misc file helpers
// ---------------------------------------------------------------------------

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);

// stable float formatting used for every CSV / manifest value
std::string format_real(real v);

uint64_t file_hash(const std::string& path);  // FNV-1a over the bytes

}  // namespace zerocon
