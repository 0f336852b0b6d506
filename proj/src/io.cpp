#include "zerocon/io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "zerocon/rng.hpp"

namespace zerocon {

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

namespace {

struct FileCloser {
    FILE* f;
    ~FileCloser() {
        if (f) fclose(f);
    }
};

}  // namespace

Image read_png(const std::string& path) {
    FILE* f = fopen(path.c_str(), "rb");
    if (!f) throw Error("cannot open PNG for reading: " + path);
    FileCloser closer{f};

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("PNG decode failed: " + path);
    }
    png_init_io(png, f);
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    Image img;
    img.width = static_cast<int>(w);
    img.height = static_cast<int>(h);
    img.rgb.resize(static_cast<size_t>(w) * h * 3);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = img.rgb.data() + static_cast<size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    img.id = std::filesystem::path(path).filename().string();
    return img;
}

void write_png(const std::string& path, const Image& img) {
    if (img.width <= 0 || img.height <= 0 || img.rgb.size() != static_cast<size_t>(img.width) * img.height * 3)
        throw Error("write_png: malformed image");
    FILE* f = fopen(path.c_str(), "wb");
    if (!f) throw Error("cannot open PNG for writing: " + path);
    FileCloser closer{f};

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("PNG encode failed: " + path);
    }
    png_init_io(png, f);
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y)
        rows[y] = const_cast<png_bytep>(img.rgb.data() + static_cast<size_t>(y) * img.width * 3);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// ---------------------------------------------------------------------------
// binary tensor formats
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    put_u32(os, static_cast<uint32_t>(v));
    put_u32(os, static_cast<uint32_t>(v >> 32));
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw Error("truncated binary file");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t get_u64(std::istream& is) {
    uint64_t lo = get_u32(is);
    uint64_t hi = get_u32(is);
    return lo | (hi << 32);
}

void put_f32_payload(std::ostream& os, const Tensor& t) {
    std::vector<float> buf(t.data.begin(), t.data.end());
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
}

void get_f32_payload(std::istream& is, Tensor& t) {
    std::vector<float> buf(t.numel());
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (!is) throw Error("truncated tensor payload");
    for (int64_t i = 0; i < t.numel(); ++i) t.data[i] = static_cast<real>(buf[i]);
}

}  // namespace

Tensor quantize_f32(const Tensor& t) {
    Tensor out = t;
    for (auto& v : out.data) v = static_cast<real>(static_cast<float>(v));
    return out;
}

void write_zct1(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write tensor file: " + path);
    os.write("ZCT1", 4);
    put_u32(os, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape) put_u32(os, static_cast<uint32_t>(d));
    put_f32_payload(os, t);
    if (!os) throw Error("failed writing tensor file: " + path);
}

Tensor read_zct1(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot read tensor file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "ZCT1", 4) != 0) throw Error("not a ZCT1 file: " + path);
    uint32_t rank = get_u32(is);
    if (rank > 8) throw Error("ZCT1 rank too large in " + path);
    std::vector<int64_t> shape(rank);
    for (auto& d : shape) d = get_u32(is);
    Tensor t(shape);
    get_f32_payload(is, t);
    return t;
}

void write_zckp(const std::string& path, const std::vector<std::pair<std::string, Tensor>>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write checkpoint: " + path);
    os.write("ZCKP", 4);
    put_u32(os, kCheckpointVersion);
    put_u32(os, static_cast<uint32_t>(entries.size()));
    uint64_t offset = 0;
    for (const auto& [name, t] : entries) {
        put_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(os, static_cast<uint32_t>(t.rank()));
        for (int64_t d : t.shape) put_u32(os, static_cast<uint32_t>(d));
        put_u64(os, offset);
        offset += static_cast<uint64_t>(t.numel()) * 4;
    }
    for (const auto& [name, t] : entries) put_f32_payload(os, t);
    if (!os) throw Error("failed writing checkpoint: " + path);
}

std::vector<std::pair<std::string, Tensor>> read_zckp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot read checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "ZCKP", 4) != 0) throw Error("not a ZCKP file: " + path);
    uint32_t version = get_u32(is);
    if (version != kCheckpointVersion)
        throw Error("unsupported checkpoint version " + std::to_string(version) + " in " + path);
    uint32_t count = get_u32(is);
    struct Entry {
        std::string name;
        std::vector<int64_t> shape;
        uint64_t offset;
    };
    std::vector<Entry> manifest(count);
    for (auto& e : manifest) {
        uint32_t len = get_u32(is);
        e.name.resize(len);
        is.read(e.name.data(), len);
        uint32_t rank = get_u32(is);
        if (rank > 8) throw Error("checkpoint rank too large in " + path);
        e.shape.resize(rank);
        for (auto& d : e.shape) d = get_u32(is);
        e.offset = get_u64(is);
    }
    std::streampos blob_start = is.tellg();
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(count);
    for (const auto& e : manifest) {
        Tensor t(e.shape);
        is.seekg(blob_start + static_cast<std::streamoff>(e.offset));
        get_f32_payload(is, t);
        out.emplace_back(e.name, std::move(t));
    }
    return out;
}

// ---------------------------------------------------------------------------
// key=value config
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

bool KeyValueFile::has(const std::string& key) const { return find(key) != nullptr; }

const std::string* KeyValueFile::find(const std::string& key) const {
    for (const auto& [k, v] : items)
        if (k == key) return &v;
    return nullptr;
}

void KeyValueFile::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : items)
        if (k == key) {
            v = value;
            return;
        }
    items.emplace_back(key, value);
}

std::string KeyValueFile::get_str(const std::string& key, const std::string& fallback) const {
    const std::string* v = find(key);
    return v ? *v : fallback;
}

real KeyValueFile::get_real(const std::string& key, real fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    try {
        size_t pos = 0;
        real r = std::stod(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw ConfigError("config key '" + key + "' expects a number, got '" + *v + "'");
    }
}

int64_t KeyValueFile::get_int(const std::string& key, int64_t fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    try {
        size_t pos = 0;
        long long r = std::stoll(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw ConfigError("config key '" + key + "' expects an integer, got '" + *v + "'");
    }
}

bool KeyValueFile::get_bool(const std::string& key, bool fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw ConfigError("config key '" + key + "' expects true|false, got '" + *v + "'");
}

KeyValueFile KeyValueFile::parse(const std::string& text) {
    KeyValueFile f;
    size_t pos = 0;
    int lineno = 0;
    while (pos <= text.size()) {
        size_t end = text.find('\n', pos);
        std::string line = text.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
        pos = (end == std::string::npos) ? text.size() + 1 : end + 1;
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: '" + t + "'");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + " has empty key");
        f.set(key, value);
    }
    return f;
}

KeyValueFile KeyValueFile::load(const std::string& path) { return parse(read_text_file(path)); }

std::string KeyValueFile::serialize() const {
    std::string out;
    for (const auto& [k, v] : items) {
        out += k;
        out += " = ";
        out += v;
        out += "\n";
    }
    return out;
}

void KeyValueFile::save(const std::string& path) const { write_text_file(path, serialize()); }

// ---------------------------------------------------------------------------
// misc
// ---------------------------------------------------------------------------

std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot read file: " + path);
    std::string out((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return out;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write file: " + path);
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw Error("failed writing file: " + path);
}

bool file_exists(const std::string& path) { return std::filesystem::exists(path); }

void ensure_dir(const std::string& path) { std::filesystem::create_directories(path); }

std::string format_real(real v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

uint64_t file_hash(const std::string& path) { return fnv1a64(read_text_file(path)); }

}  // namespace zerocon
