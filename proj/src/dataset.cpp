#include "zerocon/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "zerocon/rng.hpp"

namespace zerocon {

const std::vector<std::string>& toy_colors() {
    static const std::vector<std::string> v{"red", "green", "blue", "yellow"};
    return v;
}

const std::vector<std::string>& toy_shapes() {
    static const std::vector<std::string> v{"circle", "square", "triangle"};
    return v;
}

const std::vector<std::string>& toy_backgrounds() {
    static const std::vector<std::string> v{"white", "black", "gray"};
    return v;
}

const std::vector<std::string>& toy_modifiers() {
    static const std::vector<std::string> v{"", "small", "large"};
    return v;
}

std::array<uint8_t, 3> toy_color_rgb(const std::string& name) {
    if (name == "red") return {210, 45, 45};
    if (name == "green") return {60, 190, 70};
    if (name == "blue") return {50, 90, 215};
    if (name == "yellow") return {230, 214, 60};
    throw Error("unknown toy color: " + name);
}

std::array<uint8_t, 3> toy_background_rgb(const std::string& name) {
    if (name == "white") return {244, 244, 244};
    if (name == "black") return {18, 18, 18};
    if (name == "gray") return {127, 127, 127};
    throw Error("unknown toy background: " + name);
}

std::string caption_for(const ToyLabels& l) {
    std::string out = "a ";
    if (!l.modifier.empty()) out += l.modifier + " ";
    out += l.color + " " + l.shape + " on a " + l.background + " background";
    return out;
}

const CaptionedImage* CaptionedImageSet::find(const std::string& id) const {
    for (const auto& it : items)
        if (it.image.id == id) return &it;
    return nullptr;
}

void CaptionedImageSet::save(const std::string& dir) const {
    ensure_dir(dir);
    std::string manifest;
    for (const auto& it : items) {
        if (it.image.id.empty()) throw Error("cannot save captioned image without an id");
        std::filesystem::path img_path = std::filesystem::path(dir) / it.image.id;
        write_png(img_path.string(), it.image);
        if (!it.mask.empty()) {
            Image m;
            m.width = it.image.width;
            m.height = it.image.height;
            m.rgb.resize(it.mask.size() * 3);
            for (size_t i = 0; i < it.mask.size(); ++i) {
                uint8_t v = it.mask[i] ? 255 : 0;
                m.rgb[3 * i] = m.rgb[3 * i + 1] = m.rgb[3 * i + 2] = v;
            }
            std::filesystem::path mask_path = img_path;
            mask_path.replace_extension(".mask.png");
            write_png(mask_path.string(), m);
        }
        manifest += it.image.id + "\t" + it.caption + "\n";
    }
    write_text_file((std::filesystem::path(dir) / "manifest.tsv").string(), manifest);
}

CaptionedImageSet CaptionedImageSet::load(const std::string& dir) {
    std::filesystem::path manifest_path = std::filesystem::path(dir) / "manifest.tsv";
    if (!file_exists(manifest_path.string()))
        throw ConfigError("dataset manifest not found: " + manifest_path.string());
    std::string text = read_text_file(manifest_path.string());
    CaptionedImageSet set;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        if (line.empty()) continue;
        size_t tab = line.find('\t');
        if (tab == std::string::npos) throw Error("malformed manifest line (expected <file>\\t<caption>): " + line);
        CaptionedImage item;
        std::string fname = line.substr(0, tab);
        item.caption = line.substr(tab + 1);
        item.image = read_png((std::filesystem::path(dir) / fname).string());
        item.image.id = fname;
        std::filesystem::path mask_path = std::filesystem::path(dir) / fname;
        mask_path.replace_extension(".mask.png");
        if (file_exists(mask_path.string())) {
            Image m = read_png(mask_path.string());
            item.mask.resize(static_cast<size_t>(m.width) * m.height);
            for (size_t i = 0; i < item.mask.size(); ++i) item.mask[i] = m.rgb[3 * i] > 127 ? 1 : 0;
        }
        set.items.push_back(std::move(item));
    }
    return set;
}

namespace {

bool inside_shape(const std::string& shape, real x, real y, real cx, real cy, real r) {
    if (shape == "circle") return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r;
    if (shape == "square") return std::abs(x - cx) <= r * real(0.88) && std::abs(y - cy) <= r * real(0.88);
    if (shape == "triangle") {
        // upward triangle: apex (cx, cy-r), base at cy + 0.8r
        real top = cy - r, bottom = cy + real(0.8) * r;
        if (y < top || y > bottom) return false;
        real frac = (y - top) / (bottom - top);
        return std::abs(x - cx) <= frac * r;
    }
    throw Error("unknown toy shape: " + shape);
}

}  // namespace

CaptionedImage render_toy_item(const ToyLabels& labels, int size, uint64_t seed) {
    Rng rng(seed, "toy-item");
    real r = 8;
    if (labels.modifier == "small") r = 5;
    if (labels.modifier == "large") r = 11;
    r = r * static_cast<real>(size) / 32;

    real cx = size / real(2) + rng.uniform(-3, 3) * size / 32;
    real cy = size / real(2) + rng.uniform(-3, 3) * size / 32;

    auto fg = toy_color_rgb(labels.color);
    auto bg = toy_background_rgb(labels.background);

    CaptionedImage item;
    item.labels = labels;
    item.caption = caption_for(labels);
    item.image.width = size;
    item.image.height = size;
    item.image.rgb.resize(static_cast<size_t>(size) * size * 3);
    item.mask.resize(static_cast<size_t>(size) * size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            size_t i = static_cast<size_t>(y) * size + x;
            bool in = inside_shape(labels.shape, x + real(0.5), y + real(0.5), cx, cy, r);
            item.mask[i] = in ? 1 : 0;
            const auto& base = in ? fg : bg;
            for (int c = 0; c < 3; ++c) {
                int v = base[c] + static_cast<int>(rng.uniform_int(-4, 4));
                item.image.rgb[3 * i + c] = static_cast<uint8_t>(std::clamp(v, 0, 255));
            }
        }
    return item;
}

CaptionedImageSet generate_toy_dataset(int count, int size, uint64_t seed) {
    CaptionedImageSet set;
    Rng rng(seed, "toy-dataset");
    for (int i = 0; i < count; ++i) {
        ToyLabels labels;
        labels.color = toy_colors()[rng.uniform_int(0, toy_colors().size() - 1)];
        labels.shape = toy_shapes()[rng.uniform_int(0, toy_shapes().size() - 1)];
        labels.background = toy_backgrounds()[rng.uniform_int(0, toy_backgrounds().size() - 1)];
        labels.modifier = toy_modifiers()[rng.uniform_int(0, toy_modifiers().size() - 1)];
        CaptionedImage item = render_toy_item(labels, size, rng.next_u64());
        char name[32];
        std::snprintf(name, sizeof name, "item_%04d.png", i);
        item.image.id = name;
        set.items.push_back(std::move(item));
    }
    return set;
}

std::string classify_foreground_hue(const Image& img, const std::vector<uint8_t>& mask) {
    if (mask.size() != static_cast<size_t>(img.width) * img.height)
        throw Error("classify_foreground_hue: mask size mismatch");
    real sum[3] = {0, 0, 0};
    int64_t n = 0;
    for (size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        for (int c = 0; c < 3; ++c) sum[c] += img.rgb[3 * i + c];
        ++n;
    }
    if (n == 0) throw Error("classify_foreground_hue: empty mask");
    real mean[3] = {sum[0] / n, sum[1] / n, sum[2] / n};
    std::string best;
    real best_d = 0;
    for (const auto& name : toy_colors()) {
        auto rgb = toy_color_rgb(name);
        real d = 0;
        for (int c = 0; c < 3; ++c) d += (mean[c] - rgb[c]) * (mean[c] - rgb[c]);
        if (best.empty() || d < best_d) {
            best = name;
            best_d = d;
        }
    }
    return best;
}

}  // namespace zerocon
