#pragma once

#include <memory>
#include <string>
#include <vector>

#include "zerocon/dataset.hpp"
#include "zerocon/text.hpp"

namespace zerocon {

struct EditSpec {
    std::string from_phrase;
    std::string to_phrase;
};

struct SentenceBank {
    std::vector<Prompt> source;
    std::vector<Prompt> target;
};

struct EditDirection {
    Tensor delta;  // same shape as TextEmbedding.tokens
};

// ---------------------------------------------------------------------------
// providers
// ---------------------------------------------------------------------------

class CaptionProvider {
public:
    virtual ~CaptionProvider() = default;
    virtual Prompt caption(const Image& image) const = 0;
};

// Dataset-label lookup: resolves the image id through the manifest captions.
class ToyCaptionProvider : public CaptionProvider {
public:
    explicit ToyCaptionProvider(const CaptionedImageSet& set);
    explicit ToyCaptionProvider(std::vector<std::pair<std::string, std::string>> id_to_caption);

    Prompt caption(const Image& image) const override;

private:
    std::vector<std::pair<std::string, std::string>> captions_;
};

class SentenceGenerator {
public:
    virtual ~SentenceGenerator() = default;
    // n variations of the prompt; the variation order must be deterministic
    // so source/target calls stay paired
    virtual std::vector<std::string> variations(const Prompt& p, int n) const = 0;
};

// Wraps the prompt in a fixed cycle of context templates; past one full cycle
// a numbered suffix " (k)" keeps sentences distinct.
class ToySentenceGenerator : public SentenceGenerator {
public:
    static const std::vector<std::string>& templates();
    std::vector<std::string> variations(const Prompt& p, int n) const override;
};

// Network-backed providers (external caption / sentence services). Requests
// are cached offline under cache_dir keyed by a request hash, with one retry
// on failure; the toy pipeline never needs them.
struct BackendConfig {
    std::string endpoint;       // e.g. http://host:port/caption
    std::string token_env;      // name of the env var holding the auth token
    real timeout_seconds = 10;
    std::string cache_dir;      // empty -> ZEROCON_CACHE_DIR or no cache
};

class HttpCaptionProvider : public CaptionProvider {
public:
    explicit HttpCaptionProvider(BackendConfig cfg) : cfg_(std::move(cfg)) {}
    Prompt caption(const Image& image) const override;

private:
    BackendConfig cfg_;
};

class HttpSentenceGenerator : public SentenceGenerator {
public:
    explicit HttpSentenceGenerator(BackendConfig cfg) : cfg_(std::move(cfg)) {}
    std::vector<std::string> variations(const Prompt& p, int n) const override;

private:
    BackendConfig cfg_;
};

// ---------------------------------------------------------------------------
// operations
// ---------------------------------------------------------------------------

// First occurrence of from_phrase replaced by to_phrase; an empty from_phrase
// appends " " + to_phrase.
Prompt build_target_prompt(const Prompt& source, const EditSpec& edit);

SentenceBank generate_bank(const Prompt& source, const Prompt& target, int n, const SentenceGenerator& gen);

// delta = mean_i (enc(target_i) - enc(source_i)) over the token arrays
EditDirection edit_direction(const SentenceBank& bank, const TextEncoder& encoder);

TextEmbedding apply_direction(const TextEmbedding& c, const EditDirection& d);

EditDirection negate(const EditDirection& d);

// bank file: lines "S\t<sentence>" and "T\t<sentence>", equal counts
void save_bank(const std::string& path, const SentenceBank& bank);
SentenceBank load_bank(const std::string& path);

}  // namespace zerocon
