#include "zerocon/textdir.hpp"

#include <cstdlib>
#include <filesystem>

#include "zerocon/rng.hpp"

// keep the vendored server/client lean
#define CPPHTTPLIB_NO_EXCEPTIONS 0
#include <httplib.h>

namespace zerocon {

// ---------------------------------------------------------------------------
// caption providers
// ---------------------------------------------------------------------------

ToyCaptionProvider::ToyCaptionProvider(const CaptionedImageSet& set) {
    for (const auto& it : set.items) captions_.emplace_back(it.image.id, it.caption);
}

ToyCaptionProvider::ToyCaptionProvider(std::vector<std::pair<std::string, std::string>> id_to_caption)
    : captions_(std::move(id_to_caption)) {}

Prompt ToyCaptionProvider::caption(const Image& image) const {
    for (const auto& [id, cap] : captions_)
        if (id == image.id) return Prompt{cap};
    throw ProviderError("caption unavailable for image id '" + image.id + "'");
}

// ---------------------------------------------------------------------------
// toy sentence generator
// ---------------------------------------------------------------------------

const std::vector<std::string>& ToySentenceGenerator::templates() {
    static const std::vector<std::string> t = {
        "a photo of {}",   "a painting of {}", "a cropped picture of {}", "{}",
        "{} in a photo",   "{} as a drawing",  "a picture of {}",         "{} up close",
    };
    return t;
}

std::vector<std::string> ToySentenceGenerator::variations(const Prompt& p, int n) const {
    const auto& tpl = templates();
    std::vector<std::string> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        const std::string& t = tpl[i % tpl.size()];
        size_t pos = t.find("{}");
        std::string s = t.substr(0, pos) + p.text + t.substr(pos + 2);
        int cycle = i / static_cast<int>(tpl.size());
        if (cycle > 0) s += " (" + std::to_string(cycle + 1) + ")";
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// network adapters
// ---------------------------------------------------------------------------

namespace {

std::string cache_path_for(const BackendConfig& cfg, const std::string& body) {
    std::string dir = cfg.cache_dir;
    if (dir.empty()) {
        const char* env = std::getenv("ZEROCON_CACHE_DIR");
        if (env) dir = env;
    }
    if (dir.empty()) return "";
    uint64_t h = fnv1a64(cfg.endpoint) ^ fnv1a64(body);
    char name[32];
    std::snprintf(name, sizeof name, "%016llx.txt", static_cast<unsigned long long>(h));
    return (std::filesystem::path(dir) / name).string();
}

// POST with one retry; responses are cached by request hash so repeated runs
// work offline
std::string backend_post(const BackendConfig& cfg, const std::string& body, const std::string& content_type) {
    std::string cache = cache_path_for(cfg, body);
    if (!cache.empty() && file_exists(cache)) return read_text_file(cache);

    size_t scheme = cfg.endpoint.find("://");
    if (scheme == std::string::npos) throw ProviderError("backend endpoint is not a URL: " + cfg.endpoint);
    size_t path_pos = cfg.endpoint.find('/', scheme + 3);
    std::string host = cfg.endpoint.substr(0, path_pos == std::string::npos ? cfg.endpoint.size() : path_pos);
    std::string path = path_pos == std::string::npos ? "/" : cfg.endpoint.substr(path_pos);

    httplib::Client client(host);
    client.set_connection_timeout(static_cast<time_t>(cfg.timeout_seconds),
                                  static_cast<time_t>((cfg.timeout_seconds - static_cast<time_t>(cfg.timeout_seconds)) * 1e6));
    client.set_read_timeout(static_cast<time_t>(cfg.timeout_seconds), 0);
    httplib::Headers headers;
    if (!cfg.token_env.empty()) {
        const char* token = std::getenv(cfg.token_env.c_str());
        if (token) headers.emplace("Authorization", std::string("Bearer ") + token);
    }

    std::string last_error;
    for (int attempt = 0; attempt < 2; ++attempt) {
        auto res = client.Post(path, headers, body, content_type);
        if (res && res->status == 200) {
            if (!cache.empty()) {
                ensure_dir(std::filesystem::path(cache).parent_path().string());
                write_text_file(cache, res->body);
            }
            return res->body;
        }
        last_error = res ? ("HTTP " + std::to_string(res->status)) : httplib::to_string(res.error());
    }
    throw ProviderError("backend request to " + cfg.endpoint + " failed after retry: " + last_error);
}

}  // namespace

Prompt HttpCaptionProvider::caption(const Image& image) const {
    std::string body(reinterpret_cast<const char*>(image.rgb.data()), image.rgb.size());
    body = std::to_string(image.width) + "x" + std::to_string(image.height) + "\n" + body;
    std::string text = backend_post(cfg_, body, "application/octet-stream");
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
    if (text.empty()) throw ProviderError("caption backend returned an empty caption");
    return Prompt{text};
}

std::vector<std::string> HttpSentenceGenerator::variations(const Prompt& p, int n) const {
    std::string body = std::to_string(n) + "\n" + p.text;
    std::string text = backend_post(cfg_, body, "text/plain");
    std::vector<std::string> out;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) out.push_back(std::move(line));
    }
    return out;
}

// ---------------------------------------------------------------------------
// operations
// ---------------------------------------------------------------------------

Prompt build_target_prompt(const Prompt& source, const EditSpec& edit) {
    if (edit.from_phrase.empty()) return Prompt{source.text + " " + edit.to_phrase};
    size_t pos = source.text.find(edit.from_phrase);
    if (pos == std::string::npos)
        throw ConfigError("edit phrase '" + edit.from_phrase + "' does not occur in source prompt \"" +
                          source.text + "\"");
    std::string out = source.text;
    out.replace(pos, edit.from_phrase.size(), edit.to_phrase);
    return Prompt{out};
}

SentenceBank generate_bank(const Prompt& source, const Prompt& target, int n, const SentenceGenerator& gen) {
    if (n < 1) throw Error("generate_bank: n must be >= 1");
    auto src = gen.variations(source, n);
    auto tgt = gen.variations(target, n);
    if (static_cast<int>(src.size()) < n || static_cast<int>(tgt.size()) < n)
        throw ProviderError("sentence generator yielded " +
                            std::to_string(std::min(src.size(), tgt.size())) + " of " + std::to_string(n) +
                            " requested sentences");
    SentenceBank bank;
    for (int i = 0; i < n; ++i) {
        bank.source.push_back(Prompt{src[i]});
        bank.target.push_back(Prompt{tgt[i]});
    }
    return bank;
}

EditDirection edit_direction(const SentenceBank& bank, const TextEncoder& encoder) {
    if (bank.source.empty() || bank.source.size() != bank.target.size())
        throw Error("edit_direction: bank must hold equal nonzero sentence counts");
    Tensor acc;
    for (size_t i = 0; i < bank.source.size(); ++i) {
        TextEmbedding s = encoder.encode(bank.source[i]);
        TextEmbedding t = encoder.encode(bank.target[i]);
        check_same_shape(s.tokens, t.tokens, "edit_direction embeddings");
        Tensor diff = sub(t.tokens, s.tokens);
        if (!acc.defined())
            acc = std::move(diff);
        else {
            check_same_shape(acc, diff, "edit_direction embeddings");
            acc = zerocon::add(acc, diff);
        }
    }
    return EditDirection{scale(acc, real(1) / static_cast<real>(bank.source.size()))};
}

TextEmbedding apply_direction(const TextEmbedding& c, const EditDirection& d) {
    check_same_shape(c.tokens, d.delta, "apply_direction");
    TextEmbedding out;
    out.tokens = zerocon::add(c.tokens, d.delta);
    out.pooled = pool_tokens(out.tokens);
    return out;
}

EditDirection negate(const EditDirection& d) { return EditDirection{scale(d.delta, -1)}; }

void save_bank(const std::string& path, const SentenceBank& bank) {
    std::string out;
    for (const auto& p : bank.source) out += "S\t" + p.text + "\n";
    for (const auto& p : bank.target) out += "T\t" + p.text + "\n";
    write_text_file(path, out);
}

SentenceBank load_bank(const std::string& path) {
    std::string text = read_text_file(path);
    SentenceBank bank;
    size_t pos = 0;
    int lineno = 0;
    while (pos < text.size()) {
        size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        ++lineno;
        if (line.empty()) continue;
        if (line.size() < 3 || line[1] != '\t' || (line[0] != 'S' && line[0] != 'T'))
            throw Error("bank file line " + std::to_string(lineno) + " must be 'S<TAB>...' or 'T<TAB>...'");
        Prompt p{line.substr(2)};
        if (line[0] == 'S')
            bank.source.push_back(std::move(p));
        else
            bank.target.push_back(std::move(p));
    }
    if (bank.source.empty() || bank.source.size() != bank.target.size())
        throw Error("bank file must hold equal nonzero S and T counts, got " +
                    std::to_string(bank.source.size()) + "/" + std::to_string(bank.target.size()));
    return bank;
}

}  // namespace zerocon
