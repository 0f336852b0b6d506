#include "zerocon/text.hpp"

#include <cctype>

namespace zerocon {

Tensor pool_tokens(const Tensor& tokens) {
    check_shape(tokens.rank() == 2, "pool_tokens expects (L,d)");
    int64_t L = tokens.dim(0), d = tokens.dim(1);
    Tensor out({d});
    for (int64_t j = 0; j < d; ++j) {
        real acc = 0;
        for (int64_t i = 0; i < L; ++i) acc += tokens.data[i * d + j];
        out.data[j] = acc / static_cast<real>(L);
    }
    return out;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

Vocab::Vocab() {
    words_ = {
        "[pad]", "[unk]",
        // caption grammar
        "a", "on", "background", "red", "green", "blue", "yellow", "circle", "square", "triangle",
        "white", "black", "gray", "small", "large",
        // sentence-bank templates
        "photo", "of", "painting", "cropped", "picture", "in", "as", "drawing", "up", "close",
        // cycle suffixes
        "2", "3", "4", "5", "6", "7", "8", "9",
    };
}

const Vocab& Vocab::instance() {
    static Vocab v;
    return v;
}

int64_t Vocab::id_of(const std::string& word) const {
    for (size_t i = 0; i < words_.size(); ++i)
        if (words_[i] == word) return static_cast<int64_t>(i);
    return 1;
}

std::vector<int64_t> Vocab::encode_ids(const std::string& text, int64_t seq_len) const {
    std::vector<int64_t> ids;
    ids.reserve(seq_len);
    for (const auto& w : tokenize(text)) {
        if (static_cast<int64_t>(ids.size()) == seq_len) break;
        ids.push_back(id_of(w));
    }
    while (static_cast<int64_t>(ids.size()) < seq_len) ids.push_back(0);
    return ids;
}

ToyTextEncoder::ToyTextEncoder(Tensor table, int64_t seq_len) : table_(std::move(table)), seq_len_(seq_len) {
    check_shape(table_.rank() == 2 && table_.dim(0) == Vocab::instance().size(),
                "text encoder table must be (vocab,d)");
}

TextEmbedding ToyTextEncoder::encode(const Prompt& p) const {
    if (tokenize(p.text).empty()) throw Error("cannot encode empty prompt");
    std::vector<int64_t> ids = Vocab::instance().encode_ids(p.text, seq_len_);
    int64_t d = table_.dim(1);
    TextEmbedding e;
    e.tokens = Tensor({seq_len_, d});
    for (int64_t i = 0; i < seq_len_; ++i)
        std::copy_n(table_.ptr() + ids[i] * d, d, e.tokens.ptr() + i * d);
    e.pooled = pool_tokens(e.tokens);
    return e;
}

TextEmbedding zero_embedding(int64_t seq_len, int64_t dim) {
    TextEmbedding e;
    e.tokens = Tensor({seq_len, dim});
    e.pooled = Tensor({dim});
    return e;
}

}  // namespace zerocon
