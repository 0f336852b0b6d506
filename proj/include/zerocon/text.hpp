#pragma once

#include <string>
#include <vector>

#include "zerocon/tensor.hpp"

namespace zerocon {

struct Prompt {
    std::string text;
};

// Conditioning sequence: one embedding row per token plus a mean-pooled
// summary vector used only for similarity reporting.
struct TextEmbedding {
    Tensor tokens;  // (L, d)
    Tensor pooled;  // (d,)
};

Tensor pool_tokens(const Tensor& tokens);

// lowercase, non-alphanumeric characters become separators
std::vector<std::string> tokenize(const std::string& text);

// Fixed word list covering the toy caption grammar and the sentence-bank
// templates. Index 0 is the padding token, index 1 the unknown token.
class Vocab {
public:
    static const Vocab& instance();

    int64_t size() const { return static_cast<int64_t>(words_.size()); }
    int64_t id_of(const std::string& word) const;  // unknown -> 1
    const std::string& word(int64_t id) const { return words_.at(id); }

    // token ids padded/truncated to seq_len
    std::vector<int64_t> encode_ids(const std::string& text, int64_t seq_len) const;

private:
    Vocab();
    std::vector<std::string> words_;
};

class TextEncoder {
public:
    virtual ~TextEncoder() = default;
    virtual TextEmbedding encode(const Prompt& p) const = 0;
    virtual int64_t seq_len() const = 0;
    virtual int64_t embed_dim() const = 0;
};

// Table-lookup encoder over the shared vocabulary. The table is the caption
// embedding trained jointly with the toy denoiser.
class ToyTextEncoder : public TextEncoder {
public:
    ToyTextEncoder(Tensor table, int64_t seq_len);

    TextEmbedding encode(const Prompt& p) const override;
    int64_t seq_len() const override { return seq_len_; }
    int64_t embed_dim() const override { return table_.dim(1); }
    const Tensor& table() const { return table_; }

private:
    Tensor table_;  // (vocab, d)
    int64_t seq_len_;
};

TextEmbedding zero_embedding(int64_t seq_len, int64_t dim);

}  // namespace zerocon
