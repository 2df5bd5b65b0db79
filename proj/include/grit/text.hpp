#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace grit {

// Byte-level tokenizer. Special tokens are atomic and never produced from
// raw bytes; bytes 0-255 map to ids 6-261.
namespace tok {
constexpr int pad = 0;
constexpr int bos = 1;       // <s>
constexpr int eos = 2;       // </s>
constexpr int user = 3;      // <|user|>
constexpr int assistant = 4; // <|assistant|>
constexpr int embed = 5;     // <|embed|>
constexpr int byte_offset = 6;
constexpr int vocab_size = 262;

std::vector<int> tokenize(const std::string& bytes);
std::string detokenize(const std::vector<int>& ids);  // byte ids -> bytes
// Human/golden-file rendering: special tokens as their literal markup.
std::string render(const std::vector<int>& ids);
}  // namespace tok

struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive
    std::size_t length() const { return end - begin; }
    bool empty() const { return begin == end; }
};

enum class SequenceKind { Embedding, Generative };

struct FormattedSequence {
    std::vector<int> tokens;
    Span instruction_span;
    Span sample_span;              // pooled region for embedding sequences
    std::vector<Span> loss_spans;  // generative targets, one per response
    SequenceKind kind = SequenceKind::Embedding;

    std::vector<bool> pool_mask() const;
    std::vector<bool> loss_mask() const;
};

struct Message {
    std::string role;  // "user" | "assistant"
    std::string content;
};

struct EmbedSample {
    std::optional<std::string> query_instruction;
    std::string query;
    std::optional<std::string> pos_instruction;
    std::string positive;
    std::optional<std::string> neg_instruction;
    std::string negative;
    std::string dataset_id;
};

struct ChatSample {
    std::vector<Message> messages;
};

// <s><|user|>\n{instruction}\n<|embed|>\n{sample}  (or <s><|embed|>\n{sample}
// without instruction). sample_span covers exactly the sample bytes.
FormattedSequence format_embedding(const std::optional<std::string>& instruction,
                                   const std::string& sample);

// <s> then newline-joined turns <|user|>\n{u}\n<|assistant|>\n{a}</s>; each
// response plus its </s> becomes a loss span. With add_generation_prompt and
// a trailing user turn, the sequence ends with <|assistant|>\n and has no
// loss spans.
FormattedSequence format_generative(const ChatSample& chat, bool add_generation_prompt);

std::vector<EmbedSample> load_triplets(const std::string& path);
std::vector<ChatSample> load_chats(const std::string& path);

struct TripletBatch {
    std::vector<FormattedSequence> queries;
    std::vector<FormattedSequence> positives;
    std::vector<FormattedSequence> negatives;
    std::vector<std::string> dataset_ids;
    std::size_t size() const { return queries.size(); }
};

struct GenBatch {
    std::vector<FormattedSequence> sequences;
    std::vector<std::size_t> response_token_counts;  // loss tokens per sample
};

TripletBatch build_triplet_batch(const std::vector<EmbedSample>& samples,
                                 std::size_t max_q_tokens, std::size_t max_d_tokens);
GenBatch build_gen_batch(const std::vector<ChatSample>& samples, std::size_t max_tokens);

}  // namespace grit
