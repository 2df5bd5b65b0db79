#include "grit/text.hpp"

#include <fstream>

#include <json.hpp>

#include "grit/errors.hpp"

namespace grit {

namespace tok {

std::vector<int> tokenize(const std::string& bytes) {
    std::vector<int> out;
    out.reserve(bytes.size());
    for (unsigned char c : bytes) out.push_back(byte_offset + static_cast<int>(c));
    return out;
}

std::string detokenize(const std::vector<int>& ids) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id < byte_offset || id >= vocab_size)
            throw index_error("detokenize: id " + std::to_string(id) + " is not a byte token");
        out.push_back(static_cast<char>(id - byte_offset));
    }
    return out;
}

std::string render(const std::vector<int>& ids) {
    static const char* names[byte_offset] = {"<pad>", "<s>", "</s>", "<|user|>", "<|assistant|>",
                                             "<|embed|>"};
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= vocab_size)
            throw index_error("render: id " + std::to_string(id) + " out of vocabulary");
        if (id < byte_offset)
            out += names[id];
        else
            out.push_back(static_cast<char>(id - byte_offset));
    }
    return out;
}

}  // namespace tok

std::vector<bool> FormattedSequence::pool_mask() const {
    std::vector<bool> mask(tokens.size(), false);
    for (std::size_t i = sample_span.begin; i < sample_span.end; ++i) mask[i] = true;
    return mask;
}

std::vector<bool> FormattedSequence::loss_mask() const {
    std::vector<bool> mask(tokens.size(), false);
    for (const Span& s : loss_spans)
        for (std::size_t i = s.begin; i < s.end; ++i) mask[i] = true;
    return mask;
}

FormattedSequence format_embedding(const std::optional<std::string>& instruction,
                                   const std::string& sample) {
    if (sample.empty()) throw input_error("format_embedding: empty sample");
    FormattedSequence seq;
    seq.kind = SequenceKind::Embedding;
    seq.tokens.push_back(tok::bos);
    if (instruction && !instruction->empty()) {
        seq.tokens.push_back(tok::user);
        seq.tokens.push_back(tok::byte_offset + '\n');
        seq.instruction_span.begin = seq.tokens.size();
        for (int id : tok::tokenize(*instruction)) seq.tokens.push_back(id);
        seq.instruction_span.end = seq.tokens.size();
        seq.tokens.push_back(tok::byte_offset + '\n');
    }
    seq.tokens.push_back(tok::embed);
    seq.tokens.push_back(tok::byte_offset + '\n');
    seq.sample_span.begin = seq.tokens.size();
    for (int id : tok::tokenize(sample)) seq.tokens.push_back(id);
    seq.sample_span.end = seq.tokens.size();
    return seq;
}

FormattedSequence format_generative(const ChatSample& chat, bool add_generation_prompt) {
    const auto& msgs = chat.messages;
    if (msgs.empty()) throw input_error("format_generative: no messages");
    for (std::size_t i = 0; i < msgs.size(); ++i) {
        const std::string expected = (i % 2 == 0) ? "user" : "assistant";
        if (msgs[i].role != expected)
            throw input_error("format_generative: turn " + std::to_string(i) + " has role '" +
                              msgs[i].role + "', expected '" + expected + "'");
    }
    bool trailing_user = msgs.size() % 2 == 1;
    if (trailing_user && !add_generation_prompt)
        throw input_error("format_generative: trailing user turn without generation prompt");

    FormattedSequence seq;
    seq.kind = SequenceKind::Generative;
    const int nl = tok::byte_offset + '\n';
    seq.tokens.push_back(tok::bos);
    std::size_t pairs = msgs.size() / 2;
    for (std::size_t p = 0; p < pairs; ++p) {
        if (p > 0) seq.tokens.push_back(nl);  // newline-joined turns
        seq.tokens.push_back(tok::user);
        seq.tokens.push_back(nl);
        for (int id : tok::tokenize(msgs[2 * p].content)) seq.tokens.push_back(id);
        seq.tokens.push_back(nl);
        seq.tokens.push_back(tok::assistant);
        seq.tokens.push_back(nl);
        Span loss;
        loss.begin = seq.tokens.size();
        for (int id : tok::tokenize(msgs[2 * p + 1].content)) seq.tokens.push_back(id);
        seq.tokens.push_back(tok::eos);
        loss.end = seq.tokens.size();
        seq.loss_spans.push_back(loss);
    }
    if (trailing_user) {
        if (pairs > 0) seq.tokens.push_back(nl);
        seq.tokens.push_back(tok::user);
        seq.tokens.push_back(nl);
        for (int id : tok::tokenize(msgs.back().content)) seq.tokens.push_back(id);
        seq.tokens.push_back(nl);
        seq.tokens.push_back(tok::assistant);
        seq.tokens.push_back(nl);
    }
    return seq;
}

namespace {

using nlohmann::json;

std::pair<std::optional<std::string>, std::string> parse_instr_text(const json& j,
                                                                    const char* field,
                                                                    std::size_t line) {
    if (!j.is_array() || j.size() != 2)
        throw parse_error("line " + std::to_string(line) + ": field '" + field +
                          "' must be a [instruction|null, text] pair");
    std::optional<std::string> instr;
    if (!j[0].is_null()) instr = j[0].get<std::string>();
    return {instr, j[1].get<std::string>()};
}

template <typename Fn>
void for_each_jsonl(const std::string& path, Fn&& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw parse_error("line " + std::to_string(lineno) + ": invalid JSON: " + e.what());
        }
        fn(j, lineno);
    }
}

}  // namespace

std::vector<EmbedSample> load_triplets(const std::string& path) {
    std::vector<EmbedSample> out;
    for_each_jsonl(path, [&](const json& j, std::size_t lineno) {
        for (const char* key : {"query", "pos", "neg", "dataset"})
            if (!j.contains(key))
                throw parse_error("line " + std::to_string(lineno) + ": missing field '" +
                                  std::string(key) + "'");
        EmbedSample s;
        try {
            std::tie(s.query_instruction, s.query) = parse_instr_text(j["query"], "query", lineno);
            std::tie(s.pos_instruction, s.positive) = parse_instr_text(j["pos"], "pos", lineno);
            std::tie(s.neg_instruction, s.negative) = parse_instr_text(j["neg"], "neg", lineno);
            s.dataset_id = j["dataset"].get<std::string>();
        } catch (const json::exception& e) {
            throw parse_error("line " + std::to_string(lineno) + ": " + e.what());
        }
        if (s.query.empty() || s.positive.empty() || s.negative.empty())
            throw parse_error("line " + std::to_string(lineno) + ": empty triplet text");
        out.push_back(std::move(s));
    });
    return out;
}

std::vector<ChatSample> load_chats(const std::string& path) {
    std::vector<ChatSample> out;
    for_each_jsonl(path, [&](const json& j, std::size_t lineno) {
        if (!j.contains("messages") || !j["messages"].is_array())
            throw parse_error("line " + std::to_string(lineno) + ": missing 'messages' array");
        ChatSample c;
        try {
            for (const auto& m : j["messages"])
                c.messages.push_back({m.at("role").get<std::string>(),
                                      m.at("content").get<std::string>()});
        } catch (const json::exception& e) {
            throw parse_error("line " + std::to_string(lineno) + ": " + e.what());
        }
        out.push_back(std::move(c));
    });
    return out;
}

namespace {

// Truncation drops trailing tokens only; span ends are clipped to the cap.
FormattedSequence truncate_embedding(FormattedSequence seq, std::size_t cap) {
    if (seq.sample_span.begin >= cap)
        throw input_error("sequence format tokens alone exceed the token limit of " +
                          std::to_string(cap));
    if (seq.tokens.size() > cap) {
        seq.tokens.resize(cap);
        seq.sample_span.end = std::min(seq.sample_span.end, cap);
    }
    return seq;
}

}  // namespace

TripletBatch build_triplet_batch(const std::vector<EmbedSample>& samples,
                                 std::size_t max_q_tokens, std::size_t max_d_tokens) {
    if (max_q_tokens < 8 || max_d_tokens < 8)
        throw config_error("build_triplet_batch: token limits must be >= 8");
    TripletBatch batch;
    for (const EmbedSample& s : samples) {
        batch.queries.push_back(
            truncate_embedding(format_embedding(s.query_instruction, s.query), max_q_tokens));
        batch.positives.push_back(
            truncate_embedding(format_embedding(s.pos_instruction, s.positive), max_d_tokens));
        batch.negatives.push_back(
            truncate_embedding(format_embedding(s.neg_instruction, s.negative), max_d_tokens));
        batch.dataset_ids.push_back(s.dataset_id);
    }
    return batch;
}

GenBatch build_gen_batch(const std::vector<ChatSample>& samples, std::size_t max_tokens) {
    if (max_tokens < 8) throw config_error("build_gen_batch: token limit must be >= 8");
    GenBatch batch;
    for (const ChatSample& c : samples) {
        FormattedSequence seq = format_generative(c, false);
        // First response must start inside the cap, else nothing is trainable.
        if (!seq.loss_spans.empty() && seq.loss_spans.front().begin >= max_tokens)
            throw input_error("generative sample's format tokens alone exceed the limit of " +
                              std::to_string(max_tokens));
        if (seq.tokens.size() > max_tokens) {
            seq.tokens.resize(max_tokens);
            std::vector<Span> clipped;
            for (Span s : seq.loss_spans) {
                s.end = std::min(s.end, max_tokens);
                if (s.begin < s.end) clipped.push_back(s);
            }
            seq.loss_spans = std::move(clipped);
        }
        std::size_t count = 0;
        for (const Span& s : seq.loss_spans) count += s.length();
        batch.sequences.push_back(std::move(seq));
        batch.response_token_counts.push_back(count);
    }
    return batch;
}

}  // namespace grit
