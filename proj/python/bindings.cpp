// Python bindings for the gritkit core: tokenizer, prompt formats, model,
// training, retrieval index, cached RAG serving, reranking and metrics.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "grit/errors.hpp"
#include "grit/gradcheck.hpp"
#include "grit/metrics.hpp"
#include "grit/rag.hpp"
#include "grit/rerank.hpp"
#include "grit/trainer.hpp"

namespace py = pybind11;
using namespace grit;

namespace {

AttentionMode attention_from_name(const std::string& name) {
    return AttentionMode{attention_kind_from_name(name), 0};
}

GenLossMode gen_loss_mode_from_name(const std::string& name, std::size_t mix_group) {
    if (name == "token") return GenLossMode::token();
    if (name == "sample") return GenLossMode::sample();
    if (name == "mix") {
        if (mix_group < 1) throw usage_error("mix loss mode needs mix_group >= 1");
        return GenLossMode::mix(mix_group);
    }
    throw usage_error("unknown gen loss mode '" + name + "' (valid: token, sample, mix)");
}

BackwardScheme scheme_from_name(const std::string& name) {
    if (name == "naive") return BackwardScheme::Naive;
    if (name == "split") return BackwardScheme::Split;
    if (name == "gradcache") return BackwardScheme::GradCache;
    throw usage_error("unknown backward scheme '" + name +
                      "' (valid: naive, split, gradcache)");
}

}  // namespace

PYBIND11_MODULE(_gritcore, m) {
    m.doc() = "Joint embedding/generation transformer with cached RAG serving";

    py::register_exception<usage_error>(m, "UsageError", PyExc_ValueError);
    py::register_exception<config_error>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<input_error>(m, "InputError", PyExc_ValueError);

    // --- tokenizer ---------------------------------------------------------
    m.def("tokenize", &tok::tokenize, py::arg("text"),
          "Byte-level token ids (no special tokens added).");
    m.def("detokenize", &tok::detokenize, py::arg("ids"),
          "Bytes back to text; raises on special tokens.");
    m.def("render", &tok::render, py::arg("ids"),
          "Human-readable text with special tokens as <s>, <|user|>, ... markup.");

    // --- prompt formats ----------------------------------------------------
    py::class_<FormattedSequence>(m, "FormattedSequence")
        .def_readonly("tokens", &FormattedSequence::tokens)
        .def("pool_mask", &FormattedSequence::pool_mask)
        .def("loss_mask", &FormattedSequence::loss_mask)
        .def("render", [](const FormattedSequence& s) { return tok::render(s.tokens); });

    m.def("format_embedding", &format_embedding, py::arg("instruction"), py::arg("sample"));
    m.def(
        "format_generative",
        [](const std::vector<std::pair<std::string, std::string>>& turns,
           bool add_generation_prompt) {
            ChatSample chat;
            for (const auto& [role, content] : turns) chat.messages.push_back({role, content});
            return format_generative(chat, add_generation_prompt);
        },
        py::arg("turns"), py::arg("add_generation_prompt") = false,
        "turns: list of (role, content) pairs with roles 'user' / 'assistant'.");

    // --- model -------------------------------------------------------------
    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("d_model", &ModelConfig::d_model)
        .def_readwrite("n_layers", &ModelConfig::n_layers)
        .def_readwrite("n_heads", &ModelConfig::n_heads)
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
        .def_readwrite("ffn_multiplier", &ModelConfig::ffn_multiplier)
        .def_readwrite("embedding_head_dim", &ModelConfig::embedding_head_dim)
        .def_readwrite("rng_seed", &ModelConfig::rng_seed)
        .def("fingerprint", &ModelConfig::fingerprint);

    py::class_<GenResult>(m, "GenResult")
        .def_readonly("tokens", &GenResult::tokens)
        .def_property_readonly("prefill_tokens",
                               [](const GenResult& g) { return g.stats.prefill_tokens; })
        .def_property_readonly("decode_tokens",
                               [](const GenResult& g) { return g.stats.decode_tokens; });

    py::class_<TransformerModel>(m, "Model")
        .def(py::init<const ModelConfig&>(), py::arg("config"))
        .def_property_readonly("config", &TransformerModel::config,
                               py::return_value_policy::copy)
        .def("parameter_count", &TransformerModel::parameter_count)
        .def(
            "embed",
            [](const TransformerModel& model, const std::string& text,
               const std::optional<std::string>& instruction, const std::string& attention,
               const std::string& pooling) {
                NoGradGuard ng;
                FormattedSequence seq = format_embedding(instruction, text);
                return model
                    .embed(seq, attention_from_name(attention), pooling_mode_from_name(pooling))
                    .data();
            },
            py::arg("text"), py::arg("instruction") = std::nullopt,
            py::arg("attention") = "bidirectional", py::arg("pooling") = "mean",
            "Pooled embedding vector for one text.")
        .def(
            "generate",
            [](const TransformerModel& model, const std::vector<int>& prompt,
               std::size_t max_new) { return model.generate_greedy(prompt, max_new); },
            py::arg("prompt_tokens"), py::arg("max_new") = 16,
            "Greedy decode; returns a GenResult.");

    m.def("save_checkpoint", &save_checkpoint, py::arg("model"), py::arg("path"));
    m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

    // --- data + training ---------------------------------------------------
    py::class_<EmbedSample>(m, "EmbedSample")
        .def(py::init([](const std::string& query, const std::string& positive,
                         const std::string& negative, const std::string& dataset,
                         const std::optional<std::string>& instruction) {
                 return EmbedSample{instruction, query, instruction, positive,
                                    instruction, negative, dataset};
             }),
             py::arg("query"), py::arg("positive"), py::arg("negative"),
             py::arg("dataset") = "default", py::arg("instruction") = std::nullopt)
        .def_readwrite("query", &EmbedSample::query)
        .def_readwrite("positive", &EmbedSample::positive)
        .def_readwrite("negative", &EmbedSample::negative)
        .def_readwrite("dataset", &EmbedSample::dataset_id);

    py::class_<ChatSample>(m, "ChatSample")
        .def(py::init([](const std::vector<std::pair<std::string, std::string>>& turns) {
                 ChatSample c;
                 for (const auto& [role, content] : turns) c.messages.push_back({role, content});
                 return c;
             }),
             py::arg("turns"))
        .def_property_readonly("turns", [](const ChatSample& c) {
            std::vector<std::pair<std::string, std::string>> out;
            for (const auto& msg : c.messages) out.emplace_back(msg.role, msg.content);
            return out;
        });

    m.def("load_triplets", &load_triplets, py::arg("path"));
    m.def("load_chats", &load_chats, py::arg("path"));

    py::class_<StepReport>(m, "StepReport")
        .def_readonly("step", &StepReport::step)
        .def_readonly("rep_loss", &StepReport::rep_loss)
        .def_readonly("gen_loss", &StepReport::gen_loss)
        .def_readonly("ratio", &StepReport::ratio)
        .def_readonly("lr", &StepReport::lr)
        .def_readonly("grad_norm", &StepReport::grad_norm);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("total_steps", &TrainConfig::total_steps)
        .def_readwrite("lr_peak", &TrainConfig::lr_peak)
        .def_readwrite("warmup_fraction", &TrainConfig::warmup_fraction)
        .def_readwrite("batch_emb", &TrainConfig::batch_emb)
        .def_readwrite("batch_gen", &TrainConfig::batch_gen)
        .def_readwrite("gradcache_micro", &TrainConfig::gradcache_micro)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("checkpoint_every", &TrainConfig::checkpoint_every)
        .def_readwrite("grad_clip", &TrainConfig::grad_clip)
        .def_property(
            "lambda_rep", [](const TrainConfig& c) { return c.weights.lambda_rep; },
            [](TrainConfig& c, double v) { c.weights.lambda_rep = v; })
        .def_property(
            "lambda_gen", [](const TrainConfig& c) { return c.weights.lambda_gen; },
            [](TrainConfig& c, double v) { c.weights.lambda_gen = v; })
        .def(
            "set_gen_loss_mode",
            [](TrainConfig& c, const std::string& name, std::size_t mix_group) {
                c.gen_loss_mode = gen_loss_mode_from_name(name, mix_group);
            },
            py::arg("name"), py::arg("mix_group") = 0, "name: token | sample | mix")
        .def("set_backward_scheme",
             [](TrainConfig& c, const std::string& name) {
                 c.backward_scheme = scheme_from_name(name);
             },
             py::arg("name"), "name: naive | split | gradcache");

    m.def(
        "train",
        [](TransformerModel& model, const std::vector<EmbedSample>& triplets,
           const std::vector<ChatSample>& chats, const TrainConfig& cfg,
           const std::string& checkpoint, const std::string& metrics) {
            TrainPaths paths;
            paths.checkpoint = checkpoint;
            paths.metrics = metrics;
            return train(model, triplets, chats, cfg, paths).reports;
        },
        py::arg("model"), py::arg("triplets"), py::arg("chats"), py::arg("config"),
        py::arg("checkpoint") = "", py::arg("metrics") = "",
        "Joint contrastive + generative training; returns per-step reports.");

    // --- index + retrieval -------------------------------------------------
    py::class_<DocumentIndex>(m, "DocumentIndex")
        .def_property_readonly("doc_count", &DocumentIndex::doc_count)
        .def_property_readonly("fingerprint", &DocumentIndex::fingerprint)
        .def_property_readonly("kv_bytes_read", &DocumentIndex::kv_bytes_read)
        .def("text", &DocumentIndex::text, py::arg("doc"))
        .def("embedding", &DocumentIndex::embedding, py::arg("doc"));

    m.def(
        "build_index",
        [](const TransformerModel& model, const std::vector<std::string>& docs, bool store_kv,
           const std::string& attention, const std::string& pooling) {
            return build_index(model, docs, store_kv, attention_from_name(attention),
                               pooling_mode_from_name(pooling));
        },
        py::arg("model"), py::arg("docs"), py::arg("store_kv") = false,
        py::arg("attention") = "bidirectional", py::arg("pooling") = "mean");
    m.def("save_index", &save_index, py::arg("index"), py::arg("base_path"));
    m.def("load_index", &load_index, py::arg("base_path"), py::arg("lazy_kv") = true);
    m.def(
        "retrieve",
        [](const DocumentIndex& index, const std::vector<double>& query_embedding,
           std::size_t k) {
            std::vector<std::pair<std::size_t, double>> out;
            for (const RetrievalHit& h : retrieve(index, query_embedding, k))
                out.emplace_back(h.doc, h.cosine);
            return out;
        },
        py::arg("index"), py::arg("query_embedding"), py::arg("k"),
        "Top-k (doc_id, cosine) pairs, descending.");

    // --- RAG serving -------------------------------------------------------
    py::class_<RagAnswer>(m, "RagAnswer")
        .def_readonly("text", &RagAnswer::text)
        .def_readonly("tokens", &RagAnswer::tokens)
        .def_readonly("retrieved_doc", &RagAnswer::retrieved_doc)
        .def_readonly("prefill_tokens", &RagAnswer::prefill_tokens)
        .def_readonly("cache_tokens_reused", &RagAnswer::cache_tokens_reused)
        .def_readonly("decode_tokens", &RagAnswer::decode_tokens)
        .def_readonly("causal_cache_equivalent", &RagAnswer::causal_cache_equivalent)
        .def_readonly("wall_clock_s", &RagAnswer::wall_clock_s);

    m.def("cache_modes", &cache_mode_names);
    m.def(
        "answer",
        [](const TransformerModel& model, const DocumentIndex& index, const std::string& query,
           const std::string& mode, std::size_t max_new, bool doc_first, bool embed_format) {
            RagOptions opts;
            opts.max_new = max_new;
            opts.doc_first = doc_first;
            opts.embed_format = embed_format;
            return answer(model, index, query, cache_mode_from_name(mode), opts);
        },
        py::arg("model"), py::arg("index"), py::arg("query"), py::arg("mode") = "rag",
        py::arg("max_new") = 16, py::arg("doc_first") = false, py::arg("embed_format") = false);
    m.def(
        "bench_latency",
        [](const TransformerModel& model, const DocumentIndex& index,
           const std::vector<std::string>& queries, const std::vector<std::string>& modes,
           std::size_t repeats, std::size_t max_new) {
            std::vector<WorkloadItem> workload;
            for (const std::string& q : queries) workload.push_back({q, {}});
            std::vector<CacheMode> ms;
            for (const std::string& name : modes) ms.push_back(cache_mode_from_name(name));
            RagOptions opts;
            opts.max_new = max_new;
            py::list rows;
            for (const BenchRow& r : bench_latency(model, index, workload, ms, repeats, opts)) {
                py::dict d;
                d["mode"] = cache_mode_name(r.mode);
                d["mean_s"] = r.mean_s;
                d["stddev_s"] = r.stddev_s;
                d["mean_prefill"] = r.mean_prefill;
                d["mean_reused"] = r.mean_reused;
                d["runs"] = r.runs;
                rows.append(d);
            }
            return rows;
        },
        py::arg("model"), py::arg("index"), py::arg("queries"), py::arg("modes"),
        py::arg("repeats") = 5, py::arg("max_new") = 16);

    // --- reranking ---------------------------------------------------------
    m.def(
        "rerank",
        [](const TransformerModel& model, const std::string& query,
           const std::vector<std::string>& candidates, const std::string& method,
           std::size_t k) {
            RerankConfig cfg;
            cfg.method = rerank_method_from_name(method);
            cfg.k = k;
            RerankOutcome out = rerank(model, query, candidates, cfg);
            return py::make_tuple(out.order, out.scores, out.parse_warning);
        },
        py::arg("model"), py::arg("query"), py::arg("candidates"),
        py::arg("method") = "pairwise-logprob", py::arg("k") = 10,
        "Returns (order, scores, parse_warning).");
    m.def(
        "retrieve_then_rerank",
        [](const TransformerModel& model, const DocumentIndex& index, const std::string& query,
           const std::string& method, std::size_t k) {
            RerankConfig cfg;
            cfg.method = rerank_method_from_name(method);
            cfg.k = k;
            return retrieve_then_rerank(model, index, query, cfg);
        },
        py::arg("model"), py::arg("index"), py::arg("query"),
        py::arg("method") = "pairwise-logprob", py::arg("k") = 10);

    // --- metrics -----------------------------------------------------------
    m.def("ndcg_at_k", &ndcg_at_k, py::arg("ranked_relevances"), py::arg("k"));
    m.def("map_score", &map_score, py::arg("ranked_binary_relevances"));
    m.def("spearman", &spearman, py::arg("x"), py::arg("y"));
    m.def("match_metric", &match_metric, py::arg("generation"), py::arg("answers"));

    // --- gradient checking -------------------------------------------------
    m.def(
        "gradcheck",
        [](TransformerModel& model, const std::vector<EmbedSample>& triplets,
           std::size_t samples_per_param, std::uint64_t seed) {
            TripletBatch batch = build_triplet_batch(triplets, 64, 128);
            GradCheckReport r = gradcheck_rep(model, batch, {}, {}, samples_per_param, seed);
            py::dict d;
            d["max_rel_error"] = r.max_rel_error;
            d["worst_param"] = r.worst_param;
            d["checks"] = r.checks;
            return d;
        },
        py::arg("model"), py::arg("triplets"), py::arg("samples_per_param") = 1,
        py::arg("seed") = 0,
        "Finite-difference check of the contrastive loss gradients.");
}
