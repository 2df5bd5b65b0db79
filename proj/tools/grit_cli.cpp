#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "grit/errors.hpp"
#include "grit/gradcheck.hpp"
#include "grit/index.hpp"
#include "grit/metrics.hpp"
#include "grit/model.hpp"
#include "grit/rag.hpp"
#include "grit/rerank.hpp"
#include "grit/trainer.hpp"

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::vector<std::string>& allowed,
                    const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw grit::config_error("unknown key '" + it.key() + "' in " + where);
}

grit::ModelConfig parse_model_config(const json& j) {
    reject_unknown(j, {"d_model", "n_layers", "n_heads", "max_seq_len", "ffn_multiplier",
                       "embedding_head_dim", "seed"},
                   "model");
    grit::ModelConfig cfg;
    if (j.contains("d_model")) cfg.d_model = j["d_model"].get<std::size_t>();
    if (j.contains("n_layers")) cfg.n_layers = j["n_layers"].get<std::size_t>();
    if (j.contains("n_heads")) cfg.n_heads = j["n_heads"].get<std::size_t>();
    if (j.contains("max_seq_len")) cfg.max_seq_len = j["max_seq_len"].get<std::size_t>();
    if (j.contains("ffn_multiplier")) cfg.ffn_multiplier = j["ffn_multiplier"].get<std::size_t>();
    if (j.contains("embedding_head_dim"))
        cfg.embedding_head_dim = j["embedding_head_dim"].get<std::size_t>();
    if (j.contains("seed")) cfg.rng_seed = j["seed"].get<std::uint64_t>();
    cfg.validate();
    return cfg;
}

grit::TrainConfig parse_train_config(const json& j) {
    reject_unknown(j,
                   {"total_steps", "lr_peak", "warmup_fraction", "batch_emb", "batch_gen",
                    "lambda_rep", "lambda_gen", "gen_loss_mode", "mix_group", "tau",
                    "negative_scope", "hard_negatives", "emb_attention", "prefix_len", "pooling",
                    "gen_attention", "backward_scheme", "gradcache_micro", "seed",
                    "checkpoint_every", "grad_clip", "max_q_tokens", "max_d_tokens",
                    "max_gen_tokens"},
                   "train");
    grit::TrainConfig cfg;
    if (j.contains("total_steps")) cfg.total_steps = j["total_steps"].get<std::size_t>();
    if (j.contains("lr_peak")) cfg.lr_peak = j["lr_peak"].get<double>();
    if (j.contains("warmup_fraction")) cfg.warmup_fraction = j["warmup_fraction"].get<double>();
    if (j.contains("batch_emb")) cfg.batch_emb = j["batch_emb"].get<std::size_t>();
    if (j.contains("batch_gen")) cfg.batch_gen = j["batch_gen"].get<std::size_t>();
    if (j.contains("lambda_rep")) cfg.weights.lambda_rep = j["lambda_rep"].get<double>();
    if (j.contains("lambda_gen")) cfg.weights.lambda_gen = j["lambda_gen"].get<double>();
    if (j.contains("gen_loss_mode")) {
        std::string m = j["gen_loss_mode"].get<std::string>();
        if (m == "token")
            cfg.gen_loss_mode = grit::GenLossMode::token();
        else if (m == "sample")
            cfg.gen_loss_mode = grit::GenLossMode::sample();
        else if (m == "mix")
            cfg.gen_loss_mode =
                grit::GenLossMode::mix(j.value("mix_group", std::size_t{2}));
        else
            throw grit::config_error("gen_loss_mode must be token, sample or mix");
    }
    if (j.contains("tau")) cfg.rep_cfg.tau = j["tau"].get<double>();
    if (j.contains("negative_scope")) {
        std::string s = j["negative_scope"].get<std::string>();
        if (s == "same-dataset")
            cfg.rep_cfg.negative_scope = grit::NegativeScope::SameDataset;
        else if (s == "any-dataset")
            cfg.rep_cfg.negative_scope = grit::NegativeScope::AnyDataset;
        else
            throw grit::config_error("negative_scope must be same-dataset or any-dataset");
    }
    if (j.contains("hard_negatives"))
        cfg.rep_cfg.include_hard_negatives = j["hard_negatives"].get<bool>();
    if (j.contains("emb_attention")) {
        cfg.emb_setup.attention.kind =
            grit::attention_kind_from_name(j["emb_attention"].get<std::string>());
        cfg.emb_setup.attention.prefix_len = j.value("prefix_len", std::size_t{0});
    }
    if (j.contains("pooling"))
        cfg.emb_setup.pooling = grit::pooling_mode_from_name(j["pooling"].get<std::string>());
    if (j.contains("gen_attention"))
        cfg.gen_attention.kind =
            grit::attention_kind_from_name(j["gen_attention"].get<std::string>());
    if (j.contains("backward_scheme")) {
        std::string s = j["backward_scheme"].get<std::string>();
        if (s == "naive")
            cfg.backward_scheme = grit::BackwardScheme::Naive;
        else if (s == "split")
            cfg.backward_scheme = grit::BackwardScheme::Split;
        else if (s == "gradcache")
            cfg.backward_scheme = grit::BackwardScheme::GradCache;
        else
            throw grit::config_error("backward_scheme must be naive, split or gradcache");
    }
    if (j.contains("gradcache_micro"))
        cfg.gradcache_micro = j["gradcache_micro"].get<std::size_t>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("checkpoint_every"))
        cfg.checkpoint_every = j["checkpoint_every"].get<std::size_t>();
    if (j.contains("grad_clip")) cfg.grad_clip = j["grad_clip"].get<double>();
    if (j.contains("max_q_tokens")) cfg.max_q_tokens = j["max_q_tokens"].get<std::size_t>();
    if (j.contains("max_d_tokens")) cfg.max_d_tokens = j["max_d_tokens"].get<std::size_t>();
    if (j.contains("max_gen_tokens")) cfg.max_gen_tokens = j["max_gen_tokens"].get<std::size_t>();
    cfg.validate();
    return cfg;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw grit::io_error("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(line);
    return lines;
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed_override) {
    std::ifstream in(config_path, std::ios::binary);
    if (!in) throw grit::config_error("cannot open config file: " + config_path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw grit::config_error("config parse failure in " + config_path + ": " + e.what());
    }
    reject_unknown(j, {"model", "train", "data", "output"}, "config root");
    grit::ModelConfig mcfg = parse_model_config(j.value("model", json::object()));
    grit::TrainConfig tcfg = parse_train_config(j.value("train", json::object()));
    if (seed_override) {
        tcfg.seed = *seed_override;
        mcfg.rng_seed = *seed_override;
    }

    json data = j.value("data", json::object());
    reject_unknown(data, {"triplets", "chats"}, "data");
    if (!data.contains("triplets") || !data.contains("chats"))
        throw grit::config_error("data.triplets and data.chats are required");
    auto triplets = grit::load_triplets(data["triplets"].get<std::string>());
    auto chats = grit::load_chats(data["chats"].get<std::string>());

    json out = j.value("output", json::object());
    reject_unknown(out, {"checkpoint", "metrics", "state"}, "output");
    grit::TrainPaths paths;
    paths.checkpoint = out.value("checkpoint", "model.ckpt");
    paths.metrics = out.value("metrics", "metrics.jsonl");
    paths.state = out.value("state", "");

    grit::TransformerModel model(mcfg);
    grit::TrainOutput result = grit::train(model, triplets, chats, tcfg, paths);
    const auto& last = result.reports.back();
    std::printf("trained %zu steps  rep %.6f  gen %.6f  -> %s\n", result.reports.size(),
                last.rep_loss, last.gen_loss, paths.checkpoint.c_str());
    return 0;
}

int cmd_embed(const std::string& model_path, const std::string& input_path,
              const std::optional<std::string>& instruction, const std::string& output_path,
              const std::string& attention, const std::string& pooling) {
    grit::TransformerModel model = grit::load_checkpoint(model_path);
    grit::AttentionMode mode{grit::attention_kind_from_name(attention), 0};
    grit::PoolingMode pool = grit::pooling_mode_from_name(pooling);
    std::ofstream out(output_path, std::ios::binary | std::ios::trunc);
    if (!out) throw grit::io_error("cannot write output: " + output_path);
    grit::NoGradGuard ng;
    for (const std::string& text : read_lines(input_path)) {
        grit::FormattedSequence seq = grit::format_embedding(instruction, text);
        grit::Tensor e = model.embed(seq, mode, pool);
        json line = {{"text", text}, {"embedding", e.data()}};
        out << line.dump() << "\n";
    }
    return 0;
}

int cmd_generate(const std::string& model_path, const std::string& prompt, std::size_t max_new) {
    grit::TransformerModel model = grit::load_checkpoint(model_path);
    grit::ChatSample chat{{{"user", prompt}}};
    grit::FormattedSequence seq = grit::format_generative(chat, true);
    grit::GenResult gen = model.generate_greedy(seq.tokens, max_new);
    std::vector<int> byte_ids;
    for (int id : gen.tokens)
        if (id >= grit::tok::byte_offset) byte_ids.push_back(id);
    std::printf("%s\n", grit::tok::detokenize(byte_ids).c_str());
    return 0;
}

int cmd_index(const std::string& model_path, const std::string& docs_path,
              const std::string& output_base, bool store_kv, const std::string& attention,
              const std::string& pooling) {
    grit::TransformerModel model = grit::load_checkpoint(model_path);
    auto docs = read_lines(docs_path);
    grit::DocumentIndex index = grit::build_index(
        model, docs, store_kv, grit::AttentionMode{grit::attention_kind_from_name(attention), 0},
        grit::pooling_mode_from_name(pooling));
    grit::save_index(index, output_base);
    std::printf("indexed %zu documents (%zu skipped) -> %s.grix%s\n",
                index.last_build_report.built, index.last_build_report.skipped.size(),
                output_base.c_str(), store_kv ? " + .grkv" : "");
    for (const auto& [pos, why] : index.last_build_report.skipped)
        std::fprintf(stderr, "skipped doc %zu: %s\n", pos, why.c_str());
    return 0;
}

int cmd_rag(const std::string& model_path, const std::string& index_base,
            const std::string& query, const std::string& mode_name, std::size_t max_new,
            bool doc_first, bool embed_format, bool lazy_kv, const std::string& pooling) {
    grit::TransformerModel model = grit::load_checkpoint(model_path);
    grit::DocumentIndex index = grit::load_index(index_base, lazy_kv);
    grit::RagOptions opts;
    opts.max_new = max_new;
    opts.doc_first = doc_first;
    opts.embed_format = embed_format;
    opts.pooling = grit::pooling_mode_from_name(pooling);
    grit::RagAnswer ans =
        grit::answer(model, index, query, grit::cache_mode_from_name(mode_name), opts);
    json out = {{"mode", mode_name},
                {"text", ans.text},
                {"retrieved_doc", ans.retrieved_doc},
                {"prefill_tokens", ans.prefill_tokens},
                {"decode_tokens", ans.decode_tokens},
                {"cache_tokens_reused", ans.cache_tokens_reused},
                {"causal_cache_equivalent", ans.causal_cache_equivalent},
                {"wall_clock_s", ans.wall_clock_s}};
    std::printf("%s\n", out.dump().c_str());
    return 0;
}

int cmd_rerank(const std::string& model_path, const std::string& index_base,
               const std::string& query, std::size_t k, const std::string& method,
               const std::string& pooling) {
    grit::TransformerModel model = grit::load_checkpoint(model_path);
    grit::DocumentIndex index = grit::load_index(index_base, true);
    grit::RerankConfig cfg;
    cfg.k = k;
    cfg.method = grit::rerank_method_from_name(method);
    auto ranked = grit::retrieve_then_rerank(model, index, query, cfg,
                                             grit::pooling_mode_from_name(pooling));
    json out = json::array();
    for (std::size_t d : ranked) out.push_back(d);
    std::printf("%s\n", out.dump().c_str());
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& input_path, std::size_t k,
             const std::string& method, const std::string& attention,
             const std::string& pooling) {
    grit::TransformerModel model = grit::load_checkpoint(model_path);
    auto records = grit::load_eval_records(input_path);
    if (records.empty()) throw grit::input_error("no eval records in " + input_path);
    grit::RerankConfig cfg;
    cfg.k = k;
    cfg.method = grit::rerank_method_from_name(method);
    grit::AttentionMode mode{grit::attention_kind_from_name(attention), 0};
    grit::PoolingMode pool = grit::pooling_mode_from_name(pooling);

    double plain_sum = 0.0, rerank_sum = 0.0, map_sum = 0.0;
    for (const auto& rec : records) {
        grit::DocumentIndex index = grit::build_index(model, rec.docs, false, mode, pool);
        grit::NoGradGuard ng;
        grit::FormattedSequence seq = grit::format_embedding(std::nullopt, rec.query);
        grit::Tensor q = model.embed(seq, mode, pool);
        auto hits = grit::retrieve(index, q.data(), rec.docs.size());
        std::vector<double> plain_rels;
        for (const auto& h : hits) plain_rels.push_back(rec.rels[h.doc]);
        auto ranked = grit::retrieve_then_rerank(model, index, rec.query, cfg, pool);
        std::vector<double> rr_rels;
        std::vector<int> rr_bin;
        for (std::size_t d : ranked) {
            rr_rels.push_back(rec.rels[d]);
            rr_bin.push_back(rec.rels[d] > 0.0 ? 1 : 0);
        }
        plain_sum += grit::ndcg_at_k(plain_rels, 10);
        rerank_sum += grit::ndcg_at_k(rr_rels, 10);
        map_sum += grit::map_score(rr_bin);
    }
    double n = static_cast<double>(records.size());
    json out = {{"records", records.size()},
                {"ndcg10_plain", plain_sum / n},
                {"ndcg10_reranked", rerank_sum / n},
                {"map_reranked", map_sum / n}};
    std::printf("%s\n", out.dump().c_str());
    return 0;
}

int cmd_bench(const std::string& model_path, const std::string& index_base,
              const std::string& workload_path, const std::string& modes_csv,
              std::size_t repeats, std::size_t max_new, bool lazy_kv,
              const std::string& pooling) {
    grit::TransformerModel model = grit::load_checkpoint(model_path);
    grit::DocumentIndex index = grit::load_index(index_base, lazy_kv);
    auto workload = grit::load_workload(workload_path);
    std::vector<grit::CacheMode> modes;
    std::string tok;
    for (char c : modes_csv + ",") {
        if (c == ',') {
            if (!tok.empty()) modes.push_back(grit::cache_mode_from_name(tok));
            tok.clear();
        } else {
            tok.push_back(c);
        }
    }
    if (modes.empty()) throw grit::usage_error("--modes is empty");
    grit::RagOptions opts;
    opts.max_new = max_new;
    opts.pooling = grit::pooling_mode_from_name(pooling);
    auto rows = grit::bench_latency(model, index, workload, modes, repeats, opts);
    std::printf("%-18s %12s %12s %14s %14s\n", "mode", "mean_s", "stddev_s", "mean_prefill",
                "mean_reused");
    for (const auto& r : rows)
        std::printf("%-18s %12.6f %12.6f %14.2f %14.2f\n", grit::cache_mode_name(r.mode),
                    r.mean_s, r.stddev_s, r.mean_prefill, r.mean_reused);
    return 0;
}

int cmd_gradcheck(double tolerance, std::size_t d_model, std::size_t layers, std::size_t heads,
                  std::size_t samples, std::uint64_t seed) {
    grit::ModelConfig cfg;
    cfg.d_model = d_model;
    cfg.n_layers = layers;
    cfg.n_heads = heads;
    cfg.max_seq_len = 64;
    cfg.rng_seed = seed;
    cfg.validate();
    grit::TransformerModel model(cfg);

    std::vector<grit::EmbedSample> samples_in;
    for (int i = 0; i < 4; ++i)
        samples_in.push_back({std::nullopt, "query " + std::to_string(i), std::nullopt,
                              "positive " + std::to_string(i), std::nullopt,
                              "negative " + std::to_string(i), "ds"});
    grit::TripletBatch tb = grit::build_triplet_batch(samples_in, 32, 32);
    std::vector<grit::ChatSample> chats;
    for (int i = 0; i < 2; ++i)
        chats.push_back({{{"user", "hi " + std::to_string(i)}, {"assistant", "ok!"}}});
    grit::GenBatch gb = grit::build_gen_batch(chats, 48);

    double worst = 0.0;
    std::string worst_name = "-";
    auto absorb = [&](const grit::GradCheckReport& r, const std::string& what) {
        std::printf("%-24s checks %4zu  max rel err %.3e  (%s[%zu])\n", what.c_str(), r.checks,
                    r.max_rel_error, r.worst_param.c_str(), r.worst_index);
        if (r.max_rel_error > worst) {
            worst = r.max_rel_error;
            worst_name = r.worst_param;
        }
    };
    grit::RepLossConfig rep_cfg;
    grit::EmbedSetup setup;
    absorb(grit::gradcheck_rep(model, tb, rep_cfg, setup, samples, seed + 1), "rep_loss");
    absorb(grit::gradcheck_gen(model, gb, grit::AttentionMode::causal(),
                               grit::GenLossMode::token(), samples, seed + 2),
           "gen_loss/token");
    absorb(grit::gradcheck_gen(model, gb, grit::AttentionMode::causal(),
                               grit::GenLossMode::sample(), samples, seed + 3),
           "gen_loss/sample");
    absorb(grit::gradcheck_gen(model, gb, grit::AttentionMode::causal(),
                               grit::GenLossMode::mix(2), samples, seed + 4),
           "gen_loss/mix");
    std::printf("worst parameter: %s (rel err %.3e, tolerance %.1e)\n", worst_name.c_str(), worst,
                tolerance);
    return worst < tolerance ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "grit: joint contrastive-embedding + generative transformer toolkit.\n"
        "Cache modes: no-rag, rag, query-cache, doc-cache, query-doc-cache, doc-query-cache.\n"
        "Generative loss modes: token, sample, mix."};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "Train from a JSON config");
    std::string train_config;
    std::optional<std::uint64_t> seed_override;
    train->add_option("--config", train_config, "JSON run config")->required();
    train->add_option("--seed", seed_override, "override config seeds");

    // embed
    auto* embed = app.add_subcommand("embed", "Embed input lines to JSONL vectors");
    std::string e_model, e_input, e_output, e_attn = "bidirectional", e_pool = "mean";
    std::optional<std::string> e_instr;
    embed->add_option("--model", e_model)->required();
    embed->add_option("--input", e_input, "one text per line")->required();
    embed->add_option("--output", e_output)->required();
    embed->add_option("--instruction", e_instr);
    embed->add_option("--attention", e_attn, "causal|bidirectional|prefix");
    embed->add_option("--pooling", e_pool, "mean|weighted-mean|last-token");

    // generate
    auto* gen = app.add_subcommand("generate", "Greedy generation from a user prompt");
    std::string g_model, g_prompt;
    std::size_t g_max_new = 64;
    gen->add_option("--model", g_model)->required();
    gen->add_option("--prompt", g_prompt)->required();
    gen->add_option("--max-new", g_max_new);

    // index
    auto* idx = app.add_subcommand("index", "Build a document index");
    std::string i_model, i_docs, i_out, i_attn = "bidirectional", i_pool = "mean";
    bool i_kv = false;
    idx->add_option("--model", i_model)->required();
    idx->add_option("--docs", i_docs, "one document per line")->required();
    idx->add_option("--output", i_out, "index base path")->required();
    idx->add_flag("--store-kv", i_kv, "persist per-document KV states");
    idx->add_option("--attention", i_attn);
    idx->add_option("--pooling", i_pool);

    // rag
    auto* rag = app.add_subcommand("rag", "Answer a query with retrieval");
    std::string r_model, r_index, r_query, r_mode = "rag", r_pool = "mean";
    std::size_t r_max_new = 16;
    bool r_doc_first = false, r_embed_format = false, r_lazy = true;
    rag->add_option("--model", r_model)->required();
    rag->add_option("--index", r_index)->required();
    rag->add_option("--query", r_query)->required();
    rag->add_option("--mode", r_mode,
                    "no-rag|rag|query-cache|doc-cache|query-doc-cache|doc-query-cache");
    rag->add_option("--max-new", r_max_new);
    rag->add_flag("--doc-first", r_doc_first, "rag mode: document before query");
    rag->add_flag("--embed-format", r_embed_format, "rag mode: embedding-format leading segment");
    rag->add_flag("!--no-lazy-kv", r_lazy, "load all KV blobs up front");
    rag->add_option("--pooling", r_pool);

    // rerank
    auto* rr = app.add_subcommand("rerank", "Retrieve then rerank against an index");
    std::string rr_model, rr_index, rr_query, rr_method = "pairwise-logprob", rr_pool = "mean";
    std::size_t rr_k = 10;
    rr->add_option("--model", rr_model)->required();
    rr->add_option("--index", rr_index)->required();
    rr->add_option("--query", rr_query)->required();
    rr->add_option("--k", rr_k, "candidates to rerank");
    rr->add_option("--method", rr_method, "pairwise-logprob|permutation-generation");
    rr->add_option("--pooling", rr_pool);

    // eval
    auto* ev = app.add_subcommand("eval", "Retrieval + rerank metrics over an eval JSONL");
    std::string ev_model, ev_input, ev_method = "pairwise-logprob";
    std::string ev_attn = "bidirectional", ev_pool = "mean";
    std::size_t ev_k = 10;
    ev->add_option("--model", ev_model)->required();
    ev->add_option("--input", ev_input, R"(JSONL: {"query","docs","rels"})")->required();
    ev->add_option("--k", ev_k);
    ev->add_option("--method", ev_method);
    ev->add_option("--attention", ev_attn);
    ev->add_option("--pooling", ev_pool);

    // bench
    auto* bench = app.add_subcommand("bench", "Latency/prefill comparison across cache modes");
    std::string b_model, b_index, b_workload, b_modes = "rag,query-cache,doc-cache";
    std::string b_pool = "mean";
    std::size_t b_repeats = 3, b_max_new = 16;
    bool b_lazy = true;
    bench->add_option("--model", b_model)->required();
    bench->add_option("--index", b_index)->required();
    bench->add_option("--workload", b_workload, R"(JSONL: {"query","answers"})")->required();
    bench->add_option("--modes", b_modes, "comma-separated cache modes");
    bench->add_option("--repeats", b_repeats);
    bench->add_option("--max-new", b_max_new);
    bench->add_flag("!--no-lazy-kv", b_lazy);
    bench->add_option("--pooling", b_pool);

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
    double gc_tol = 1e-4;
    std::size_t gc_d = 16, gc_layers = 1, gc_heads = 2, gc_samples = 5;
    std::uint64_t gc_seed = 0;
    gc->add_option("--tolerance", gc_tol);
    gc->add_option("--d-model", gc_d);
    gc->add_option("--layers", gc_layers);
    gc->add_option("--heads", gc_heads);
    gc->add_option("--samples", gc_samples, "sampled entries per parameter tensor");
    gc->add_option("--seed", gc_seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*train) return cmd_train(train_config, seed_override);
        if (*embed) return cmd_embed(e_model, e_input, e_instr, e_output, e_attn, e_pool);
        if (*gen) return cmd_generate(g_model, g_prompt, g_max_new);
        if (*idx) return cmd_index(i_model, i_docs, i_out, i_kv, i_attn, i_pool);
        if (*rag)
            return cmd_rag(r_model, r_index, r_query, r_mode, r_max_new, r_doc_first,
                           r_embed_format, r_lazy, r_pool);
        if (*rr) return cmd_rerank(rr_model, rr_index, rr_query, rr_k, rr_method, rr_pool);
        if (*ev) return cmd_eval(ev_model, ev_input, ev_k, ev_method, ev_attn, ev_pool);
        if (*bench)
            return cmd_bench(b_model, b_index, b_workload, b_modes, b_repeats, b_max_new, b_lazy,
                             b_pool);
        if (*gc) return cmd_gradcheck(gc_tol, gc_d, gc_layers, gc_heads, gc_samples, gc_seed);
    } catch (const grit::usage_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const grit::config_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
