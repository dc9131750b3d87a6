#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "detox/ablation.hpp"
#include "detox/bundle.hpp"
#include "detox/miner.hpp"
#include "detox/service.hpp"
#include "detox/synthetic.hpp"

namespace detox::cli {

inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kUsageError = 2;

namespace detail {

template <class T>
void optional_flag(CLI::App& app, const std::string& name, std::optional<T>& target, const std::string& help) {
    app.add_option_function<T>(name, [&target](const T& v) { target = v; }, help);
}

/// Engine flags; anything left unset keeps the bundle's defaults.
struct EngineFlags {
    std::optional<double> w, alpha, lower, upper, gamma, boost;
    std::optional<std::size_t> beams, max_len, neighbor_k;
    std::optional<double> t_min, penalty, sim_weight, delta;
    std::optional<std::size_t> k, max_tokens;
    bool no_rerank = false;
    bool mask_all_toxic = false, no_sim_penalty = false, no_multiword = false, no_tox_penalty = false;

    void add(CLI::App& app) {
        optional_flag(app, "--w", w, "discriminator exponent");
        optional_flag(app, "--alpha", alpha, "class likelihood smoothing");
        optional_flag(app, "--lower", lower, "lower bound on the target-class posterior");
        optional_flag(app, "--upper", upper, "upper bound on the target-class posterior");
        optional_flag(app, "--beams", beams, "beam count");
        optional_flag(app, "--max-len", max_len, "maximum output length (0: from the source length)");
        app.add_flag("--no-rerank", no_rerank, "return the best-scoring beam instead of the least toxic");
        optional_flag(app, "--gamma", gamma, "copy weight of the paraphraser");
        optional_flag(app, "--boost", boost, "copy boost of the aligned paraphraser");
        optional_flag(app, "--copy-neighbors", neighbor_k, "embedding neighbors added to the copy set");
        optional_flag(app, "--t-min", t_min, "minimum masking threshold");
        optional_flag(app, "--penalty", penalty, "toxicity penalty on replacement words");
        optional_flag(app, "--sim-weight", sim_weight, "weight of the similarity to the original span");
        optional_flag(app, "--delta", delta, "share of the original words' neighbors mixed into each slot");
        optional_flag(app, "--k", k, "candidates kept per span");
        optional_flag(app, "--max-tokens", max_tokens, "maximum words per replaced span");
        app.add_flag("--mask-all-toxic", mask_all_toxic, "ablation: no neighbor mixing (delta=0)");
        app.add_flag("--no-sim-penalty", no_sim_penalty, "ablation: no similarity reranking (beta=0)");
        app.add_flag("--no-multiword", no_multiword, "ablation: one word per span");
        app.add_flag("--no-tox-penalty", no_tox_penalty, "ablation: no toxicity penalty (p=0)");
    }

    EngineDefaults apply(EngineDefaults d) const {
        if (w) d.fusion.w = *w;
        if (alpha) d.fusion.alpha = *alpha;
        if (lower) d.fusion.lower = *lower;
        if (upper) d.fusion.upper = *upper;
        if (beams) d.beam.beams = *beams;
        if (max_len) d.beam.max_len = *max_len;
        if (no_rerank) d.rerank = false;
        if (gamma) d.copy.gamma = *gamma;
        if (boost) d.copy.boost = *boost;
        if (neighbor_k) d.copy.neighbor_k = *neighbor_k;
        if (t_min) d.editor.t_min = *t_min;
        if (penalty) d.editor.penalty = *penalty;
        if (sim_weight) d.editor.sim_weight = *sim_weight;
        if (delta) d.editor.delta = *delta;
        if (k) d.editor.k = *k;
        if (max_tokens) d.editor.max_tokens_per_slot = *max_tokens;
        if (mask_all_toxic) d.editor.delta = 0;
        if (no_sim_penalty) d.editor.sim_weight = 0;
        if (no_multiword) d.editor.multiword = false;
        if (no_tox_penalty) d.editor.penalty = 0;
        return d;
    }
};

/// Deterministic split of a labeled corpus into (train, heldout).
inline std::pair<LabeledCorpus, LabeledCorpus> split_corpus(const LabeledCorpus& c, double heldout_fraction, std::uint64_t seed) {
    if (!(heldout_fraction > 0 && heldout_fraction < 1)) throw InvalidArgument("held-out fraction must be in (0,1)");
    std::vector<std::size_t> order(c.records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_held = static_cast<std::size_t>(heldout_fraction * static_cast<double>(order.size()));
    if (n_held == 0 || n_held == order.size()) throw InvalidArgument("corpus too small to split off a held-out part");
    LabeledCorpus train{c.classes, {}}, held{c.classes, {}};
    for (std::size_t i = 0; i < order.size(); ++i) (i < n_held ? held : train).records.push_back(c.records[order[i]]);
    return {std::move(train), std::move(held)};
}

inline std::ostream& open_output(const std::string& path, std::ofstream& file, std::ostream& fallback) {
    if (path.empty() || path == "-") return fallback;
    file.open(path);
    if (!file) throw Error("cannot write " + path);
    return file;
}

inline void write_report(std::ostream& out, const std::string& format, const std::vector<SystemReport>& reports, bool per_sentence) {
    if (format == "json") {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : reports) j.push_back(to_json(r, per_sentence));
        out << (reports.size() == 1 ? j[0] : j).dump(2) << '\n';
    } else {
        out << format_table(reports);
    }
}

} // namespace detail

/// Runs the command line. Usage errors return 2, runtime failures 1; messages go to `err`.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Text detoxification: guided paraphrasing, conditional masked editing, evaluation and pair mining", "detox"};
    app.require_subcommand(1);
    std::uint64_t seed = SyntheticOptions{}.seed;
    std::size_t threads = 0;
    app.add_option("--seed", seed, "seed for corpus generation, splits and bootstrap intervals")->capture_default_str();
    app.add_option("--threads", threads, "worker threads (0: all cores)")->capture_default_str();

    // train
    auto* train = app.add_subcommand("train", "train a model bundle from a labeled corpus or the synthetic one");
    std::string corpus_path, heldout_path, bundle_out, write_corpus;
    double heldout_fraction = 0.3;
    bool synthetic = false;
    std::size_t emb_dim = BundleTrainOptions{}.emb_dim;
    auto* corpus_opt = train->add_option("--corpus", corpus_path, "label<TAB>text training corpus")->check(CLI::ExistingFile);
    train->add_option("--heldout", heldout_path, "label<TAB>text corpus for the evaluation models")->check(CLI::ExistingFile);
    train->add_option("--heldout-fraction", heldout_fraction, "share split off --corpus when --heldout is absent")->capture_default_str();
    auto* synth_flag = train->add_flag("--synthetic", synthetic, "generate the templated two-style corpus");
    train->add_option("--write-corpus", write_corpus, "with --synthetic: also write the corpus files to this directory");
    train->add_option("--emb-dim", emb_dim, "embedding dimension")->capture_default_str();
    train->add_option("--out", bundle_out, "bundle directory")->required();
    corpus_opt->excludes(synth_flag);

    // detox
    auto* detox = app.add_subcommand("detox", "rewrite one sentence per line");
    std::string method_name, in_path, out_path, bundle_dir;
    detail::EngineFlags engine;
    detox->add_option("--method", method_name, "paragedi or condbert")->required()->check(CLI::IsMember({"paragedi", "condbert"}));
    detox->add_option("--in", in_path, "input file, one sentence per line")->required()->check(CLI::ExistingFile);
    detox->add_option("--out", out_path, "output file (default: stdout)");
    detox->add_option("--bundle", bundle_dir, "bundle directory")->required()->check(CLI::ExistingDirectory);
    engine.add(*detox);

    // mine
    auto* mine_cmd = app.add_subcommand("mine", "filter an a<TAB>b[<TAB>sim] paraphrase stream into toxic/neutral pairs");
    std::string mine_in, mine_out, mine_bundle, format = "text";
    MinerParams miner;
    bool strict = false;
    mine_cmd->add_option("--in", mine_in, "input stream (default: stdin)")->check(CLI::ExistingFile);
    mine_cmd->add_option("--out", mine_out, "accepted pairs (default: stdout)");
    mine_cmd->add_option("--bundle", mine_bundle, "bundle directory")->required()->check(CLI::ExistingDirectory);
    mine_cmd->add_option("--sim-low", miner.sim_low)->capture_default_str();
    mine_cmd->add_option("--sim-high", miner.sim_high)->capture_default_str();
    mine_cmd->add_option("--max-len-diff", miner.max_len_diff)->capture_default_str();
    mine_cmd->add_option("--min-tox-delta", miner.min_tox_delta)->capture_default_str();
    mine_cmd->add_flag("--strict", strict, "abort on the first malformed line");
    mine_cmd->add_option("--format", format, "statistics format on stderr")->check(CLI::IsMember({"text", "json"}));

    // eval
    auto* eval = app.add_subcommand("eval", "score system outputs against their sources");
    std::string src_path, hyp_path, eval_bundle, name = "system";
    bool per_sentence = false;
    eval->add_option("--src", src_path, "sources, one per line")->required()->check(CLI::ExistingFile);
    eval->add_option("--hyp", hyp_path, "system outputs, aligned with --src")->required()->check(CLI::ExistingFile);
    eval->add_option("--bundle", eval_bundle, "bundle directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--name", name, "system name in the report")->capture_default_str();
    eval->add_option("--format", format, "report format")->check(CLI::IsMember({"text", "json"}));
    eval->add_flag("--per-sentence", per_sentence, "include per-sentence scores in JSON output");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "run named ablation presets and compare them with the full systems");
    bool list = false, ablate_synthetic = false;
    std::vector<std::string> preset_names;
    std::string ablate_bundle, ablate_in, ablate_train;
    std::size_t limit = 0;
    ablate->add_flag("--list", list, "list presets and exit");
    ablate->add_option("--preset", preset_names, "preset to run (repeatable; default: all)");
    ablate->add_flag("--synthetic", ablate_synthetic, "train on the synthetic corpus and run on its toxic test sentences");
    ablate->add_option("--bundle", ablate_bundle, "bundle directory")->check(CLI::ExistingDirectory);
    ablate->add_option("--in", ablate_in, "toxic sentences, one per line")->check(CLI::ExistingFile);
    ablate->add_option("--train", ablate_train, "label<TAB>text corpus, needed by presets that retrain the class-conditional LM")
        ->check(CLI::ExistingFile);
    ablate->add_option("--limit", limit, "use only the first N input sentences (0: all)");
    ablate->add_option("--format", format, "report format")->check(CLI::IsMember({"text", "json"}));
    engine.add(*ablate);

    // serve
    auto* serve = app.add_subcommand("serve", "serve the HTTP API");
    std::string config_path, serve_bundle, host;
    std::optional<int> port;
    serve->add_option("--config", config_path, "key=value config file (host, port, bundle, threads)")->check(CLI::ExistingFile);
    serve->add_option("--bundle", serve_bundle, "bundle directory (overrides config and DETOX_BUNDLE)");
    serve->add_option("--host", host, "bind address");
    detail::optional_flag(*serve, "--port", port, "port (overrides config and DETOX_PORT)");

    std::vector<const char*> argv{"detox"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        // Help requested on a subcommand arrives here too.
        if (e.get_exit_code() == 0) {
            out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
            return kOk;
        }
        err << "error: " << e.what() << "\n";
        return kUsageError;
    }

    try {
        if (train->parsed()) {
            if (!synthetic && corpus_path.empty()) {
                err << "error: train needs --corpus or --synthetic\n";
                return kUsageError;
            }
            BundleTrainOptions options;
            options.emb_dim = emb_dim;
            LabeledCorpus train_corpus, heldout_corpus;
            if (synthetic) {
                SyntheticOptions so;
                so.seed = seed;
                const auto corpus = make_synthetic(so);
                train_corpus = corpus.train;
                heldout_corpus = corpus.heldout;
                if (!write_corpus.empty()) {
                    std::filesystem::create_directories(write_corpus);
                    const std::filesystem::path dir(write_corpus);
                    write_lines((dir / "train.tsv").string(), to_tsv_lines(corpus.train));
                    write_lines((dir / "heldout.tsv").string(), to_tsv_lines(corpus.heldout));
                    write_lines((dir / "test_toxic.txt").string(), corpus.test_toxic);
                    write_lines((dir / "test_neutral.txt").string(), corpus.test_neutral);
                }
            } else {
                const auto corpus = read_labeled_corpus(corpus_path);
                if (heldout_path.empty()) {
                    std::tie(train_corpus, heldout_corpus) = detail::split_corpus(corpus, heldout_fraction, seed);
                } else {
                    train_corpus = corpus;
                    heldout_corpus = read_labeled_corpus(heldout_path);
                }
            }
            const auto bundle = train_bundle(train_corpus, heldout_corpus, options);
            save_bundle(bundle, bundle_out);
            out << "trained bundle: " << bundle.vocab->size() << " words, " << train_corpus.records.size() << " training and "
                << heldout_corpus.records.size() << " held-out sentences -> " << bundle_out << "\n";
            return kOk;
        }

        if (detox->parsed()) {
            const auto bundle = load_bundle(bundle_dir);
            const auto params = engine.apply(bundle.defaults);
            const auto lines = read_lines(in_path);
            std::vector<std::string> outputs;
            if (parse_method(method_name) == Method::condbert) {
                params.editor.validate();
                const auto models = condbert_models(bundle);
                outputs = parallel_map(lines.size(), threads, [&](std::size_t i) { return condbert_detoxify(lines[i], models, params.editor).text; });
            } else {
                params.fusion.validate(bundle.cclm.num_classes());
                if (params.beam.beams < 1) throw InvalidArgument("--beams must be >= 1");
                const ParagediEngine eng(bundle, params.copy);
                outputs = parallel_map(lines.size(), threads,
                                       [&](std::size_t i) { return eng.run(lines[i], params.fusion, params.beam, params.rerank).text; });
            }
            std::ofstream file;
            auto& dst = detail::open_output(out_path, file, out);
            for (const auto& l : outputs) dst << l << '\n';
            return kOk;
        }

        if (mine_cmd->parsed()) {
            miner.validate();
            const auto bundle = load_bundle(mine_bundle);
            std::ifstream in_file;
            std::istream* src = &std::cin;
            if (!mine_in.empty() && mine_in != "-") {
                in_file.open(mine_in);
                if (!in_file) throw Error("cannot open " + mine_in);
                src = &in_file;
            }
            std::ofstream file;
            auto& dst = detail::open_output(mine_out, file, out);
            MineOptions mo;
            mo.strict = strict;
            mo.threads = threads == 0 ? default_threads() : threads;
            const auto stats = mine(*src, dst, bundle.classifier, bundle.embeddings, miner, mo);
            if (format == "json") {
                nlohmann::json j{{"schema_version", 1}, {"seen", stats.seen}, {"accepted", stats.accepted}, {"malformed", stats.malformed}};
                for (std::size_t r = 0; r < kRejectReasons; ++r) j["rejected"][to_string(static_cast<RejectReason>(r))] = stats.rejected[r];
                err << j.dump() << "\n";
            } else {
                err << "seen " << stats.seen << ", accepted " << stats.accepted << ", malformed " << stats.malformed;
                for (std::size_t r = 0; r < kRejectReasons; ++r) err << ", " << to_string(static_cast<RejectReason>(r)) << " " << stats.rejected[r];
                err << "\n";
            }
            return kOk;
        }

        if (eval->parsed()) {
            const auto bundle = load_bundle(eval_bundle);
            const auto src = read_lines(src_path), hyp = read_lines(hyp_path);
            if (src.size() != hyp.size())
                throw InvalidArgument("--src has " + std::to_string(src.size()) + " lines but --hyp has " + std::to_string(hyp.size()));
            std::vector<Tokens> s, h;
            for (std::size_t i = 0; i < src.size(); ++i) {
                s.push_back(tokenize(src[i]));
                h.push_back(tokenize(hyp[i]));
            }
            const auto report = evaluate_system(name, s, h, eval_models(bundle), bundle.defaults.eval, seed);
            detail::write_report(out, format, {report}, per_sentence);
            return kOk;
        }

        if (ablate->parsed()) {
            if (list) {
                for (const auto& p : presets()) out << p.name << "\t" << to_string(p.method) << "\t" << p.description << "\n";
                return kOk;
            }
            if (ablate_synthetic == !ablate_bundle.empty()) {
                err << "error: ablate needs exactly one of --synthetic or --bundle\n";
                return kUsageError;
            }
            if (!ablate_bundle.empty() && ablate_in.empty()) {
                err << "error: ablate --bundle needs --in\n";
                return kUsageError;
            }
            std::vector<const Preset*> chosen;
            for (const auto& n : preset_names) chosen.push_back(&find_preset(n));
            if (chosen.empty())
                for (const auto& p : presets()) chosen.push_back(&p);

            std::optional<SyntheticSetup> setup;
            std::optional<ModelBundle> loaded;
            std::optional<LabeledCorpus> train_corpus;
            std::vector<std::string> sources;
            if (ablate_synthetic) {
                setup = synthetic_setup(seed);
                sources = setup->corpus.test_toxic;
            } else {
                loaded = load_bundle(ablate_bundle);
                sources = read_lines(ablate_in);
                if (!ablate_train.empty()) train_corpus = read_labeled_corpus(ablate_train);
            }
            const ModelBundle& bundle = setup ? setup->bundle : *loaded;
            const LabeledCorpus* cc_train = setup ? &setup->corpus.train : (train_corpus ? &*train_corpus : nullptr);
            if (limit > 0 && limit < sources.size()) sources.resize(limit);
            if (sources.size() < 2) throw InvalidArgument("ablate needs at least 2 input sentences");

            const auto defaults = engine.apply(bundle.defaults);
            std::vector<SystemConfig> configs;
            for (const auto* p : chosen) configs.push_back(p->make(defaults));
            SystemRunner runner(bundle, cc_train);
            const auto rows = run_ablation(runner, configs, defaults, sources, threads, seed);
            if (format == "json") {
                nlohmann::json j = nlohmann::json::array();
                for (const auto& r : rows) j.push_back(to_json(r));
                out << nlohmann::json{{"schema_version", 1}, {"n", sources.size()}, {"systems", j}}.dump(2) << "\n";
            } else {
                out << format_ablation(rows);
            }
            return kOk;
        }

        if (serve->parsed()) {
            auto config = config_path.empty() ? service::ServiceConfig{} : service::load_config(config_path);
            config = service::apply_env(config);
            if (!serve_bundle.empty()) config.bundle_dir = serve_bundle;
            if (!host.empty()) config.host = host;
            if (port) config.port = *port;
            if (config.port < 0 || config.port > 65535) throw InvalidArgument("port must be in [0, 65535]");
            auto bundle = std::make_shared<const ModelBundle>(load_bundle(config.bundle_dir));
            service::Server server(bundle, config.bundle_dir);
            server.set_threads(config.threads);
            err << "serving " << config.bundle_dir << " on " << config.host << ":" << config.port << "\n";
            if (!server.listen(config.host, config.port)) throw Error("cannot listen on " + config.host + ":" + std::to_string(config.port));
            return kOk;
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kUsageError;
}

inline int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args);
}

} // namespace detox::cli
