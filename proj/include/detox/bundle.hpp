#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <algorithm>
#include <cmath>
#include <string>

#include "json.hpp"

#include "detox/classifier.hpp"
#include "detox/condbert.hpp"
#include "detox/embeddings.hpp"
#include "detox/gedi.hpp"
#include "detox/masked_slot.hpp"
#include "detox/metrics.hpp"
#include "detox/ngram.hpp"
#include "detox/paraphraser.hpp"
#include "detox/report.hpp"
#include "detox/text.hpp"

namespace detox {

inline constexpr int kBundleVersion = 1;

/// Inference defaults stored with a bundle.
inline FusionParams tuned_fusion() {
    FusionParams f;
    f.w = 8.0;
    f.upper = 0.6;
    return f;
}

struct EngineDefaults {
    CopyParams copy{0.5, 3, true, 200.0, 3};
    FusionParams fusion = tuned_fusion();
    BeamParams beam;
    bool rerank = true;
    EditorParams editor{0.2, 8.0};
    double fluency_tau = 3.2;
    EvalParams eval;
};

/// Every trained artifact the engines and the evaluator need, all over one vocabulary.
struct ModelBundle {
    VocabPtr vocab;
    BowClassifier classifier;       // guides decoding, reranks, and yields the lexicon
    ToxicityLexicon lexicon;
    BowClassifier eval_classifier;  // trained on a disjoint split, used only for scoring
    EmbeddingTable embeddings;
    NgramLM paraphraser_lm;
    ClassConditionalLM cclm;
    MaskedSlotModel slot;
    NgramLM fluency_lm;
    EngineDefaults defaults;
};

struct BundleTrainOptions {
    NgramOptions paraphraser_lm{2, 0.05, true};
    NgramOptions cclm{2, 0.1, true};
    double slot_add_k = 0.05;
    double slot_lambda_left = 0.5;
    SlotCombination slot_combination = SlotCombination::log_linear;
    int ppmi_window = 2;
    std::size_t emb_dim = 24;
    BowTrainParams bow;
    NgramOptions fluency_lm{2, 0.01, true};
    /// When set, the fluency threshold becomes this quantile of per-token NLL over the held-out corpus.
    std::optional<double> fluency_quantile = 0.99;
    std::uint64_t seed = 17;
    EngineDefaults defaults;
};

/// `train` feeds the generators, the guiding classifier and the embeddings. `heldout` trains the
/// evaluation classifier and the fluency LM.
inline ModelBundle train_bundle(const LabeledCorpus& train, const LabeledCorpus& heldout, const BundleTrainOptions& o = {}) {
    if (train.records.empty() || heldout.records.empty()) throw InvalidArgument("train_bundle: empty corpus");
    auto all = train.sentences();
    const auto held = heldout.sentences();
    all.insert(all.end(), held.begin(), held.end());
    auto vocab = std::make_shared<const Vocabulary>(build_vocab(all, 1));
    const auto train_sentences = train.sentences();

    auto classifier = train_bow(train, vocab, o.bow);
    auto lexicon = lexicon_from(classifier);
    auto eval_classifier = train_bow(heldout, vocab, o.bow);
    auto embeddings = train_ppmi_embeddings(all, *vocab, o.ppmi_window, std::min(o.emb_dim, vocab->size()), o.seed);
    auto paraphraser_lm = train_ngram(train_sentences, vocab, o.paraphraser_lm);
    auto cclm = train_class_conditional(train, vocab, o.cclm);
    auto slot = train_masked_slot(train_sentences, vocab, o.slot_add_k, o.slot_lambda_left, o.slot_combination);
    auto fluency_lm = train_ngram(held, vocab, o.fluency_lm);
    EngineDefaults defaults = o.defaults;
    if (o.fluency_quantile) {
        if (!(*o.fluency_quantile > 0 && *o.fluency_quantile <= 1)) throw InvalidArgument("train_bundle: fluency quantile must be in (0,1]");
        std::vector<double> nll;
        for (const auto& s : held)
            if (!s.empty()) nll.push_back(fluency_lm.per_token_nll(vocab->encode(s)));
        if (nll.empty()) throw DegenerateInput("train_bundle: held-out corpus has no tokens");
        std::sort(nll.begin(), nll.end());
        const auto at = static_cast<std::size_t>(std::ceil(*o.fluency_quantile * static_cast<double>(nll.size()))) - 1;
        defaults.fluency_tau = nll[std::min(at, nll.size() - 1)];
    }
    return ModelBundle{vocab,
                       std::move(classifier),
                       std::move(lexicon),
                       std::move(eval_classifier),
                       std::move(embeddings),
                       std::move(paraphraser_lm),
                       std::move(cclm),
                       std::move(slot),
                       std::move(fluency_lm),
                       defaults};
}

// ---------------------------------------------------------------------------------------------
// Defaults <-> JSON

inline nlohmann::json to_json(const EngineDefaults& d) {
    return {{"copy",
             {{"gamma", d.copy.gamma},
              {"neighbor_k", d.copy.neighbor_k},
              {"aligned", d.copy.aligned},
              {"boost", d.copy.boost},
              {"skip_window", d.copy.skip_window}}},
            {"fusion",
             {{"w", d.fusion.w},
              {"alpha", d.fusion.alpha},
              {"lower", d.fusion.lower},
              {"upper", d.fusion.upper},
              {"target_class", d.fusion.target_class},
              {"length_normalized", d.fusion.length_normalized}}},
            {"beam", {{"beams", d.beam.beams}, {"max_len", d.beam.max_len}}},
            {"rerank", d.rerank},
            {"editor",
             {{"t_min", d.editor.t_min},
              {"penalty", d.editor.penalty},
              {"sim_weight", d.editor.sim_weight},
              {"delta", d.editor.delta},
              {"neighbor_k", d.editor.neighbor_k},
              {"slot_beams", d.editor.slot_beams},
              {"max_tokens_per_slot", d.editor.max_tokens_per_slot},
              {"multiword", d.editor.multiword},
              {"k", d.editor.k}}},
            {"fluency_tau", d.fluency_tau},
            {"eval",
             {{"target_class", d.eval.target_class},
              {"content_threshold", d.eval.content_threshold},
              {"fluency_floor", d.eval.fluency_floor}}}};
}

inline EngineDefaults defaults_from_json(const nlohmann::json& j) {
    EngineDefaults d;
    const auto& c = j.at("copy");
    d.copy = {c.at("gamma").get<double>(), c.at("neighbor_k").get<std::size_t>(), c.at("aligned").get<bool>(),
              c.at("boost").get<double>(), c.at("skip_window").get<std::size_t>()};
    const auto& f = j.at("fusion");
    d.fusion.w = f.at("w").get<double>();
    d.fusion.alpha = f.at("alpha").get<double>();
    d.fusion.lower = f.at("lower").get<double>();
    d.fusion.upper = f.at("upper").get<double>();
    d.fusion.target_class = f.at("target_class").get<int>();
    d.fusion.length_normalized = f.at("length_normalized").get<bool>();
    d.beam.beams = j.at("beam").at("beams").get<std::size_t>();
    d.beam.max_len = j.at("beam").at("max_len").get<std::size_t>();
    d.rerank = j.at("rerank").get<bool>();
    const auto& e = j.at("editor");
    d.editor.t_min = e.at("t_min").get<double>();
    d.editor.penalty = e.at("penalty").get<double>();
    d.editor.sim_weight = e.at("sim_weight").get<double>();
    d.editor.delta = e.at("delta").get<double>();
    d.editor.neighbor_k = e.at("neighbor_k").get<std::size_t>();
    d.editor.slot_beams = e.at("slot_beams").get<std::size_t>();
    d.editor.max_tokens_per_slot = e.at("max_tokens_per_slot").get<std::size_t>();
    d.editor.multiword = e.at("multiword").get<bool>();
    d.editor.k = e.at("k").get<std::size_t>();
    d.fluency_tau = j.at("fluency_tau").get<double>();
    const auto& ev = j.at("eval");
    d.eval.target_class = ev.at("target_class").get<int>();
    d.eval.content_threshold = ev.at("content_threshold").get<double>();
    d.eval.fluency_floor = ev.at("fluency_floor").get<double>();
    return d;
}

inline bool operator==(const EngineDefaults& a, const EngineDefaults& b) { return to_json(a) == to_json(b); }

// ---------------------------------------------------------------------------------------------
// Persistence: a directory with manifest.json plus one file per component.

namespace detail {

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
    std::ofstream out(p);
    if (!out) throw BundleError("cannot write " + p.string());
    out << j.dump();
    if (!out) throw BundleError("write failed: " + p.string());
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw BundleError("missing bundle file " + p.filename().string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw BundleError(p.filename().string() + ": " + e.what());
    }
}

inline BowClassifier rebind(BowClassifier clf, const VocabPtr& vocab, const std::string& what) {
    if (!(*clf.vocab == *vocab)) throw BundleError(what + ": vocabulary differs from the bundle");
    clf.vocab = vocab;
    return clf;
}

} // namespace detail

inline void save_bundle(const ModelBundle& b, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw BundleError("cannot create " + dir.string() + ": " + ec.message());
    detail::write_json(dir / "vocab.json", b.vocab->words());
    detail::write_json(dir / "classifier.json", to_json(b.classifier));
    detail::write_json(dir / "eval_classifier.json", to_json(b.eval_classifier));
    detail::write_json(dir / "paraphraser_lm.json", to_json(b.paraphraser_lm));
    detail::write_json(dir / "cclm.json", to_json(b.cclm));
    detail::write_json(dir / "slot.json", to_json(b.slot));
    detail::write_json(dir / "fluency_lm.json", to_json(b.fluency_lm));
    {
        std::ofstream out(dir / "embeddings.txt");
        if (!out) throw BundleError("cannot write embeddings");
        save_word_vectors(b.embeddings, out);
    }
    detail::write_json(dir / "manifest.json", {{"format", "detox-bundle"},
                                               {"version", kBundleVersion},
                                               {"vocab_size", b.vocab->size()},
                                               {"vocab_fingerprint", std::to_string(b.vocab->fingerprint())},
                                               {"defaults", to_json(b.defaults)}});
}

inline ModelBundle load_bundle(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir / "manifest.json")) throw BundleError("no manifest.json in " + dir.string());
    const auto manifest = detail::read_json(dir / "manifest.json");
    try {
        if (manifest.value("format", "") != "detox-bundle") throw BundleError("manifest: not a model bundle");
        const int version = manifest.at("version").get<int>();
        if (version != kBundleVersion)
            throw BundleError("bundle version " + std::to_string(version) + " is not supported (expected " + std::to_string(kBundleVersion) + ")");
        auto vocab = std::make_shared<const Vocabulary>(detail::read_json(dir / "vocab.json").get<std::vector<std::string>>());
        if (std::to_string(vocab->fingerprint()) != manifest.at("vocab_fingerprint").get<std::string>())
            throw BundleError("vocabulary fingerprint does not match the manifest");
        auto classifier = detail::rebind(classifier_from_json(detail::read_json(dir / "classifier.json")), vocab, "classifier");
        auto eval_classifier = detail::rebind(classifier_from_json(detail::read_json(dir / "eval_classifier.json")), vocab, "eval classifier");
        auto lexicon = lexicon_from(classifier);
        std::ifstream emb_in(dir / "embeddings.txt");
        if (!emb_in) throw BundleError("missing bundle file embeddings.txt");
        auto embeddings = load_word_vectors(emb_in);
        return ModelBundle{vocab,
                           std::move(classifier),
                           std::move(lexicon),
                           std::move(eval_classifier),
                           std::move(embeddings),
                           ngram_from_json(detail::read_json(dir / "paraphraser_lm.json"), vocab),
                           cclm_from_json(detail::read_json(dir / "cclm.json"), vocab),
                           masked_slot_from_json(detail::read_json(dir / "slot.json"), vocab),
                           ngram_from_json(detail::read_json(dir / "fluency_lm.json"), vocab),
                           defaults_from_json(manifest.at("defaults"))};
    } catch (const nlohmann::json::exception& e) {
        throw BundleError(std::string("malformed bundle: ") + e.what());
    } catch (const VocabularyMismatch& e) {
        throw BundleError(e.what());
    } catch (const ParseError& e) {
        throw BundleError(std::string("embeddings: ") + e.what());
    }
}

inline bool operator==(const ModelBundle& a, const ModelBundle& b) {
    return *a.vocab == *b.vocab && a.classifier == b.classifier && a.lexicon.scores == b.lexicon.scores &&
           a.eval_classifier == b.eval_classifier && a.embeddings == b.embeddings && a.paraphraser_lm == b.paraphraser_lm &&
           a.cclm == b.cclm && a.slot == b.slot && a.fluency_lm == b.fluency_lm && a.defaults == b.defaults;
}

// ---------------------------------------------------------------------------------------------
// Engines over a bundle

/// Evaluation-side models of a bundle.
inline EvalModels eval_models(const ModelBundle& b) {
    return EvalModels{b.eval_classifier, b.embeddings, FluencyScorer{FluencyMethod::lm_threshold, &b.fluency_lm, b.defaults.fluency_tau, nullptr}};
}

inline CondbertModels condbert_models(const ModelBundle& b) { return CondbertModels{b.slot, b.embeddings, b.lexicon}; }

/// ParaGeDi over a bundle's models. The class-conditional model may be swapped (e.g. for a trained one).
class ParagediEngine {
public:
    ParagediEngine(const ModelBundle& b, const CopyParams& copy, const ClassConditionalModel* cc = nullptr)
        : bundle_(&b), paraphraser_(b.paraphraser_lm, b.embeddings, copy), cc_(cc ? cc : &b.cclm) {}
    explicit ParagediEngine(const ModelBundle& b) : ParagediEngine(b, b.defaults.copy) {}

    ParagediResult run(const std::string& text, const FusionParams& fp, const BeamParams& bp, bool rerank) const {
        return paragedi_detoxify(text, ParagediModels{paraphraser_, *cc_, rerank ? &bundle_->classifier : nullptr}, fp, bp);
    }
    ParagediResult run(const std::string& text) const {
        const auto& d = bundle_->defaults;
        return run(text, d.fusion, d.beam, d.rerank);
    }

    const Paraphraser& paraphraser() const { return paraphraser_; }
    const ClassConditionalModel& cc() const { return *cc_; }

private:
    const ModelBundle* bundle_;
    CopyMixtureParaphraser paraphraser_;
    const ClassConditionalModel* cc_;
};

} // namespace detox
