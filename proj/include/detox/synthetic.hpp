#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "detox/text.hpp"

namespace detox {

/// Templated two-style corpus. Toxic sentences fill adjective and noun slots from a 20-word toxic
/// lexicon; neutral sentences fill the same slots with neutral words. A toxic noun stands where the
/// neutral version has a two-word phrase, so single-word repairs read badly.
struct SyntheticOptions {
    std::size_t train_per_class = 2500;
    std::size_t heldout_per_class = 1000;
    std::size_t test_toxic = 600;
    double two_slot_rate = 0.2;    // toxic sentences with a second toxic slot
    double polite_rate = 0.3;         // neutral sentences that open with a courtesy phrase
    double toxic_polite_rate = 0.06;   // toxic sentences that do the same
    std::uint64_t seed = 7;
};

struct SyntheticCorpus {
    LabeledCorpus train;
    LabeledCorpus heldout;
    std::vector<std::string> test_toxic;
    std::vector<std::string> test_neutral;
    std::vector<std::string> toxic_words;
};

namespace synthetic {

inline const std::vector<std::string>& toxic_adjectives() {
    static const std::vector<std::string> v{"stupid", "dumb", "idiotic", "pathetic", "moronic",
                                            "lame", "worthless", "crappy", "disgusting", "brainless"};
    return v;
}
inline const std::vector<std::string>& toxic_nouns() {
    static const std::vector<std::string> v{"idiot", "moron", "jerk", "loser", "fool", "clown", "creep", "dork", "scumbag", "imbecile"};
    return v;
}
inline const std::vector<std::string>& neutral_adjectives() {
    static const std::vector<std::string> v{"strange", "unusual", "careless", "naive", "wrong",
                                            "weak", "unhelpful", "poor", "unpleasant", "confusing"};
    return v;
}
inline const std::vector<std::string>& person_adjectives() {
    static const std::vector<std::string> v{"nice", "kind", "decent", "honest", "quiet"};
    return v;
}
inline const std::vector<std::string>& person_nouns() {
    static const std::vector<std::string> v{"person", "guy", "fellow", "worker", "student"};
    return v;
}
inline const std::vector<std::string>& subjects() {
    static const std::vector<std::string> v{"he", "she", "my boss", "your friend", "the teacher",
                                            "this guy", "that man", "her brother", "our neighbor", "the coach"};
    return v;
}
inline const std::vector<std::string>& things() {
    static const std::vector<std::string> v{"plan", "idea", "report", "movie", "song", "car", "house", "game", "answer", "project"};
    return v;
}
inline const std::vector<std::string>& courtesies() {
    static const std::vector<std::string> v{"with respect ,", "if i may say ,", "to be fair ,", "kindly note ,"};
    return v;
}

// {S} subject, {T} thing, {A} adjective slot, {N} person slot.
inline const std::vector<std::string>& templates() {
    static const std::vector<std::string> v{
        "{S} is such a {N} and we all know it .",
        "i think {S} is a {N} who never helps with the {T} .",
        "{S} said that the {T} is {A} and nobody should use it .",
        "why is {S} always so {A} about the {T} at work ?",
        "do not listen to that {N} , the {T} is fine for now .",
        "your {T} looks {A} today and i do not like it .",
        "what a {A} {T} , i can not believe we paid for it .",
        "stop acting like a {N} and fix the {T} before friday .",
        "{S} wrote a {A} {T} again and the team is tired .",
        "only a {N} would ask me about the {T} like that .",
    };
    return v;
}

template <class Rng>
const std::string& pick(const std::vector<std::string>& v, Rng& rng) {
    std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
    return v[d(rng)];
}

/// One sentence. `toxic_slots` of the template's A/N slots (in order) are filled toxic.
template <class Rng>
std::string render(const std::string& tmpl, std::size_t toxic_slots, bool polite, Rng& rng) {
    std::vector<std::size_t> slot_pos;
    for (std::size_t i = 0; i + 2 < tmpl.size(); ++i)
        if (tmpl[i] == '{' && (tmpl[i + 1] == 'A' || tmpl[i + 1] == 'N')) slot_pos.push_back(i);
    std::vector<bool> toxic(slot_pos.size(), false);
    if (toxic_slots > 0 && !slot_pos.empty()) {
        std::vector<std::size_t> order(slot_pos.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t i = 0; i < std::min(toxic_slots, order.size()); ++i) toxic[order[i]] = true;
    }
    std::string out;
    std::size_t slot = 0;
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
        if (tmpl[i] == '{' && i + 2 < tmpl.size() && tmpl[i + 2] == '}') {
            const char kind = tmpl[i + 1];
            if (kind == 'S') out += pick(subjects(), rng);
            else if (kind == 'T') out += pick(things(), rng);
            else if (kind == 'A') out += toxic[slot++] ? pick(toxic_adjectives(), rng) : pick(neutral_adjectives(), rng);
            else if (kind == 'N') {
                if (toxic[slot++]) out += pick(toxic_nouns(), rng);
                else out += pick(person_adjectives(), rng) + " " + pick(person_nouns(), rng);
            }
            i += 2;
        } else {
            out.push_back(tmpl[i]);
        }
    }
    if (polite) out = pick(courtesies(), rng) + " " + out;
    return out;
}

inline std::size_t slot_count(const std::string& tmpl) {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < tmpl.size(); ++i) n += tmpl[i] == '{' && (tmpl[i + 1] == 'A' || tmpl[i + 1] == 'N');
    return n;
}

template <class Rng>
std::string toxic_sentence(const SyntheticOptions& o, Rng& rng) {
    const auto& tmpl = pick(templates(), rng);
    std::bernoulli_distribution two(o.two_slot_rate);
    std::bernoulli_distribution polite(o.toxic_polite_rate);
    const std::size_t slots = slot_count(tmpl) >= 2 && two(rng) ? 2 : 1;
    return render(tmpl, slots, polite(rng), rng);
}

template <class Rng>
std::string neutral_sentence(const SyntheticOptions& o, Rng& rng) {
    std::bernoulli_distribution polite(o.polite_rate);
    return render(pick(templates(), rng), 0, polite(rng), rng);
}

} // namespace synthetic

inline SyntheticCorpus make_synthetic(const SyntheticOptions& options = {}) {
    std::mt19937_64 rng(options.seed);
    SyntheticCorpus c;
    auto fill = [&](LabeledCorpus& corpus, std::size_t per_class) {
        for (std::size_t i = 0; i < per_class; ++i) {
            corpus.records.push_back({kToxic, tokenize(synthetic::toxic_sentence(options, rng))});
            corpus.records.push_back({kNeutral, tokenize(synthetic::neutral_sentence(options, rng))});
        }
    };
    fill(c.train, options.train_per_class);
    fill(c.heldout, options.heldout_per_class);
    for (std::size_t i = 0; i < options.test_toxic; ++i) {
        c.test_toxic.push_back(synthetic::toxic_sentence(options, rng));
        c.test_neutral.push_back(synthetic::neutral_sentence(options, rng));
    }
    c.toxic_words = synthetic::toxic_adjectives();
    c.toxic_words.insert(c.toxic_words.end(), synthetic::toxic_nouns().begin(), synthetic::toxic_nouns().end());
    return c;
}

/// `label<TAB>text` lines for a labeled corpus.
inline std::vector<std::string> to_tsv_lines(const LabeledCorpus& corpus) {
    std::vector<std::string> lines;
    for (const auto& r : corpus.records) lines.push_back(corpus.classes[static_cast<std::size_t>(r.label)] + "\t" + detokenize(r.tokens));
    return lines;
}

} // namespace detox
