#include "roleattn/synthetic.hpp"

#include <stdexcept>
#include <string>

#include "roleattn/random.hpp"

namespace roleattn {

namespace {

Sentence make_sentence(Rng& rng, const AdjacencyTaskOptions& o, std::size_t ordinal) {
    const std::size_t n = o.length;
    Sentence s;
    s.id = std::to_string(ordinal);
    std::vector<std::size_t> words(n);
    for (auto& w : words) w = 2 + rng.below(o.vocab - 2);

    const bool adjacent = rng.below(2) == 1;
    std::size_t a, b;
    if (adjacent) {
        a = rng.below(n - 1);
        b = a + 1;
    } else {
        do {
            a = rng.below(n);
            b = rng.below(n);
        } while (a == b || (a > b ? a - b : b - a) < 2);
    }
    if (rng.below(2) == 1) std::swap(a, b);
    words[a] = 0;
    words[b] = 1;

    for (std::size_t i = 0; i < n; ++i) {
        Token t;
        t.form = "t" + std::to_string(words[i]);
        t.index = i + 1;
        s.tokens.push_back(std::move(t));
    }
    s.label = adjacent ? "adjacent" : "apart";
    return s;
}

}  // namespace

Dataset make_adjacency_task(const AdjacencyTaskOptions& o) {
    if (o.vocab < 3 || o.length < 3) throw std::invalid_argument("adjacency task needs vocab >= 3 and length >= 3");
    Rng rng(o.seed);
    Dataset ds;
    ds.name = "adjacency";
    std::size_t ordinal = 0;
    for (std::size_t i = 0; i < o.train; ++i) ds.train.push_back(make_sentence(rng, o, ++ordinal));
    for (std::size_t i = 0; i < o.dev; ++i) ds.dev.push_back(make_sentence(rng, o, ++ordinal));
    for (std::size_t i = 0; i < o.test; ++i) ds.test.push_back(make_sentence(rng, o, ++ordinal));
    return ds;
}

}  // namespace roleattn
