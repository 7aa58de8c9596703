#include "roleattn/batching.hpp"

#include <numeric>
#include <stdexcept>

#include "roleattn/random.hpp"

namespace roleattn {

std::vector<std::size_t> Batch::token_ids() const {
    std::vector<std::size_t> out;
    out.reserve(examples.size() * width);
    for (const Example& e : examples) out.insert(out.end(), e.ids.begin(), e.ids.end());
    return out;
}

std::vector<std::size_t> Batch::lengths() const {
    std::vector<std::size_t> out;
    for (const Example& e : examples) out.push_back(e.length);
    return out;
}

std::vector<std::size_t> Batch::labels() const {
    std::vector<std::size_t> out;
    for (const Example& e : examples) out.push_back(e.label);
    return out;
}

std::vector<Example> prepare_examples(std::span<const Sentence> sentences, const Vocabulary& v,
                                      const std::vector<Role>& roles, std::size_t max_len,
                                      const LabelIndex* labels) {
    if (max_len == 0) throw std::invalid_argument("max_len must be positive");
    std::vector<Example> out;
    out.reserve(sentences.size());
    for (const Sentence& raw : sentences) {
        const Sentence s = truncate(raw, max_len);
        Example e;
        e.sentence_id = s.id;
        e.length = s.length();
        e.ids.assign(max_len, Vocabulary::kPad);
        for (std::size_t i = 0; i < s.length(); ++i) e.ids[i] = v.id(s.tokens[i].form);
        if (labels) {
            if (!s.label) throw std::out_of_range("sentence " + s.id + " has no label");
            e.label = labels->at(*s.label);
        }
        e.masks = build_mask_set(s, v, roles, max_len);
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<Batch> batch_examples(std::span<const Example> examples, std::size_t batch_size,
                                  std::optional<std::uint64_t> shuffle_seed) {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    if (shuffle_seed) {
        Rng rng(*shuffle_seed);
        rng.shuffle(std::span<std::size_t>(order));
    }
    std::vector<Batch> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        Batch b;
        for (std::size_t k = start; k < std::min(order.size(), start + batch_size); ++k) {
            b.examples.push_back(examples[order[k]]);
        }
        b.width = b.examples.front().ids.size();
        out.push_back(std::move(b));
    }
    return out;
}

std::vector<Batch> make_batches(std::span<const Sentence> sentences, const Vocabulary& v,
                                const BatchOptions& opts, const LabelIndex* labels) {
    const auto examples = prepare_examples(sentences, v, opts.roles, opts.max_len, labels);
    return batch_examples(examples, opts.batch_size, opts.shuffle_seed);
}

}  // namespace roleattn
