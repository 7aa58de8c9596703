#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "roleattn/corpus.hpp"
#include "roleattn/masks.hpp"

namespace roleattn {

// One sentence ready for the encoder: token ids padded to the batch width
// and its masks already combined with the padding mask.
struct Example {
    std::string sentence_id;
    std::vector<std::size_t> ids;  // width entries, PAD beyond length
    std::size_t length = 0;
    std::size_t label = 0;
    MaskSet masks;
};

struct Batch {
    std::size_t width = 0;
    std::vector<Example> examples;

    std::size_t size() const { return examples.size(); }
    // batch x width id matrix, row-major.
    std::vector<std::size_t> token_ids() const;
    std::vector<std::size_t> lengths() const;
    std::vector<std::size_t> labels() const;
};

struct BatchOptions {
    std::size_t batch_size = 16;
    std::size_t max_len = 64;
    std::vector<Role> roles;
    std::optional<std::uint64_t> shuffle_seed;
};

// Truncates to max_len, maps forms to ids and builds masks. When `labels`
// is given every sentence must carry a known label (std::out_of_range
// otherwise); without it labels are 0.
std::vector<Example> prepare_examples(std::span<const Sentence> sentences, const Vocabulary& v,
                                      const std::vector<Role>& roles, std::size_t max_len,
                                      const LabelIndex* labels = nullptr);

// Groups examples in order, or in a seeded shuffled order. batch_size must
// be at least 1.
std::vector<Batch> batch_examples(std::span<const Example> examples, std::size_t batch_size,
                                  std::optional<std::uint64_t> shuffle_seed = std::nullopt);

std::vector<Batch> make_batches(std::span<const Sentence> sentences, const Vocabulary& v,
                                const BatchOptions& opts, const LabelIndex* labels = nullptr);

}  // namespace roleattn
