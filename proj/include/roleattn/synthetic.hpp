#pragma once

#include <cstddef>
#include <cstdint>

#include "roleattn/corpus.hpp"

namespace roleattn {

struct AdjacencyTaskOptions {
    std::size_t train = 2000;
    std::size_t dev = 500;
    std::size_t test = 500;
    std::size_t vocab = 50;
    std::size_t length = 12;
    std::uint64_t seed = 7;
};

// Two-class task whose label depends only on adjacency: every sentence holds
// the marker tokens "t0" and "t1" exactly once among random fillers; the
// label is "adjacent" when they are neighbours and "apart" otherwise. The
// bag of words carries no signal. Sentences are unparsed.
Dataset make_adjacency_task(const AdjacencyTaskOptions& opts = {});

}  // namespace roleattn
