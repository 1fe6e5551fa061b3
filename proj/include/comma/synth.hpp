#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

namespace comma::synth {

// Exercise release in the upstream annotation shape. Every story carries
// five lines and two characters; exactly four (line, character) candidates
// per story reach 2-of-3 annotator agreement on both label families, the
// rest are rejected noise (vote splits, empty votes, or a non-appearing
// character), so the default corpus settings yield 4 * n_stories instances.
struct SynthConfig {
    int n_stories = 3392;  // 4 * 3392 = 13,568 aligned instances
    std::uint64_t seed = 7;
};

// Builds the release document keyed by story id. Deterministic in the seed.
nlohmann::json synth_release(const SynthConfig& config);

// Writes annotations.json under dir (created if needed).
void write_release(const SynthConfig& config, const std::string& dir);

}  // namespace comma::synth
