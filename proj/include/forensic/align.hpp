#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "forensic/client.hpp"
#include "forensic/dialectic_p2.hpp"
#include "forensic/executor.hpp"
#include "forensic/schema.hpp"

namespace forensic::align {

// Half-open token ranges that are scored.
struct SpanMask {
    std::vector<std::pair<std::size_t, std::size_t>> ranges;

    static SpanMask full(std::size_t n) { return SpanMask{{{0, n}}}; }
    std::size_t count() const;
    // Throws PreconditionError unless ranges are non-empty, sorted, disjoint
    // and within [0, length), covering at least one token.
    void check(std::size_t length) const;
};

struct AlignmentStats {
    double nll_per_token = 0.0;  // nats
    double perplexity = 1.0;
    std::size_t n_tokens = 0;
    int turns = 0;
};

// nll = -(1/n) * sum of masked logprobs, perplexity = exp(nll). A positive
// logprob is a DataError.
AlignmentStats compute_nll(const std::vector<double>& logprobs, const SpanMask& mask);

// Running token-weighted total.
struct NllAccumulator {
    double sum = 0.0;  // sum of -logprob
    std::size_t n = 0;
    void add(const std::vector<double>& logprobs);
    AlignmentStats stats(int turns = 0) const;
};

// Logprobs of every assistant-turn token of a dialogue, one scoring call per
// assistant turn.
std::vector<double> score_dialogue(ChatClient& scorer, const std::vector<ChatMessage>& messages);

struct FormatRow {
    int turns = 0;
    std::size_t samples = 0;
    AlignmentStats stats;
};

/// Token-weighted NLL per dialogue format. Samples carry meta "align_base"
/// (annotation id) and "align_format" (round count); every base must appear in
/// every requested format. Scoring capability is probed before any work.
/// `resolve` supplies image bytes; without it image parts are left out.
std::vector<FormatRow> compare_formats(const std::vector<Sample>& samples, const std::vector<int>& formats,
                                       ChatClient& scorer, const TaskPool& pool,
                                       const ImageResolver* resolve = nullptr);

/// Renders each seed annotation as a dialogue of every requested round count
/// with the synthesizer, tagging samples for compare_formats. Seeds whose
/// synthesis fails in any format are dropped entirely (listed in `dropped`).
std::vector<Sample> synthesize_formats(const std::vector<p2::SeedAnnotation>& seeds, const std::vector<int>& formats,
                                       ChatClient& generator, const TaskPool& pool, std::uint64_t seed,
                                       const ImageResolver* resolve = nullptr,
                                       std::vector<std::string>* dropped = nullptr);

std::string align_csv(const std::vector<FormatRow>& rows);
std::string align_markdown(const std::vector<FormatRow>& rows);

}  // namespace forensic::align
