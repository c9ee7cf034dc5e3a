#include "forensic/align.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include <spdlog/spdlog.h>

#include "forensic/error.hpp"
#include "forensic/hash.hpp"
#include "forensic/rng.hpp"

namespace forensic::align {

std::size_t SpanMask::count() const {
    std::size_t n = 0;
    for (const auto& [a, b] : ranges) {
        n += b > a ? b - a : 0;
    }
    return n;
}

void SpanMask::check(std::size_t length) const {
    std::size_t prev_end = 0;
    for (std::size_t i = 0; i < ranges.size(); ++i) {
        const auto [a, b] = ranges[i];
        if (a >= b) {
            throw PreconditionError("mask range " + std::to_string(i) + " is empty or reversed");
        }
        if (b > length) {
            throw PreconditionError("mask range " + std::to_string(i) + " exceeds " + std::to_string(length) +
                                    " tokens");
        }
        if (i > 0 && a < prev_end) {
            throw PreconditionError("mask ranges overlap or are unsorted");
        }
        prev_end = b;
    }
    if (count() == 0) {
        throw PreconditionError("mask selects no tokens");
    }
}

AlignmentStats compute_nll(const std::vector<double>& logprobs, const SpanMask& mask) {
    mask.check(logprobs.size());
    NllAccumulator acc;
    for (const auto& [a, b] : mask.ranges) {
        acc.add(std::vector<double>(logprobs.begin() + static_cast<std::ptrdiff_t>(a),
                                    logprobs.begin() + static_cast<std::ptrdiff_t>(b)));
    }
    return acc.stats();
}

void NllAccumulator::add(const std::vector<double>& logprobs) {
    for (double lp : logprobs) {
        if (!(lp <= 0.0)) {
            throw DataError("logprob must be <= 0, got " + std::to_string(lp));
        }
        sum -= lp;
    }
    n += logprobs.size();
}

AlignmentStats NllAccumulator::stats(int turns) const {
    if (n == 0) {
        throw PreconditionError("no tokens scored");
    }
    AlignmentStats s;
    s.nll_per_token = sum / static_cast<double>(n);
    s.perplexity = std::exp(s.nll_per_token);
    s.n_tokens = n;
    s.turns = turns;
    return s;
}

std::vector<double> score_dialogue(ChatClient& scorer, const std::vector<ChatMessage>& messages) {
    std::vector<double> out;
    for (std::size_t i = 0; i < messages.size(); ++i) {
        if (messages[i].role != Role::Assistant) {
            continue;
        }
        for (const auto& t : score_tokens(scorer, messages, i)) {
            out.push_back(t.logprob);
        }
    }
    if (out.empty()) {
        throw PreconditionError("dialogue has no assistant tokens");
    }
    return out;
}

namespace {

std::vector<ChatMessage> to_chat(const Sample& s, const ImageResolver* resolve) {
    std::vector<ChatMessage> out;
    for (const auto& m : s.messages) {
        if (resolve) {
            out.push_back(to_chat_message(m, *resolve));
        } else {
            out.push_back(ChatMessage::text_only(m.role, m.text()));
        }
    }
    return out;
}

int format_of(const Sample& s) {
    const auto it = s.meta.find("align_format");
    if (it == s.meta.end() || !s.meta.contains("align_base")) {
        throw PreconditionError("sample " + s.id + " lacks align_base/align_format");
    }
    try {
        return std::stoi(it->second);
    } catch (const std::exception&) {
        throw PreconditionError("sample " + s.id + " has a non-numeric align_format");
    }
}

}  // namespace

std::vector<FormatRow> compare_formats(const std::vector<Sample>& samples, const std::vector<int>& formats,
                                       ChatClient& scorer, const TaskPool& pool, const ImageResolver* resolve) {
    if (formats.empty()) {
        throw PreconditionError("no formats requested");
    }
    const std::set<int> wanted(formats.begin(), formats.end());
    std::map<std::string, std::set<int>> coverage;
    std::vector<const Sample*> selected;
    for (const auto& s : samples) {
        const int f = format_of(s);
        if (!wanted.contains(f)) {
            continue;
        }
        if (!coverage[s.meta.at("align_base")].insert(f).second) {
            throw PreconditionError("annotation " + s.meta.at("align_base") + " has two samples in format " +
                                    std::to_string(f));
        }
        selected.push_back(&s);
    }
    if (coverage.empty()) {
        throw PreconditionError("no samples in the requested formats");
    }
    for (const auto& [base, have] : coverage) {
        if (have != wanted) {
            throw PreconditionError("annotation " + base + " is missing a requested format");
        }
    }

    probe_scoring(scorer);

    std::vector<std::vector<double>> scored(selected.size());
    pool.run(selected.size(), [&](std::size_t i) { scored[i] = score_dialogue(scorer, to_chat(*selected[i], resolve)); });

    std::map<int, std::pair<NllAccumulator, std::size_t>> by_format;
    for (std::size_t i = 0; i < selected.size(); ++i) {
        auto& [acc, count] = by_format[format_of(*selected[i])];
        acc.add(scored[i]);
        ++count;
    }
    std::vector<FormatRow> rows;
    for (const auto& [turns, entry] : by_format) {
        rows.push_back({turns, entry.second, entry.first.stats(turns)});
    }
    return rows;
}

std::vector<Sample> synthesize_formats(const std::vector<p2::SeedAnnotation>& seeds, const std::vector<int>& formats,
                                       ChatClient& generator, const TaskPool& pool, std::uint64_t seed,
                                       const ImageResolver* resolve, std::vector<std::string>* dropped) {
    const auto scenarios = p2::default_scenarios();
    std::vector<std::vector<Sample>> per_seed(seeds.size());
    std::vector<std::string> errors(seeds.size());
    pool.run(seeds.size(), [&](std::size_t i) {
        const auto& s = seeds[i];
        try {
            Rng rng(derive_seed(seed, "align/" + s.image_id));
            const p2::Scenario& scenario = scenarios[rng.below(scenarios.size())];
            std::optional<ImagePayload> image;
            if (resolve) {
                image = (*resolve)(s.image_id);
            }
            for (int f : formats) {
                p2::SynthesisOptions opts;
                opts.forced_rounds = f;
                p2::Dialogue d = p2::synthesize_dialogue(s, scenario, generator, rng, image, opts);
                Sample out;
                out.id = s.image_id + "#turns" + std::to_string(f);
                out.images = {s.image_id};
                out.label = s.label;
                out.messages = std::move(d.messages);
                out.meta = {{"align_base", s.image_id}, {"align_format", std::to_string(f)}, {"scenario", scenario.id}};
                per_seed[i].push_back(std::move(out));
            }
        } catch (const IoError&) {
            throw;
        } catch (const UnsupportedCapability&) {
            throw;
        } catch (const std::exception& e) {
            errors[i] = e.what();
            per_seed[i].clear();
        }
    });
    std::vector<Sample> out;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (!errors[i].empty()) {
            spdlog::warn("annotation {} dropped: {}", seeds[i].image_id, errors[i]);
            if (dropped) {
                dropped->push_back(seeds[i].image_id);
            }
            continue;
        }
        for (auto& s : per_seed[i]) {
            out.push_back(std::move(s));
        }
    }
    return out;
}

namespace {

std::string num(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace

std::string align_csv(const std::vector<FormatRow>& rows) {
    std::string out = "turns,samples,n_tokens,nll,perplexity\n";
    for (const auto& r : rows) {
        out += std::to_string(r.turns) + "," + std::to_string(r.samples) + "," + std::to_string(r.stats.n_tokens) +
               "," + num(r.stats.nll_per_token, 6) + "," + num(r.stats.perplexity, 6) + "\n";
    }
    return out;
}

std::string align_markdown(const std::vector<FormatRow>& rows) {
    std::string out = "| Turns | Samples | Tokens | NLL (nats/token) | Perplexity |\n|---:|---:|---:|---:|---:|\n";
    for (const auto& r : rows) {
        out += "| " + std::to_string(r.turns) + " | " + std::to_string(r.samples) + " | " +
               std::to_string(r.stats.n_tokens) + " | " + num(r.stats.nll_per_token, 4) + " | " +
               num(r.stats.perplexity, 4) + " |\n";
    }
    return out;
}

}  // namespace forensic::align
