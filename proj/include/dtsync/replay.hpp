#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <stdexcept>
#include <vector>

#include "dtsync/rng.hpp"

namespace dtsync {

/// One stored transition (S, a, r, c, S').
struct Experience {
    std::vector<double> obs;
    std::vector<std::uint8_t> action;
    double reward = 0.0;
    double cost = 0.0;
    std::vector<double> next_obs;
    long born_step = 0;
};

struct MtrConfig {
    int n_sub = 4;             // number of cascaded FIFO sub-buffers
    int sub_capacity = 1250;   // capacity of each sub-buffer
    double promote_prob = 0.8; // chance an eviction moves to the next stage
    int total_cap = 5000;      // hard cap on everything stored

    void validate() const {
        if (n_sub < 1) throw std::invalid_argument("MtrConfig: n_sub must be >= 1");
        if (sub_capacity < 1) throw std::invalid_argument("MtrConfig: sub_capacity must be >= 1");
        if (promote_prob < 0.0 || promote_prob > 1.0)
            throw std::invalid_argument("MtrConfig: promote_prob must be in [0, 1]");
        if (static_cast<long>(n_sub) * sub_capacity > total_cap)
            throw std::invalid_argument("MtrConfig: sub-buffer capacities exceed total_cap");
    }
};

/// Multi-timescale replay: a cascade of FIFO sub-buffers plus an overflow
/// buffer. New experiences enter stage 0; when a stage overflows, its oldest
/// item either moves to the next stage (probability promote_prob) or drops
/// to overflow. Evictions from the last stage always go to overflow. The
/// surviving-cohort sizes decay geometrically per stage, which is what
/// produces the heavy-tailed age distribution of retained experiences.
class MtrBuffer {
public:
    explicit MtrBuffer(const MtrConfig& cfg) : cfg_(cfg), subs_(cfg.n_sub) {
        cfg_.validate();
        stage_arrivals_.assign(cfg_.n_sub, 0);
    }

    static constexpr int kOverflowProvenance = -1;

    void push(Experience exp, Rng& rng) {
        ++stage_arrivals_[0];
        subs_[0].push_back(std::move(exp));
        for (int k = 0; k < cfg_.n_sub; ++k) {
            if (static_cast<int>(subs_[k].size()) <= cfg_.sub_capacity) break;
            Experience evicted = std::move(subs_[k].front());
            subs_[k].pop_front();
            const bool promote = k + 1 < cfg_.n_sub && rng.uniform() < cfg_.promote_prob;
            if (promote) {
                ++stage_arrivals_[k + 1];
                subs_[k + 1].push_back(std::move(evicted));
            } else {
                overflow_.push_back(std::move(evicted));
                break;
            }
        }
        while (total_stored() > static_cast<std::size_t>(cfg_.total_cap) && !overflow_.empty())
            overflow_.pop_front();
    }

    std::size_t total_stored() const {
        std::size_t n = overflow_.size();
        for (const auto& s : subs_) n += s.size();
        return n;
    }

    std::size_t sub_size(int k) const { return subs_.at(k).size(); }
    std::size_t overflow_size() const { return overflow_.size(); }
    int n_sub() const { return cfg_.n_sub; }

    /// Lifetime count of experiences that ever entered stage k.
    long stage_arrivals(int k) const { return stage_arrivals_.at(k); }

    struct Sampled {
        Experience exp;
        int provenance = 0;  // sub-buffer index, or kOverflowProvenance
    };

    /// Uniform sampling with replacement over everything stored. Each item
    /// carries the index of the sub-buffer it currently lives in; overflow
    /// items are tagged separately so the invariance penalty can skip them.
    std::vector<Sampled> sample_batch(std::size_t batch_size, Rng& rng) const {
        const std::size_t total = total_stored();
        if (total == 0) throw std::runtime_error("MtrBuffer::sample_batch: buffer is empty");
        std::vector<Sampled> batch;
        batch.reserve(batch_size);
        for (std::size_t i = 0; i < batch_size; ++i) {
            std::size_t idx = static_cast<std::size_t>(rng.below(total));
            int provenance = kOverflowProvenance;
            const Experience* exp = nullptr;
            for (int k = 0; k < cfg_.n_sub; ++k) {
                if (idx < subs_[k].size()) {
                    exp = &subs_[k][idx];
                    provenance = k;
                    break;
                }
                idx -= subs_[k].size();
            }
            if (exp == nullptr) exp = &overflow_[idx];
            batch.push_back({*exp, provenance});
        }
        return batch;
    }

    /// Counts of stored experiences by age (now_step - born_step).
    std::map<long, long> age_histogram(long now_step) const {
        std::map<long, long> hist;
        for (const auto& s : subs_)
            for (const auto& e : s) ++hist[now_step - e.born_step];
        for (const auto& e : overflow_) ++hist[now_step - e.born_step];
        return hist;
    }

    long max_stored_age(long now_step) const {
        long best = -1;
        for (const auto& s : subs_)
            for (const auto& e : s) best = std::max(best, now_step - e.born_step);
        for (const auto& e : overflow_) best = std::max(best, now_step - e.born_step);
        return best;
    }

private:
    MtrConfig cfg_;
    std::vector<std::deque<Experience>> subs_;
    std::deque<Experience> overflow_;
    std::vector<long> stage_arrivals_;
};

}  // namespace dtsync
