#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

namespace mcb {

/// Corpus-level BLEU-4 on a 0-100 scale: geometric mean of modified n-gram
/// precisions (n = 1..4) times the brevity penalty. No smoothing: any zero
/// precision (including an empty n-gram count) gives 0.
template <typename Token>
double bleu_corpus(const std::vector<std::vector<Token>>& hyps, const std::vector<std::vector<Token>>& refs) {
    if (hyps.size() != refs.size()) throw std::invalid_argument("bleu: hypothesis/reference count mismatch");
    long long match[4] = {0, 0, 0, 0};
    long long total[4] = {0, 0, 0, 0};
    long long hyp_len = 0, ref_len = 0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        const auto& h = hyps[i];
        const auto& r = refs[i];
        hyp_len += (long long)h.size();
        ref_len += (long long)r.size();
        for (int n = 1; n <= 4; ++n) {
            if ((long long)h.size() < n) continue;
            std::map<std::vector<Token>, long long> hcount, rcount;
            for (std::size_t j = 0; j + n <= h.size(); ++j)
                hcount[std::vector<Token>(h.begin() + j, h.begin() + j + n)] += 1;
            for (std::size_t j = 0; j + n <= r.size(); ++j)
                rcount[std::vector<Token>(r.begin() + j, r.begin() + j + n)] += 1;
            for (const auto& [gram, c] : hcount) {
                total[n - 1] += c;
                auto it = rcount.find(gram);
                if (it != rcount.end()) match[n - 1] += std::min(c, it->second);
            }
        }
    }
    double log_p = 0.0;
    for (int n = 0; n < 4; ++n) {
        if (total[n] == 0 || match[n] == 0) return 0.0;
        log_p += 0.25 * std::log(double(match[n]) / double(total[n]));
    }
    double bp = 1.0;
    if (hyp_len < ref_len && hyp_len > 0) bp = std::exp(1.0 - double(ref_len) / double(hyp_len));
    if (hyp_len == 0) return 0.0;
    return 100.0 * bp * std::exp(log_p);
}

}  // namespace mcb
