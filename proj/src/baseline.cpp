#include <algorithm>
#include <vector>

#include "sdc/harness.hpp"

namespace sdc {

// Nearest-valid fill. Candidates are scanned column by column outward from
// the query pixel, using per-column sorted valid-row lists; a column whose
// horizontal offset alone exceeds the best squared distance cannot win, and
// neither can any farther column, so the scan terminates early. Ties resolve
// to the smaller row, then the smaller column, exactly as the brute-force
// definition.
DepthMap baseline_fill(const DepthMap& sd) {
    const int h = sd.height(), w = sd.width();
    std::vector<std::vector<int>> valid_rows(w);
    bool any = false;
    for (int c = 0; c < w; ++c)
        for (int r = 0; r < h; ++r)
            if (sd.valid(r, c)) {
                valid_rows[c].push_back(r);
                any = true;
            }
    if (!any) throw EmptyEvalSet("baseline_fill: input has no valid pixel");

    struct Candidate {
        long dist2;
        int row, col;
        bool operator<(const Candidate& o) const {
            if (dist2 != o.dist2) return dist2 < o.dist2;
            if (row != o.row) return row < o.row;
            return col < o.col;
        }
    };

    Grid<double> out = sd.values();
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (sd.valid(r, c)) continue;
            Candidate best{std::numeric_limits<long>::max(), -1, -1};

            auto consider_column = [&](int cc) {
                const auto& rows = valid_rows[cc];
                if (rows.empty()) return;
                const long dc2 = static_cast<long>(cc - c) * (cc - c);
                // Nearest rows above and below r; on equal row distance the
                // smaller row must win, so check the upper neighbor first.
                const auto it = std::lower_bound(rows.begin(), rows.end(), r);
                if (it != rows.begin()) {
                    const int rr = *(it - 1);
                    best = std::min(best,
                                    Candidate{dc2 + static_cast<long>(r - rr) * (r - rr), rr, cc});
                }
                if (it != rows.end()) {
                    const int rr = *it;
                    best = std::min(best,
                                    Candidate{dc2 + static_cast<long>(rr - r) * (rr - r), rr, cc});
                }
            };

            for (int dc = 0; dc < w; ++dc) {
                const long dc2 = static_cast<long>(dc) * dc;
                if (best.row >= 0 && dc2 > best.dist2) break;
                if (dc == 0) {
                    consider_column(c);
                } else {
                    if (c - dc >= 0) consider_column(c - dc);
                    if (c + dc < w) consider_column(c + dc);
                }
            }
            out.at(r, c) = sd.at(best.row, best.col);
        }
    }
    return DepthMap(std::move(out));
}

}  // namespace sdc
