#include "classkit/pair_miner.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>

#include "binary_io.hpp"
#include "classkit/parallel.hpp"

namespace classkit {

void PairTable::validate() const {
    if (pairs.empty()) throw ValidationError("pair table holds no pairs");
    if (!(k_quantile > 0.0 && k_quantile <= 1.0)) throw ValidationError("pair table quantile outside (0, 1]");
    for (std::size_t n = 0; n < pairs.size(); ++n) {
        const auto& p = pairs[n];
        if (p.i >= p.j) throw ValidationError("pair table record with i >= j");
        if (p.j >= window_count) throw ValidationError("pair table ordinal beyond window count");
        if (!(p.dist >= 0.0) || p.dist > threshold) throw ValidationError("pair distance outside [0, threshold]");
        if (n > 0 && !(pairs[n - 1].i < p.i || (pairs[n - 1].i == p.i && pairs[n - 1].j < p.j)))
            throw ValidationError("pair table records not strictly ordered by (i, j)");
    }
}

double nearest_rank_quantile(std::vector<double> values, double q) {
    if (values.empty()) throw ValidationError("quantile of an empty sample");
    if (!(q > 0.0 && q <= 1.0)) throw ValidationError("quantile must lie in (0, 1]");
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
    const std::size_t k = std::clamp<std::size_t>(rank, 1, values.size()) - 1;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
    return values[k];
}

namespace {

struct Candidate {
    double dist;
    std::uint64_t i, j;
};

bool excluded(const ActionWindow& a, const ActionWindow& b, std::size_t margin) {
    if (a.index.demo_ord != b.index.demo_ord) return false;
    const std::size_t gap = a.index.t > b.index.t ? a.index.t - b.index.t : b.index.t - a.index.t;
    return gap <= margin;
}

// Keeps every candidate whose distance is <= the keep-th smallest in the buffer.
void prune(std::vector<Candidate>& buf, std::size_t keep) {
    if (buf.size() <= keep) return;
    auto nth = buf.begin() + static_cast<std::ptrdiff_t>(keep - 1);
    std::nth_element(buf.begin(), nth, buf.end(), [](const Candidate& x, const Candidate& y) { return x.dist < y.dist; });
    const double cut = nth->dist;
    std::erase_if(buf, [cut](const Candidate& c) { return c.dist > cut; });
}

}  // namespace

PairTable mine_pairs(const std::vector<ActionWindow>& windows, const MiningOptions& opts) {
    if (windows.size() < 2) throw ValidationError("mining needs at least 2 windows");
    if (!(opts.k_quantile > 0.0 && opts.k_quantile <= 1.0)) throw ValidationError("K quantile must lie in (0, 1]");

    const std::size_t n = windows.size();
    const std::size_t horizon = windows.front().actions.size();
    const std::size_t dim = windows.front().actions.front().size();
    opts.distance.validate(dim);
    for (const auto& w : windows) {
        if (w.actions.empty() || w.actions.front().size() != dim) throw ValidationError("window dimension mismatch");
        if (opts.distance.metric == SeqMetric::L2 && w.actions.size() != horizon)
            throw ValidationError("L2 mining needs equal-length windows");
    }

    // Pre-scaled flat copies of every window.
    std::vector<std::vector<double>> flat(n);
    for (std::size_t w = 0; w < n; ++w) detail::scale_into(windows[w].actions, opts.distance.dim_scale, flat[w]);

    std::uint64_t eligible = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (!excluded(windows[i], windows[j], opts.exclusion_margin)) ++eligible;
    if (eligible < 2) throw ValidationError("fewer than 2 eligible pairs after temporal exclusion");

    const auto keep = static_cast<std::size_t>(
        std::clamp<double>(std::ceil(opts.k_quantile * static_cast<double>(eligible)), 1.0, static_cast<double>(eligible)));

    // Row blocks: row i is assigned to block i % blocks, which balances the triangular workload.
    const std::size_t blocks = std::max<std::size_t>(1, std::min<std::size_t>(64, n / 8 + 1));
    std::vector<std::vector<Candidate>> kept(blocks);
    parallel_for(blocks, opts.threads, [&](std::size_t b) {
        auto& buf = kept[b];
        std::vector<double> scratch(horizon + 64);
        const std::size_t flush_at = std::max<std::size_t>(2 * keep, 4096);
        for (std::size_t i = b; i < n; i += blocks) {
            const std::size_t li = windows[i].actions.size();
            for (std::size_t j = i + 1; j < n; ++j) {
                if (excluded(windows[i], windows[j], opts.exclusion_margin)) continue;
                const std::size_t lj = windows[j].actions.size();
                double d;
                if (opts.distance.metric == SeqMetric::DTW) {
                    if (scratch.size() < lj) scratch.resize(lj);
                    d = detail::dtw_prescaled(flat[i].data(), li, flat[j].data(), lj, dim, scratch.data());
                } else {
                    d = detail::l2_prescaled(flat[i].data(), flat[j].data(), li, dim);
                }
                buf.push_back({d, i, j});
            }
            if (buf.size() > flush_at) prune(buf, keep);
        }
        prune(buf, keep);
    });

    std::vector<Candidate> merged;
    for (auto& b : kept) merged.insert(merged.end(), b.begin(), b.end());
    kept.clear();
    // The keep-th smallest over the union equals the global nearest-rank threshold,
    // since every block retained all of its values at or below that rank.
    std::vector<double> dists(merged.size());
    std::transform(merged.begin(), merged.end(), dists.begin(), [](const Candidate& c) { return c.dist; });
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(keep - 1), dists.end());
    const double threshold = dists[keep - 1];

    PairTable table;
    table.window_count = n;
    table.threshold = threshold;
    table.metric_tag = to_string(opts.distance.metric);
    table.k_quantile = opts.k_quantile;
    table.eligible_count = eligible;
    for (const auto& c : merged)
        if (c.dist <= threshold) table.pairs.push_back({c.i, c.j, c.dist});
    std::sort(table.pairs.begin(), table.pairs.end(),
              [](const PairRecord& x, const PairRecord& y) { return x.i != y.i ? x.i < y.i : x.j < y.j; });
    return table;
}

double CdfModel::cdf(double x) const {
    const auto lo = std::lower_bound(sorted_dists.begin(), sorted_dists.end(), x);
    const auto hi = std::upper_bound(lo, sorted_dists.end(), x);
    const double less = static_cast<double>(lo - sorted_dists.begin());
    const double equal = static_cast<double>(hi - lo);
    return (less + 0.5 * equal) / static_cast<double>(sorted_dists.size());
}

CdfModel fit_cdf(const PairTable& table) {
    if (table.pairs.empty()) throw ValidationError("cannot fit a CDF to an empty pair table");
    CdfModel m;
    m.sorted_dists.reserve(table.pairs.size());
    for (const auto& p : table.pairs) m.sorted_dists.push_back(p.dist);
    std::sort(m.sorted_dists.begin(), m.sorted_dists.end());
    return m;
}

double soft_weight(double dist, const CdfModel& cdf) {
    if (cdf.sorted_dists.empty()) throw ValidationError("soft_weight needs a nonempty CDF");
    return std::clamp(1.0 - cdf.cdf(dist), 0.0, 1.0);
}

void SoftWeights::set(std::uint64_t i, std::uint64_t j, double w) {
    if (i == j) throw ValidationError("soft weight on the diagonal");
    if (i >= adjacency_.size() || j >= adjacency_.size()) throw ValidationError("soft weight ordinal out of range");
    auto put = [w](auto& list, std::uint64_t k) {
        auto it = std::lower_bound(list.begin(), list.end(), k, [](const auto& e, std::uint64_t key) { return e.first < key; });
        if (it != list.end() && it->first == k)
            it->second = w;
        else
            list.insert(it, {k, w});
    };
    put(adjacency_[i], j);
    put(adjacency_[j], i);
}

double SoftWeights::weight(std::uint64_t i, std::uint64_t j) const {
    if (i >= adjacency_.size()) return 0.0;
    const auto& list = adjacency_[i];
    auto it = std::lower_bound(list.begin(), list.end(), j, [](const auto& e, std::uint64_t key) { return e.first < key; });
    return (it != list.end() && it->first == j) ? it->second : 0.0;
}

SoftWeights SoftWeights::hardened() const {
    SoftWeights h = *this;
    for (auto& list : h.adjacency_)
        for (auto& e : list) e.second = 1.0;
    return h;
}

SoftWeights build_soft_weights(const PairTable& table, const CdfModel& cdf) {
    SoftWeights w(table.window_count);
    // Records are sorted by (i, j), so appends keep each adjacency list ordered.
    for (const auto& p : table.pairs) w.set(p.i, p.j, soft_weight(p.dist, cdf));
    return w;
}

namespace {

constexpr std::array<char, 8> kPairMagic = {'C', 'L', 'S', 'P', 'A', 'I', 'R', 'S'};
constexpr std::uint32_t kPairVersion = 1;

}  // namespace

void save_pair_table(const PairTable& table, const SoftWeights& weights, const std::filesystem::path& path) {
    table.validate();
    std::string out;
    out.append(kPairMagic.data(), kPairMagic.size());
    binio::put<std::uint32_t>(out, kPairVersion);
    binio::put<std::uint64_t>(out, table.window_count);
    binio::put<double>(out, table.threshold);
    binio::put<std::uint64_t>(out, table.pairs.size());
    for (const auto& p : table.pairs) {
        binio::put<std::uint64_t>(out, p.i);
        binio::put<std::uint64_t>(out, p.j);
        binio::put<double>(out, p.dist);
        binio::put<double>(out, weights.weight(p.i, p.j));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write pair table '" + path.string() + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed for '" + path.string() + "'");
}

LoadedPairs load_pair_table(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open pair table '" + path.string() + "'");
    std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (in.size() < kPairMagic.size() || std::memcmp(in.data(), kPairMagic.data(), kPairMagic.size()) != 0)
        throw CorruptFileError("'" + path.string() + "' is not a pair table (bad magic)");
    binio::Reader rd(in, "pair table");
    rd.skip(kPairMagic.size());
    const auto version = rd.get<std::uint32_t>();
    if (version != kPairVersion) throw CorruptFileError("unsupported pair table version " + std::to_string(version));
    LoadedPairs out;
    auto& t = out.table;
    t.window_count = rd.get<std::uint64_t>();
    t.threshold = rd.get<double>();
    const auto count = rd.get<std::uint64_t>();
    constexpr std::size_t kRecord = 32;
    if (rd.remaining() % kRecord != 0 || rd.remaining() / kRecord != count)
        throw CorruptFileError("pair table length does not match its record count");
    t.metric_tag = "unknown";
    out.weights = SoftWeights(t.window_count);
    t.pairs.reserve(count);
    for (std::uint64_t n = 0; n < count; ++n) {
        PairRecord p;
        p.i = rd.get<std::uint64_t>();
        p.j = rd.get<std::uint64_t>();
        p.dist = rd.get<double>();
        const double w = rd.get<double>();
        if (p.i >= p.j || p.j >= t.window_count) throw CorruptFileError("pair table record with invalid ordinals");
        t.pairs.push_back(p);
        out.weights.set(p.i, p.j, w);
    }
    try {
        t.validate();
    } catch (const ValidationError& e) {
        throw CorruptFileError(std::string("pair table fails validation: ") + e.what());
    }
    return out;
}

}  // namespace classkit
