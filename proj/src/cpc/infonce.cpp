#include <algorithm>
#include <cmath>
#include <memory>

#include "fedcpc/core/error.hpp"
#include "fedcpc/cpc/cpc.hpp"

namespace fedcpc::cpc {

NegativeIndices sample_negatives(std::size_t frames, std::size_t steps, std::size_t n_negatives, Rng& rng) {
    if (frames <= steps) throw InvalidShape("need more latent frames than prediction steps");
    if (n_negatives > 0 && frames < 2) throw InvalidShape("negatives need at least two frames");
    NegativeIndices out(steps);
    for (std::size_t k = 1; k <= steps; ++k) {
        auto& per_t = out[k - 1];
        per_t.resize(frames - k);
        for (std::size_t t = 0; t + k < frames; ++t) {
            const std::size_t pos = t + k;
            per_t[t].resize(n_negatives);
            for (auto& j : per_t[t]) {
                j = rng.index(frames - 1);
                if (j >= pos) ++j;
            }
        }
    }
    return out;
}

namespace {

// Sum over t of the contrastive term for one offset k. preds [(T-k) x D] holds W_k c_t,
// z [T x D] the latents.
Var offset_terms(Var preds, Var z, std::size_t k, const std::vector<std::vector<std::size_t>>& negs,
                 double& correct) {
    const std::size_t rows = preds.shape()[0], dim = preds.shape()[1];
    Tape& tape = preds.tape();
    return dispatch(preds.dtype(), [&]<class T>() {
        auto p = preds.value().data<T>();
        auto zv = z.value().data<T>();
        const std::size_t n = negs.empty() ? 1 : negs[0].size() + 1;
        const double log_n = std::log(static_cast<double>(n));
        // Softmax weights per term and candidate, kept for backward.
        auto soft = std::make_shared<std::vector<T>>(rows * n);
        std::vector<T> s(n);
        double total = 0;
        correct = 0;
        for (std::size_t t = 0; t < rows; ++t) {
            const T* pt = p.data() + t * dim;
            for (std::size_t j = 0; j < n; ++j) {
                const std::size_t idx = j == 0 ? t + k : negs[t][j - 1];
                const T* zj = zv.data() + idx * dim;
                T acc = 0;
                for (std::size_t d = 0; d < dim; ++d) acc += pt[d] * zj[d];
                s[j] = acc;
            }
            const T m = *std::max_element(s.begin(), s.end());
            double denom = 0;
            for (std::size_t j = 0; j < n; ++j) denom += std::exp(static_cast<double>(s[j] - m));
            total += static_cast<double>(m - s[0]) + std::log(denom) - log_n;
            for (std::size_t j = 0; j < n; ++j)
                (*soft)[t * n + j] = static_cast<T>(std::exp(static_cast<double>(s[j] - m)) / denom);
            if (s[0] == m) {
                const auto ties = std::count(s.begin(), s.end(), m);
                correct += 1.0 / static_cast<double>(ties);
            }
        }
        Tensor out = Tensor::scalar(total, preds.dtype());
        return tape.record(std::move(out), {preds, z}, [=](Tape& tp, Var out) {
            const T g = tp.grad<T>(out)[0];
            auto pv = preds.value().data<T>();
            auto zval = z.value().data<T>();
            const bool gp = tp.needs_grad(preds), gz = tp.needs_grad(z);
            std::span<T> dp, dz;
            if (gp) dp = tp.grad<T>(preds);
            if (gz) dz = tp.grad<T>(z);
            for (std::size_t t = 0; t < rows; ++t)
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t idx = j == 0 ? t + k : negs[t][j - 1];
                    const T w = g * ((*soft)[t * n + j] - (j == 0 ? T(1) : T(0)));
                    if (w == T(0)) continue;
                    if (gp)
                        for (std::size_t d = 0; d < dim; ++d) dp[t * dim + d] += w * zval[idx * dim + d];
                    if (gz)
                        for (std::size_t d = 0; d < dim; ++d) dz[idx * dim + d] += w * pv[t * dim + d];
                }
        });
    });
}

} // namespace

InfoNceResult infonce(Var c, Var z, std::span<const Var> heads, const NegativeIndices& negatives) {
    if (c.shape().size() != 2 || z.shape().size() != 2 || c.shape()[0] != z.shape()[0])
        throw InvalidShape("infonce expects C [T x Dc] and Z [T x D] of equal length");
    const std::size_t frames = z.shape()[0], steps = heads.size();
    if (steps == 0 || frames <= steps)
        throw InvalidShape("infonce needs more frames (" + std::to_string(frames) + ") than prediction steps (" +
                           std::to_string(steps) + ")");
    if (negatives.size() != steps) throw InvalidShape("negative index table does not match prediction steps");
    for (const Var& w : heads)
        if (w.shape() != Shape{z.shape()[1], c.shape()[1]})
            throw InvalidShape("prediction head shape " + to_string(w.shape()));

    InfoNceResult r;
    r.correct.assign(steps, 0.0);
    r.counted.assign(steps, 0);
    for (std::size_t k = 1; k <= steps; ++k) {
        const std::size_t rows = frames - k;
        if (negatives[k - 1].size() != rows) throw InvalidShape("negative index table has the wrong term count");
        Var preds = ops::linear(ops::slice_rows(c, 0, rows), heads[k - 1]);
        Var term = offset_terms(preds, z, k, negatives[k - 1], r.correct[k - 1]);
        r.counted[k - 1] = rows;
        r.terms += rows;
        r.loss = r.loss.valid() ? ops::add(r.loss, term) : term;
    }
    return r;
}

} // namespace fedcpc::cpc
