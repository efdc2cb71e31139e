#include "comics/fine_contrast.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

namespace comics {

int64_t RegionSelection::face_count() const { return std::count(face.begin(), face.end(), uint8_t{1}); }
int64_t RegionSelection::background_count() const {
    return std::count(background.begin(), background.end(), uint8_t{1});
}

std::vector<uint8_t> mask_contour(const std::vector<uint8_t>& binary, int size) {
    std::vector<uint8_t> contour(binary.size(), 0);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            if (!binary[size_t(y * size + x)]) continue;
            bool edge = y == 0 || x == 0 || y == size - 1 || x == size - 1;
            for (int dy = -1; dy <= 1 && !edge; ++dy)
                for (int dx = -1; dx <= 1 && !edge; ++dx)
                    if (!binary[size_t((y + dy) * size + (x + dx))]) edge = true;
            contour[size_t(y * size + x)] = edge;
        }
    return contour;
}

std::vector<int> chebyshev_distance(const std::vector<uint8_t>& contour, int size) {
    const int inf = 4 * size + 4;
    std::vector<int> d(contour.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = contour[i] ? 0 : inf;
    auto at = [&](int y, int x) -> int& { return d[size_t(y * size + x)]; };
    // two-pass chamfer with unit weights on all eight neighbours
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            int& v = at(y, x);
            if (x > 0) v = std::min(v, at(y, x - 1) + 1);
            if (y > 0) {
                v = std::min(v, at(y - 1, x) + 1);
                if (x > 0) v = std::min(v, at(y - 1, x - 1) + 1);
                if (x < size - 1) v = std::min(v, at(y - 1, x + 1) + 1);
            }
        }
    for (int y = size - 1; y >= 0; --y)
        for (int x = size - 1; x >= 0; --x) {
            int& v = at(y, x);
            if (x < size - 1) v = std::min(v, at(y, x + 1) + 1);
            if (y < size - 1) {
                v = std::min(v, at(y + 1, x) + 1);
                if (x < size - 1) v = std::min(v, at(y + 1, x + 1) + 1);
                if (x > 0) v = std::min(v, at(y + 1, x - 1) + 1);
            }
        }
    return d;
}

RegionSelection select_regions(const std::vector<uint8_t>& binary, int size, int radius) {
    if (binary.size() != size_t(size) * size_t(size)) throw std::invalid_argument("select_regions: size mismatch");
    if (radius < 0) throw std::invalid_argument("select_regions: negative radius");
    const auto dist = chebyshev_distance(mask_contour(binary, size), size);
    RegionSelection out{size, std::vector<uint8_t>(binary.size(), 0), std::vector<uint8_t>(binary.size(), 0)};
    for (size_t i = 0; i < binary.size(); ++i) {
        if (dist[i] < radius) continue;
        (binary[i] ? out.face : out.background)[i] = 1;
    }
    return out;
}

namespace {

torch::Tensor gather_pixels(const torch::Tensor& flat, const std::vector<uint8_t>& keep) {
    std::vector<int64_t> idx;
    for (size_t i = 0; i < keep.size(); ++i)
        if (keep[i]) idx.push_back(int64_t(i));
    return flat.index_select(0, torch::tensor(idx, torch::kInt64));
}

torch::Tensor logsumexp(const torch::Tensor& x) { return torch::logsumexp(x, 0); }

}  // namespace

std::optional<MaskRegionSplit> split_mask_regions(const torch::Tensor& feature_map,
                                                  const std::vector<uint8_t>& binary, FaceLabel label,
                                                  const FineConfig& cfg, size_t proposal_id) {
    const int s = int(feature_map.size(1));
    if (feature_map.dim() != 3 || feature_map.size(2) != s)
        throw std::invalid_argument("split_mask_regions: feature map must be [D,S,S]");
    const auto sel = select_regions(binary, s, cfg.erosion_radius);
    if (sel.face_count() == 0 || sel.background_count() == 0) return std::nullopt;
    const auto flat = feature_map.reshape({feature_map.size(0), -1}).t();
    return MaskRegionSplit{label, proposal_id, gather_pixels(flat, sel.face), gather_pixels(flat, sel.background)};
}

std::optional<MaskRegionSplit> split_mask_regions(const torch::Tensor& feature_map, const torch::Tensor& mask_prob,
                                                  FaceLabel label, const FineConfig& cfg, size_t proposal_id) {
    const auto p = mask_prob.detach().to(torch::kFloat64).contiguous();
    if (p.dim() != 2 || p.size(0) != feature_map.size(1) || p.size(1) != feature_map.size(2))
        throw std::invalid_argument("split_mask_regions: mask grid does not match feature map");
    std::vector<uint8_t> binary(size_t(p.numel()));
    const double* d = p.data_ptr<double>();
    for (size_t i = 0; i < binary.size(); ++i) binary[i] = d[i] >= cfg.binarize_threshold;
    return split_mask_regions(feature_map, binary, label, cfg, proposal_id);
}

torch::Tensor region_sim(const torch::Tensor& h, const torch::Tensor& h_prime) {
    if (h.size(0) == 0 || h_prime.size(0) == 0) throw std::invalid_argument("region_sim: empty pixel set");
    namespace F = torch::nn::functional;
    const auto opts = F::NormalizeFuncOptions().dim(1);
    // mean over pairs of dot products = dot of the means
    return F::normalize(h, opts).mean(0).dot(F::normalize(h_prime, opts).mean(0));
}

ContrastTerm intra_face_loss_from_sims(const torch::Tensor& real_sims, const torch::Tensor& fake_sims, double tau) {
    ContrastTerm out;
    if (real_sims.numel() == 0) {
        out.value = torch::zeros({}, real_sims.options());
        return out;
    }
    out.skipped = false;
    if (fake_sims.numel() == 0) {
        out.value = real_sims.sum() * 0.0;
        return out;
    }
    const auto r = real_sims / tau;
    out.value = logsumexp(torch::cat({r, fake_sims / tau})) - logsumexp(r);
    return out;
}

ContrastTerm inter_face_loss_from_sims(const torch::Tensor& background_sims, const torch::Tensor& face_sims,
                                       double tau) {
    ContrastTerm out;
    if (background_sims.numel() == 0 || face_sims.numel() == 0) {
        out.value = torch::zeros({}, background_sims.options());
        return out;
    }
    const auto n = background_sims / tau;
    out.value = logsumexp(torch::cat({n, face_sims / tau})) - logsumexp(n);
    out.skipped = false;
    return out;
}

ContrastTerm intra_face_loss(const std::vector<MaskRegionSplit>& splits, double tau) {
    std::vector<torch::Tensor> real, fake;
    torch::TensorOptions opts = torch::kFloat32;
    for (const auto& s : splits) {
        opts = s.face_pixels.options();
        (s.label == FaceLabel::Real ? real : fake).push_back(region_sim(s.face_pixels, s.background_pixels));
    }
    auto stack = [&](const std::vector<torch::Tensor>& v) {
        return v.empty() ? torch::zeros({0}, opts) : torch::stack(v);
    };
    return intra_face_loss_from_sims(stack(real), stack(fake), tau);
}

ContrastTerm inter_face_loss(const std::vector<MaskRegionSplit>& splits, double tau, int pair_cap, uint64_t seed) {
    std::vector<const MaskRegionSplit*> real, fake;
    for (const auto& s : splits) (s.label == FaceLabel::Real ? real : fake).push_back(&s);
    std::vector<std::pair<size_t, size_t>> pairs;
    for (size_t r = 0; r < real.size(); ++r)
        for (size_t f = 0; f < fake.size(); ++f) pairs.emplace_back(r, f);
    if (pair_cap > 0 && pairs.size() > size_t(pair_cap)) {
        std::mt19937_64 rng(seed);
        for (size_t i = 0; i < size_t(pair_cap); ++i) {
            std::uniform_int_distribution<size_t> pick(i, pairs.size() - 1);
            std::swap(pairs[i], pairs[pick(rng)]);
        }
        pairs.resize(size_t(pair_cap));
    }
    if (pairs.empty()) {
        const auto opts = splits.empty() ? torch::TensorOptions(torch::kFloat32) : splits[0].face_pixels.options();
        return ContrastTerm{torch::zeros({}, opts), true};
    }
    std::vector<torch::Tensor> neg, pos;
    for (const auto& [r, f] : pairs) {
        neg.push_back(region_sim(real[r]->background_pixels, fake[f]->background_pixels));
        pos.push_back(region_sim(real[r]->face_pixels, fake[f]->face_pixels));
    }
    return inter_face_loss_from_sims(torch::stack(neg), torch::stack(pos), tau);
}

}  // namespace comics
