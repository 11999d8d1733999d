#include "segclr/pairing.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace segclr {

void AugmentParams::validate() const {
    const double f[5] = {p_hflip, max_translate_frac, max_zoom_in_frac, max_brightness_frac,
                         max_jitter_frac};
    const char* names[5] = {"p_hflip", "max_translate_frac", "max_zoom_in_frac",
                            "max_brightness_frac", "max_jitter_frac"};
    for (int i = 0; i < 5; ++i)
        if (f[i] < 0 || f[i] > 1)
            throw std::invalid_argument(std::string("AugmentParams.") + names[i] +
                                        ": must be in [0,1]");
}

void SlicePairingParams::validate() const {
    if (sigma_um <= 0) throw std::invalid_argument("SlicePairingParams.sigma_um: must be positive");
    if (slice_spacing_um <= 0)
        throw std::invalid_argument("SlicePairingParams.slice_spacing_um: must be positive");
}

void PairBatch::validate() const {
    if (view_a.h != view_b.h || view_a.w != view_b.w || view_a.size() != view_b.size())
        throw std::invalid_argument("PairBatch: view shapes differ");
    for (int i = 0; i < view_a.size(); ++i)
        if (view_a.refs[i].volume_id != view_b.refs[i].volume_id)
            throw std::invalid_argument("PairBatch: views of element " + std::to_string(i) +
                                        " come from different volumes");
}

namespace {

void hflip(std::vector<double>& img, int h, int w) {
    for (int y = 0; y < h; ++y) {
        double* row = &img[std::size_t(y) * w];
        std::reverse(row, row + w);
    }
}

void translate(std::vector<double>& img, int h, int w, int dy, int dx) {
    if (dy == 0 && dx == 0) return;
    std::vector<double> out(img.size(), 0.0);
    for (int y = 0; y < h; ++y) {
        const int sy = y - dy;
        if (sy < 0 || sy >= h) continue;
        for (int x = 0; x < w; ++x) {
            const int sx = x - dx;
            if (sx < 0 || sx >= w) continue;
            out[std::size_t(y) * w + x] = img[std::size_t(sy) * w + sx];
        }
    }
    img = std::move(out);
}

// Crop [y0,y0+ch) x [x0,x0+cw) and resize back to h x w bilinearly.
void crop_resize(std::vector<double>& img, int h, int w, int y0, int x0, int ch, int cw) {
    if (ch == h && cw == w && y0 == 0 && x0 == 0) return;
    std::vector<double> out(std::size_t(h) * w);
    const double sy_scale = double(ch) / h;
    const double sx_scale = double(cw) / w;
    for (int ty = 0; ty < h; ++ty) {
        double sy = (double(ty) + 0.5) * sy_scale - 0.5;
        sy = std::clamp(sy, 0.0, double(ch - 1));
        const int iy0 = int(sy);
        const int iy1 = std::min(iy0 + 1, ch - 1);
        const double fy = sy - iy0;
        for (int tx = 0; tx < w; ++tx) {
            double sx = (double(tx) + 0.5) * sx_scale - 0.5;
            sx = std::clamp(sx, 0.0, double(cw - 1));
            const int ix0 = int(sx);
            const int ix1 = std::min(ix0 + 1, cw - 1);
            const double fx = sx - ix0;
            const double v00 = img[std::size_t(y0 + iy0) * w + (x0 + ix0)];
            const double v01 = img[std::size_t(y0 + iy0) * w + (x0 + ix1)];
            const double v10 = img[std::size_t(y0 + iy1) * w + (x0 + ix0)];
            const double v11 = img[std::size_t(y0 + iy1) * w + (x0 + ix1)];
            out[std::size_t(ty) * w + tx] =
                v00 * (1 - fy) * (1 - fx) + v01 * (1 - fy) * fx + v10 * fy * (1 - fx) + v11 * fy * fx;
        }
    }
    img = std::move(out);
}

}  // namespace

AugmentDraw draw_augment(int h, int w, const AugmentParams& params, RandomStream& rng) {
    params.validate();
    AugmentDraw d;
    d.crop_h = h;
    d.crop_w = w;

    if (params.p_hflip > 0) d.flip = rng.bernoulli(params.p_hflip);

    if (params.max_translate_frac > 0) {
        const int ty = int(std::floor(params.max_translate_frac * h));
        const int tx = int(std::floor(params.max_translate_frac * w));
        d.dy = ty > 0 ? int(rng.uniform_range(-ty, ty)) : 0;
        d.dx = tx > 0 ? int(rng.uniform_range(-tx, tx)) : 0;
    }

    if (params.max_zoom_in_frac > 0) {
        const double side = rng.uniform(1.0 - params.max_zoom_in_frac, 1.0);
        d.crop_h = std::max(1, int(std::lround(side * h)));
        d.crop_w = std::max(1, int(std::lround(side * w)));
        d.crop_y0 = (h - d.crop_h) > 0 ? int(rng.uniform_int(std::uint64_t(h - d.crop_h + 1))) : 0;
        d.crop_x0 = (w - d.crop_w) > 0 ? int(rng.uniform_int(std::uint64_t(w - d.crop_w + 1))) : 0;
    }

    // Color distortion on the replicated grayscale image: the three channels
    // share the brightness shift, get independent gain jitter, and are
    // averaged straight back, which collapses to one multiply-add.
    if (params.max_brightness_frac > 0)
        d.shift = rng.uniform(-params.max_brightness_frac, params.max_brightness_frac);
    if (params.max_jitter_frac > 0) {
        const double f0 = rng.uniform(1.0 - params.max_jitter_frac, 1.0 + params.max_jitter_frac);
        const double f1 = rng.uniform(1.0 - params.max_jitter_frac, 1.0 + params.max_jitter_frac);
        const double f2 = rng.uniform(1.0 - params.max_jitter_frac, 1.0 + params.max_jitter_frac);
        d.gain = (f0 + f1 + f2) / 3.0;
    }
    return d;
}

std::vector<double> apply_augment(const std::vector<double>& image, int h, int w,
                                  const AugmentDraw& d) {
    if (image.size() != std::size_t(h) * w)
        throw std::invalid_argument("apply_augment: image size does not match shape");
    std::vector<double> img = image;
    if (d.flip) hflip(img, h, w);
    translate(img, h, w, d.dy, d.dx);
    crop_resize(img, h, w, d.crop_y0, d.crop_x0, d.crop_h, d.crop_w);
    for (auto& v : img) v = std::clamp((v + d.shift) * d.gain, 0.0, 1.0);
    return img;
}

std::vector<std::uint8_t> apply_augment_mask(const std::vector<std::uint8_t>& mask, int h, int w,
                                             const AugmentDraw& d) {
    if (mask.size() != std::size_t(h) * w)
        throw std::invalid_argument("apply_augment_mask: mask size does not match shape");
    std::vector<std::uint8_t> m = mask;
    if (d.flip)
        for (int y = 0; y < h; ++y) {
            std::uint8_t* row = &m[std::size_t(y) * w];
            std::reverse(row, row + w);
        }
    if (d.dy != 0 || d.dx != 0) {
        std::vector<std::uint8_t> out(m.size(), 0);
        for (int y = 0; y < h; ++y) {
            const int sy = y - d.dy;
            if (sy < 0 || sy >= h) continue;
            for (int x = 0; x < w; ++x) {
                const int sx = x - d.dx;
                if (sx < 0 || sx >= w) continue;
                out[std::size_t(y) * w + x] = m[std::size_t(sy) * w + sx];
            }
        }
        m = std::move(out);
    }
    if (d.crop_h != h || d.crop_w != w || d.crop_y0 != 0 || d.crop_x0 != 0) {
        std::vector<std::uint8_t> out(std::size_t(h) * w);
        const double sy_scale = double(d.crop_h) / h;
        const double sx_scale = double(d.crop_w) / w;
        for (int ty = 0; ty < h; ++ty) {
            const int sy = std::clamp(int(std::llround((double(ty) + 0.5) * sy_scale - 0.5)), 0,
                                      d.crop_h - 1);
            for (int tx = 0; tx < w; ++tx) {
                const int sx = std::clamp(int(std::llround((double(tx) + 0.5) * sx_scale - 0.5)), 0,
                                          d.crop_w - 1);
                out[std::size_t(ty) * w + tx] =
                    m[std::size_t(d.crop_y0 + sy) * w + (d.crop_x0 + sx)];
            }
        }
        m = std::move(out);
    }
    return m;
}

std::vector<double> augment(const std::vector<double>& image, int h, int w,
                            const AugmentParams& params, RandomStream& rng) {
    if (image.size() != std::size_t(h) * w)
        throw std::invalid_argument("augment: image size does not match shape");
    return apply_augment(image, h, w, draw_augment(h, w, params, rng));
}

std::pair<std::vector<double>, std::vector<double>> pair_augmentation(
    const std::vector<double>& image, int h, int w, const AugmentParams& params,
    RandomStream& rng) {
    auto a = augment(image, h, w, params, rng);
    auto b = augment(image, h, w, params, rng);
    return {std::move(a), std::move(b)};
}

int sample_slice_offset(const SlicePairingParams& params, RandomStream& rng) {
    params.validate();
    const double stddev = params.sigma_um / params.slice_spacing_um;
    return int(std::llround(rng.gaussian(0.0, stddev)));
}

int sample_slice_index(int b, const SlicePairingParams& params, int n_slices, RandomStream& rng) {
    if (b < 0 || b >= n_slices)
        throw std::invalid_argument("sample_slice_index: anchor index out of range");
    const int idx = b + sample_slice_offset(params, rng);
    return std::clamp(idx, 0, n_slices - 1);
}

namespace {

std::vector<double> slice_to_double(const Volume& v, int s) {
    const float* p = v.slice(s);
    return std::vector<double>(p, p + v.plane());
}

}  // namespace

std::pair<std::vector<double>, int> pair_slice(const Volume& volume, int b,
                                               const SlicePairingParams& params,
                                               RandomStream& rng,
                                               std::vector<double>* view_a_out) {
    if (b < 0 || b >= volume.n_slices)
        throw std::invalid_argument("pair_slice: slice index out of range");
    const int b2 = sample_slice_index(b, params, volume.n_slices, rng);
    if (view_a_out) *view_a_out = slice_to_double(volume, b);
    return {slice_to_double(volume, b2), b2};
}

PairStrategy pair_strategy_from_string(const std::string& s) {
    if (s == "a") return PairStrategy::augmentation;
    if (s == "s") return PairStrategy::slice;
    if (s == "s+a") return PairStrategy::slice_aug;
    throw std::invalid_argument("unknown pair strategy '" + s + "' (expected a, s, or s+a)");
}

std::string pair_strategy_name(PairStrategy p) {
    switch (p) {
        case PairStrategy::augmentation: return "a";
        case PairStrategy::slice: return "s";
        default: return "s+a";
    }
}

PairBatch make_pair_batch(const std::vector<const Volume*>& volumes,
                          const std::vector<std::pair<int, int>>& picks, PairStrategy strategy,
                          const AugmentParams& aug, const SlicePairingParams& slice_params,
                          RandomStream& rng) {
    if (volumes.empty() || picks.empty())
        throw std::invalid_argument("make_pair_batch: empty input");
    PairBatch batch;
    batch.view_a.h = batch.view_b.h = volumes[0]->height;
    batch.view_a.w = batch.view_b.w = volumes[0]->width;
    for (const auto& [vi, s] : picks) {
        const Volume& vol = *volumes.at(std::size_t(vi));
        if (vol.height != batch.view_a.h || vol.width != batch.view_a.w)
            throw std::invalid_argument("make_pair_batch: mixed slice shapes");
        std::vector<double> a, b;
        int slice_b = s;
        switch (strategy) {
            case PairStrategy::augmentation: {
                const auto src = slice_to_double(vol, s);
                std::tie(a, b) = pair_augmentation(src, vol.height, vol.width, aug, rng);
                break;
            }
            case PairStrategy::slice: {
                std::tie(b, slice_b) = pair_slice(vol, s, slice_params, rng, &a);
                break;
            }
            case PairStrategy::slice_aug: {
                std::tie(b, slice_b) = pair_slice(vol, s, slice_params, rng, &a);
                a = augment(a, vol.height, vol.width, aug, rng);
                b = augment(b, vol.height, vol.width, aug, rng);
                break;
            }
        }
        batch.view_a.images.insert(batch.view_a.images.end(), a.begin(), a.end());
        batch.view_b.images.insert(batch.view_b.images.end(), b.begin(), b.end());
        batch.view_a.refs.push_back({vol.volume_id, s});
        batch.view_b.refs.push_back({vol.volume_id, slice_b});
        batch.view_a.domain_ids.push_back(vol.domain_id);
        batch.view_b.domain_ids.push_back(vol.domain_id);
    }
    batch.validate();
    return batch;
}

}  // namespace segclr
