// pairing.hpp - positive-pair generation for contrastive training.
//
// Three strategies: augmentation-based views of one slice, nearby-slice
// views drawn by a Gaussian over slice indices, and their composition.

#pragma once

#include <string>
#include <vector>

#include "segclr/random.hpp"
#include "segclr/synthdata.hpp"

namespace segclr {

struct AugmentParams {
    double p_hflip = 0.5;
    double max_translate_frac = 0.25;
    double max_zoom_in_frac = 0.5;
    double max_brightness_frac = 0.6;
    double max_jitter_frac = 0.2;

    void validate() const;  // all fields in [0,1]
    bool is_identity() const {
        return p_hflip == 0 && max_translate_frac == 0 && max_zoom_in_frac == 0 &&
               max_brightness_frac == 0 && max_jitter_frac == 0;
    }
};

struct SlicePairingParams {
    double sigma_um = 250.0;
    double slice_spacing_um = 111.0;

    void validate() const;  // both strictly positive
};

struct SliceRef {
    std::string volume_id;
    int slice_index = -1;
};

struct SliceBatch {
    int h = 0, w = 0;
    std::vector<double> images;  // [N][h][w]
    std::vector<SliceRef> refs;
    std::vector<std::string> domain_ids;
    int size() const { return int(refs.size()); }
};

struct PairBatch {
    SliceBatch view_a, view_b;
    void validate() const;  // equal shapes, matching provenance
};

// One sampled augmentation: flip, integer translation, zoom-in crop window,
// and the grayscale color distortion (brightness shift plus the averaged
// per-channel jitter gain).
struct AugmentDraw {
    bool flip = false;
    int dy = 0, dx = 0;
    int crop_y0 = 0, crop_x0 = 0, crop_h = 0, crop_w = 0;
    double shift = 0.0, gain = 1.0;
};

AugmentDraw draw_augment(int h, int w, const AugmentParams& params, RandomStream& rng);
std::vector<double> apply_augment(const std::vector<double>& image, int h, int w,
                                  const AugmentDraw& draw);
// Geometric part only, nearest-neighbour, stays binary. Used when supervised
// inputs are augmented together with their label maps.
std::vector<std::uint8_t> apply_augment_mask(const std::vector<std::uint8_t>& mask, int h, int w,
                                             const AugmentDraw& draw);

// One 2D image in [0,1] -> augmented image in [0,1], same shape. Applies, in
// order: horizontal flip, integer translation with zero fill, zoom-in by
// crop-and-resize, and grayscale color distortion (brightness shift plus
// per-channel jitter of the replicated image, averaged back).
std::vector<double> augment(const std::vector<double>& image, int h, int w,
                            const AugmentParams& params, RandomStream& rng);

// Two independent augmented views of the same slice.
std::pair<std::vector<double>, std::vector<double>> pair_augmentation(
    const std::vector<double>& image, int h, int w, const AugmentParams& params,
    RandomStream& rng);

// Gaussian-perturbed slice index, rounded and clamped to [0, n_slices).
int sample_slice_offset(const SlicePairingParams& params, RandomStream& rng);
int sample_slice_index(int b, const SlicePairingParams& params, int n_slices, RandomStream& rng);

// view a = slice b unchanged; view b = a nearby slice of the same volume.
std::pair<std::vector<double>, int> pair_slice(const Volume& volume, int b,
                                               const SlicePairingParams& params,
                                               RandomStream& rng,
                                               std::vector<double>* view_a_out);

enum class PairStrategy { augmentation, slice, slice_aug };
PairStrategy pair_strategy_from_string(const std::string& s);
std::string pair_strategy_name(PairStrategy p);

// Assemble a full pair batch from (volume, slice) picks using one strategy.
PairBatch make_pair_batch(const std::vector<const Volume*>& volumes,
                          const std::vector<std::pair<int, int>>& picks,  // (volume idx, slice)
                          PairStrategy strategy, const AugmentParams& aug,
                          const SlicePairingParams& slice_params, RandomStream& rng);

}  // namespace segclr
