// synthdata.hpp - multi-domain synthetic volumetric phantoms.
//
// Volumes are stacks of 2D slices: smooth horizontal intensity bands plus
// ellipsoidal lesions, one lesion style per class. Content (geometry,
// labels) and appearance (blur/gain/noise) draw from independent random
// streams, so changing appearance parameters never changes the labels.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "segclr/random.hpp"

namespace segclr {

// Fixed framework-wide class vocabulary; per-domain class sets are ordered
// subsets of this list.
const std::vector<std::string>& global_class_list();
int global_class_index(const std::string& name);  // -1 when unknown

struct AppearanceParams {
    double noise_std = 0.0;      // stddev as fraction of dynamic range
    double contrast_gain = 1.0;  // multiplier
    double blur_sigma = 0.0;     // px
};

struct ContentParams {
    double lesion_density = 0.0;  // expected lesions per volume (all classes)
    double lesion_scale = 6.0;    // px, nominal in-plane radius
};

struct DomainSpec {
    std::string domain_id;
    int n_volumes = 0;
    int slices_per_volume = 0;
    int slice_h = 0, slice_w = 0;
    double res_h_um = 10.0, res_w_um = 4.0;  // µm per pixel
    double slice_spacing_um = 111.0;
    std::vector<std::string> class_set;
    AppearanceParams appearance;
    ContentParams content;
    int labeled_slices_per_volume = -1;  // -1 => every slice is annotated

    void validate() const;  // throws std::invalid_argument naming the field
};

struct Volume {
    int n_slices = 0, height = 0, width = 0;
    std::vector<float> voxels;         // [slice][h][w], values in [0,1]
    std::vector<std::uint8_t> labels;  // [slice][class][h][w]; empty if absent
    std::vector<std::string> class_names;  // order of the label class axis
    std::vector<int> labeled_slice_indices;
    double res_h_um = 0, res_w_um = 0, slice_spacing_um = 0;
    std::string domain_id, volume_id;

    bool has_labels() const { return !labels.empty(); }
    std::size_t plane() const { return std::size_t(height) * width; }
    const float* slice(int s) const { return &voxels[std::size_t(s) * plane()]; }
    const std::uint8_t* label_mask(int s, int c) const {
        return &labels[(std::size_t(s) * class_names.size() + c) * plane()];
    }
    void validate() const;
};

bool volumes_equal(const Volume& a, const Volume& b);

struct DatasetSplit {
    std::vector<Volume> train, val, test;
};

// ---- operations -------------------------------------------------------------

std::vector<Volume> generate_domain(const DomainSpec& spec, std::uint64_t seed);

struct Slice2D {
    int h = 0, w = 0;
    std::vector<double> v;
};

// Bilinear image resample; nearest-neighbour for the binary masks.
std::pair<Slice2D, std::vector<std::vector<std::uint8_t>>> resample_slice(
    const Slice2D& image, const std::vector<std::vector<std::uint8_t>>& masks,
    int target_h, int target_w);

DatasetSplit split_dataset(std::vector<Volume> volumes, double f_train, double f_val,
                           double f_test, std::uint64_t seed);

std::vector<Volume> subsample_unlabeled(const std::vector<Volume>& volumes, double fraction,
                                        std::uint64_t seed);

void save_dataset(const DatasetSplit& split, const std::string& directory);
DatasetSplit load_dataset(const std::string& directory);

}  // namespace segclr
