#include "segclr/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace segclr {

namespace fs = std::filesystem;

const std::vector<std::string>& global_class_list() {
    static const std::vector<std::string> classes = {"blob_dark", "blob_bright", "streak_dark",
                                                     "streak_bright"};
    return classes;
}

int global_class_index(const std::string& name) {
    const auto& g = global_class_list();
    for (std::size_t i = 0; i < g.size(); ++i)
        if (g[i] == name) return int(i);
    return -1;
}

void DomainSpec::validate() const {
    if (domain_id.empty()) throw std::invalid_argument("DomainSpec.domain_id: must be non-empty");
    if (n_volumes <= 0) throw std::invalid_argument("DomainSpec.n_volumes: must be positive");
    if (slices_per_volume <= 0)
        throw std::invalid_argument("DomainSpec.slices_per_volume: must be positive");
    if (slice_h < 16 || slice_w < 16)
        throw std::invalid_argument("DomainSpec.slice_shape: dims must be >= 16");
    if (res_h_um <= 0 || res_w_um <= 0)
        throw std::invalid_argument("DomainSpec.in_plane_resolution: must be positive");
    if (slice_spacing_um <= 0)
        throw std::invalid_argument("DomainSpec.slice_spacing: must be positive");
    if (class_set.empty()) throw std::invalid_argument("DomainSpec.class_set: must be non-empty");
    for (const auto& c : class_set)
        if (global_class_index(c) < 0)
            throw std::invalid_argument("DomainSpec.class_set: unknown class '" + c + "'");
    if (appearance.noise_std < 0)
        throw std::invalid_argument("DomainSpec.appearance.noise_std: must be >= 0");
    if (appearance.contrast_gain <= 0)
        throw std::invalid_argument("DomainSpec.appearance.contrast_gain: must be positive");
    if (appearance.blur_sigma < 0)
        throw std::invalid_argument("DomainSpec.appearance.blur_sigma: must be >= 0");
    if (content.lesion_density < 0)
        throw std::invalid_argument("DomainSpec.content.lesion_density: must be >= 0");
    if (content.lesion_scale <= 0)
        throw std::invalid_argument("DomainSpec.content.lesion_scale: must be positive");
    if (labeled_slices_per_volume == 0 || labeled_slices_per_volume < -1 ||
        labeled_slices_per_volume > slices_per_volume)
        throw std::invalid_argument(
            "DomainSpec.labeled_slices_per_volume: must be -1 (all) or in [1, slices_per_volume]");
}

void Volume::validate() const {
    if (n_slices <= 0 || height <= 0 || width <= 0)
        throw std::invalid_argument("Volume: non-positive shape");
    if (voxels.size() != std::size_t(n_slices) * plane())
        throw std::invalid_argument("Volume: voxel buffer does not match shape");
    if (res_h_um <= 0 || res_w_um <= 0 || slice_spacing_um <= 0)
        throw std::invalid_argument("Volume: resolution must be strictly positive");
    if (has_labels()) {
        if (class_names.empty()) throw std::invalid_argument("Volume: labels without class names");
        if (labels.size() != std::size_t(n_slices) * class_names.size() * plane())
            throw std::invalid_argument("Volume: label buffer does not match shape");
        for (std::uint8_t v : labels)
            if (v > 1) throw std::invalid_argument("Volume: labels must be binary");
    }
    for (int s : labeled_slice_indices)
        if (s < 0 || s >= n_slices)
            throw std::invalid_argument("Volume: labeled slice index out of range");
}

bool volumes_equal(const Volume& a, const Volume& b) {
    return a.n_slices == b.n_slices && a.height == b.height && a.width == b.width &&
           a.voxels == b.voxels && a.labels == b.labels && a.class_names == b.class_names &&
           a.labeled_slice_indices == b.labeled_slice_indices && a.res_h_um == b.res_h_um &&
           a.res_w_um == b.res_w_um && a.slice_spacing_um == b.slice_spacing_um &&
           a.domain_id == b.domain_id && a.volume_id == b.volume_id;
}

// ---- generation -------------------------------------------------------------

namespace {

struct LesionStyle {
    bool dark;        // multiplicative darkening vs additive brightening
    double aspect_y;  // vertical radius factor
    double aspect_x;  // horizontal radius factor
};

LesionStyle lesion_style(const std::string& cls) {
    if (cls == "blob_dark") return {true, 1.0, 1.0};
    if (cls == "blob_bright") return {false, 1.0, 1.0};
    if (cls == "streak_dark") return {true, 0.45, 2.2};
    return {false, 0.45, 2.2};  // streak_bright
}

int sample_poisson(RandomStream& rng, double lambda) {
    if (lambda <= 0) return 0;
    // Knuth's method; fine for the small densities used here.
    const double limit = std::exp(-lambda);
    int k = 0;
    double p = 1.0;
    do {
        ++k;
        p *= rng.u01();
    } while (p > limit);
    return k - 1;
}

double smoothstep(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

struct BandProfile {
    double top, bottom;                 // tissue extent, fraction of height
    std::vector<double> boundaries;     // interior boundaries, fractions
    std::vector<double> intensities;    // per band
    double background;

    double value(double yy) const {
        const double wt = 0.02;  // transition half width (fraction of height)
        if (yy < top - wt || yy > bottom + wt) return background;
        // blend in from background at the tissue borders
        double v;
        std::size_t band = 0;
        while (band < boundaries.size() && yy > boundaries[band]) ++band;
        v = intensities[band];
        if (band > 0) {
            const double b = boundaries[band - 1];
            if (yy - b < wt)
                v = intensities[band - 1] +
                    (intensities[band] - intensities[band - 1]) * smoothstep((yy - b) / wt * 0.5 + 0.5);
        }
        if (band < boundaries.size()) {
            const double b = boundaries[band];
            if (b - yy < wt)
                v = intensities[band] +
                    (intensities[band + 1] - intensities[band]) * smoothstep((yy - b) / wt * 0.5 + 0.5);
        }
        const double edge = smoothstep((yy - (top - wt)) / (2 * wt)) *
                            smoothstep(((bottom + wt) - yy) / (2 * wt));
        return background + (v - background) * edge;
    }
};

struct Lesion {
    int cls;  // index into spec.class_set
    double cz, cy, cx;
    double rz, ry, rx;
    LesionStyle style;
};

void gaussian_blur_slice(std::vector<double>& img, int h, int w, double sigma) {
    if (sigma <= 0) return;
    const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        ksum += kernel[i + radius];
    }
    for (auto& k : kernel) k /= ksum;
    std::vector<double> tmp(img.size());
    // horizontal
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int xx = std::clamp(x + i, 0, w - 1);
                acc += kernel[i + radius] * img[std::size_t(y) * w + xx];
            }
            tmp[std::size_t(y) * w + x] = acc;
        }
    // vertical
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int yy = std::clamp(y + i, 0, h - 1);
                acc += kernel[i + radius] * tmp[std::size_t(yy) * w + x];
            }
            img[std::size_t(y) * w + x] = acc;
        }
}

std::vector<int> pick_labeled_slices(int n_slices, int k) {
    if (k < 0 || k >= n_slices) {
        std::vector<int> all(n_slices);
        std::iota(all.begin(), all.end(), 0);
        return all;
    }
    std::vector<int> out;
    out.reserve(k);
    for (int i = 0; i < k; ++i) {
        int idx = int((double(i) + 0.5) * n_slices / k);
        idx = std::clamp(idx, 0, n_slices - 1);
        if (out.empty() || idx > out.back())
            out.push_back(idx);
        else
            out.push_back(std::min(out.back() + 1, n_slices - 1));
    }
    return out;
}

}  // namespace

std::vector<Volume> generate_domain(const DomainSpec& spec, std::uint64_t seed) {
    spec.validate();
    const int H = spec.slice_h, W = spec.slice_w, S = spec.slices_per_volume;
    const int C = int(spec.class_set.size());
    std::vector<Volume> volumes;
    volumes.reserve(spec.n_volumes);

    for (int v = 0; v < spec.n_volumes; ++v) {
        const std::uint64_t vol_seed =
            splitmix64(splitmix64(seed) ^ (std::uint64_t(v) * 0x9E3779B97F4A7C15ULL) ^
                       fnv1a64(spec.domain_id));
        RandomStream content = RandomStream::derive(vol_seed, "content");
        RandomStream appearance = RandomStream::derive(vol_seed, "appearance");

        // layered background, constant per volume with a smooth per-slice drift
        BandProfile bands;
        bands.background = 0.05;
        bands.top = content.uniform(0.10, 0.16);
        bands.bottom = content.uniform(0.84, 0.90);
        const int n_bands = 4 + int(content.uniform_int(3));
        std::vector<double> cuts;
        for (int i = 1; i < n_bands; ++i)
            cuts.push_back(bands.top + (bands.bottom - bands.top) *
                                           (double(i) / n_bands + content.uniform(-0.35, 0.35) / n_bands));
        std::sort(cuts.begin(), cuts.end());
        bands.boundaries = cuts;
        for (int i = 0; i < n_bands; ++i) {
            // alternate light/dark so adjacent bands contrast
            const double base = (i % 2 == 0) ? content.uniform(0.45, 0.70) : content.uniform(0.18, 0.38);
            bands.intensities.push_back(base);
        }
        const double drift_amp = content.uniform(0.0, 2.0);  // px
        const double drift_phase = content.uniform(0.0, 6.283185307179586);

        // lesions
        const int n_lesions = sample_poisson(content, spec.content.lesion_density);
        std::vector<Lesion> lesions;
        lesions.reserve(n_lesions);
        for (int i = 0; i < n_lesions; ++i) {
            Lesion l;
            l.cls = int(content.uniform_int(std::uint64_t(C)));
            l.style = lesion_style(spec.class_set[l.cls]);
            l.cz = content.uniform(0.0, double(S - 1));
            l.cy = content.uniform(bands.top + 0.08, bands.bottom - 0.08) * H;
            l.cx = content.uniform(0.10, 0.90) * W;
            const double scale = spec.content.lesion_scale * content.uniform(0.7, 1.4);
            l.ry = std::max(1.5, scale * l.style.aspect_y);
            l.rx = std::max(1.5, scale * l.style.aspect_x);
            l.rz = content.uniform(0.8, 2.2);
            lesions.push_back(l);
        }

        Volume vol;
        vol.n_slices = S;
        vol.height = H;
        vol.width = W;
        vol.res_h_um = spec.res_h_um;
        vol.res_w_um = spec.res_w_um;
        vol.slice_spacing_um = spec.slice_spacing_um;
        vol.domain_id = spec.domain_id;
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "%s_%03d", "vol", v);
        vol.volume_id = spec.domain_id + "_" + idbuf;
        vol.class_names = spec.class_set;
        vol.voxels.resize(std::size_t(S) * H * W);
        vol.labels.assign(std::size_t(S) * C * H * W, 0);
        vol.labeled_slice_indices = pick_labeled_slices(S, spec.labeled_slices_per_volume);

        std::vector<double> img(std::size_t(H) * W);
        for (int s = 0; s < S; ++s) {
            const double drift =
                drift_amp * std::sin(drift_phase + 6.283185307179586 * double(s) / double(S));
            for (int y = 0; y < H; ++y) {
                const double yy = (double(y) + drift) / double(H);
                const double bv = bands.value(yy);
                for (int x = 0; x < W; ++x) img[std::size_t(y) * W + x] = bv;
            }
            // content: ellipsoidal lesions + matching labels
            for (const auto& l : lesions) {
                const double dz = (double(s) - l.cz) / l.rz;
                if (dz * dz > 1.0) continue;
                const double shrink = std::sqrt(1.0 - dz * dz);  // in-plane radius at this slice
                const double ry = l.ry * shrink, rx = l.rx * shrink;
                if (ry < 0.5 || rx < 0.5) continue;
                const int y0 = std::max(0, int(std::floor(l.cy - ry)));
                const int y1 = std::min(H - 1, int(std::ceil(l.cy + ry)));
                const int x0 = std::max(0, int(std::floor(l.cx - rx)));
                const int x1 = std::min(W - 1, int(std::ceil(l.cx + rx)));
                std::uint8_t* mask = &vol.labels[(std::size_t(s) * C + l.cls) * H * W];
                for (int y = y0; y <= y1; ++y) {
                    const double fy = (double(y) - l.cy) / ry;
                    for (int x = x0; x <= x1; ++x) {
                        const double fx = (double(x) - l.cx) / rx;
                        if (fy * fy + fx * fx > 1.0) continue;
                        double& px = img[std::size_t(y) * W + x];
                        px = l.style.dark ? px * 0.22 : std::min(1.0, px + 0.5);
                        mask[std::size_t(y) * W + x] = 1;
                    }
                }
            }
            // appearance, applied after content so labels never depend on it
            gaussian_blur_slice(img, H, W, spec.appearance.blur_sigma);
            float* out = &vol.voxels[std::size_t(s) * H * W];
            const bool noisy = spec.appearance.noise_std > 0;
            for (std::size_t i = 0; i < img.size(); ++i) {
                double px = img[i] * spec.appearance.contrast_gain;
                if (noisy) px += appearance.gaussian(0.0, spec.appearance.noise_std);
                out[i] = float(std::clamp(px, 0.0, 1.0));
            }
        }
        volumes.push_back(std::move(vol));
    }
    return volumes;
}

// ---- resampling ---------------------------------------------------------------

std::pair<Slice2D, std::vector<std::vector<std::uint8_t>>> resample_slice(
    const Slice2D& image, const std::vector<std::vector<std::uint8_t>>& masks, int target_h,
    int target_w) {
    if (image.h <= 0 || image.w <= 0 || image.v.size() != std::size_t(image.h) * image.w)
        throw std::invalid_argument("resample_slice: empty or inconsistent image");
    if (target_h < 1 || target_w < 1)
        throw std::invalid_argument("resample_slice: target dims must be >= 1");
    for (const auto& m : masks)
        if (m.size() != image.v.size())
            throw std::invalid_argument("resample_slice: mask shape mismatch");

    Slice2D out;
    out.h = target_h;
    out.w = target_w;
    out.v.resize(std::size_t(target_h) * target_w);
    const double sy_scale = double(image.h) / target_h;
    const double sx_scale = double(image.w) / target_w;

    for (int ty = 0; ty < target_h; ++ty) {
        double sy = (double(ty) + 0.5) * sy_scale - 0.5;
        sy = std::clamp(sy, 0.0, double(image.h - 1));
        const int y0 = int(sy);
        const int y1 = std::min(y0 + 1, image.h - 1);
        const double fy = sy - y0;
        for (int tx = 0; tx < target_w; ++tx) {
            double sx = (double(tx) + 0.5) * sx_scale - 0.5;
            sx = std::clamp(sx, 0.0, double(image.w - 1));
            const int x0 = int(sx);
            const int x1 = std::min(x0 + 1, image.w - 1);
            const double fx = sx - x0;
            const double v00 = image.v[std::size_t(y0) * image.w + x0];
            const double v01 = image.v[std::size_t(y0) * image.w + x1];
            const double v10 = image.v[std::size_t(y1) * image.w + x0];
            const double v11 = image.v[std::size_t(y1) * image.w + x1];
            out.v[std::size_t(ty) * target_w + tx] =
                v00 * (1 - fy) * (1 - fx) + v01 * (1 - fy) * fx + v10 * fy * (1 - fx) +
                v11 * fy * fx;
        }
    }

    std::vector<std::vector<std::uint8_t>> out_masks;
    out_masks.reserve(masks.size());
    for (const auto& m : masks) {
        std::vector<std::uint8_t> rm(std::size_t(target_h) * target_w);
        for (int ty = 0; ty < target_h; ++ty) {
            const int sy =
                std::clamp(int(std::llround((double(ty) + 0.5) * sy_scale - 0.5)), 0, image.h - 1);
            for (int tx = 0; tx < target_w; ++tx) {
                const int sx = std::clamp(int(std::llround((double(tx) + 0.5) * sx_scale - 0.5)), 0,
                                          image.w - 1);
                rm[std::size_t(ty) * target_w + tx] = m[std::size_t(sy) * image.w + sx];
            }
        }
        out_masks.push_back(std::move(rm));
    }
    return {std::move(out), std::move(out_masks)};
}

// ---- splitting ----------------------------------------------------------------

DatasetSplit split_dataset(std::vector<Volume> volumes, double f_train, double f_val,
                           double f_test, std::uint64_t seed) {
    const double f[3] = {f_train, f_val, f_test};
    double sum = 0.0;
    int nonzero = 0;
    for (double x : f) {
        if (x < 0) throw std::invalid_argument("split_dataset: fractions must be non-negative");
        sum += x;
        if (x > 0) ++nonzero;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("split_dataset: fractions must sum to 1");
    const int n = int(volumes.size());
    if (n < nonzero)
        throw std::invalid_argument("split_dataset: fewer volumes than non-zero splits");

    // largest-remainder apportionment, ties resolved train > val > test
    int counts[3];
    double frac[3];
    int assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double t = f[i] * n;
        counts[i] = int(std::floor(t + 1e-9));
        frac[i] = t - counts[i];
        assigned += counts[i];
    }
    int order[3] = {0, 1, 2};
    std::sort(order, order + 3, [&](int a, int b) {
        if (frac[a] != frac[b]) return frac[a] > frac[b];
        return a < b;
    });
    for (int k = 0; assigned < n; ++k) {
        ++counts[order[k % 3]];
        ++assigned;
    }

    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    RandomStream rng = RandomStream::derive(seed, "split");
    rng.shuffle(idx);

    DatasetSplit split;
    int pos = 0;
    auto take = [&](int count) {
        std::vector<int> sel(idx.begin() + pos, idx.begin() + pos + count);
        pos += count;
        std::sort(sel.begin(), sel.end());
        std::vector<Volume> out;
        out.reserve(count);
        for (int i : sel) out.push_back(volumes[i]);
        return out;
    };
    split.train = take(counts[0]);
    split.val = take(counts[1]);
    split.test = take(counts[2]);
    return split;
}

std::vector<Volume> subsample_unlabeled(const std::vector<Volume>& volumes, double fraction,
                                        std::uint64_t seed) {
    if (fraction < 0.0 || fraction > 1.0)
        throw std::invalid_argument("subsample_unlabeled: fraction must be in [0,1]");
    const std::size_t n = volumes.size();
    const std::size_t k = std::size_t(std::ceil(fraction * double(n) - 1e-12));
    if (k == 0) return {};
    if (k >= n) return volumes;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t(0));
    RandomStream rng = RandomStream::derive(seed, "subsample");
    rng.shuffle(idx);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    std::vector<Volume> out;
    out.reserve(k);
    for (std::size_t i : idx) out.push_back(volumes[i]);
    return out;
}

// ---- persistence ----------------------------------------------------------------

namespace {

std::string join_csv(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += v[i];
    }
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_volume_record(std::ostream& os, const Volume& v, const std::string& split_name) {
    os << "volume " << v.volume_id << "\n";
    os << "split " << split_name << "\n";
    os << "domain " << v.domain_id << "\n";
    os << "shape " << v.n_slices << " " << v.height << " " << v.width << "\n";
    os << "resolution_um " << fmt_double(v.res_h_um) << " " << fmt_double(v.res_w_um) << " "
       << fmt_double(v.slice_spacing_um) << "\n";
    os << "classes " << (v.class_names.empty() ? "-" : join_csv(v.class_names)) << "\n";
    os << "labeled_slices "
       << (v.labeled_slice_indices.empty() ? "-" : join_ints(v.labeled_slice_indices)) << "\n";
    os << "img vol_" << v.volume_id << ".img\n";
    if (v.has_labels()) os << "lbl vol_" << v.volume_id << ".lbl\n";
    os << "end\n";
}

void write_raw(const fs::path& path, const void* data, std::size_t bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_dataset: cannot open " + path.string());
    f.write(static_cast<const char*>(data), std::streamsize(bytes));
    if (!f) throw std::runtime_error("save_dataset: failed writing " + path.string());
}

}  // namespace

void save_dataset(const DatasetSplit& split, const std::string& directory) {
    fs::create_directories(directory);
    const fs::path dir(directory);
    std::ofstream manifest(dir / "manifest.txt");
    if (!manifest) throw std::runtime_error("save_dataset: cannot write manifest in " + directory);
    const std::size_t total = split.train.size() + split.val.size() + split.test.size();
    manifest << "segclr-dataset 1\n";
    manifest << "volumes " << total << "\n";
    auto dump = [&](const std::vector<Volume>& vols, const char* name) {
        for (const auto& v : vols) {
            v.validate();
            write_volume_record(manifest, v, name);
            write_raw(dir / ("vol_" + v.volume_id + ".img"), v.voxels.data(),
                      v.voxels.size() * sizeof(float));
            if (v.has_labels())
                write_raw(dir / ("vol_" + v.volume_id + ".lbl"), v.labels.data(), v.labels.size());
        }
    };
    dump(split.train, "train");
    dump(split.val, "val");
    dump(split.test, "test");
    if (!manifest) throw std::runtime_error("save_dataset: failed writing manifest");
}

DatasetSplit load_dataset(const std::string& directory) {
    const fs::path dir(directory);
    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest)
        throw std::runtime_error("load_dataset: missing manifest.txt in " + directory);
    std::string line;
    if (!std::getline(manifest, line) || line != "segclr-dataset 1")
        throw std::runtime_error("load_dataset: bad manifest header in " + directory);
    if (!std::getline(manifest, line) || line.rfind("volumes ", 0) != 0)
        throw std::runtime_error("load_dataset: missing volume count");
    const std::size_t expected = std::stoul(line.substr(8));

    DatasetSplit split;
    std::size_t seen = 0;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        if (line.rfind("volume ", 0) != 0)
            throw std::runtime_error("load_dataset: expected 'volume', got '" + line + "'");
        Volume v;
        v.volume_id = line.substr(7);
        std::string split_name, img_file, lbl_file;
        while (std::getline(manifest, line) && line != "end") {
            std::istringstream is(line);
            std::string key;
            is >> key;
            if (key == "split") {
                is >> split_name;
            } else if (key == "domain") {
                is >> v.domain_id;
            } else if (key == "shape") {
                is >> v.n_slices >> v.height >> v.width;
            } else if (key == "resolution_um") {
                is >> v.res_h_um >> v.res_w_um >> v.slice_spacing_um;
            } else if (key == "classes") {
                std::string s;
                is >> s;
                if (s != "-") v.class_names = split_csv(s);
            } else if (key == "labeled_slices") {
                std::string s;
                is >> s;
                if (s != "-")
                    for (const auto& tok : split_csv(s)) v.labeled_slice_indices.push_back(std::stoi(tok));
            } else if (key == "img") {
                is >> img_file;
            } else if (key == "lbl") {
                is >> lbl_file;
            } else {
                throw std::runtime_error("load_dataset: unknown manifest key '" + key + "'");
            }
            if (is.fail())
                throw std::runtime_error("load_dataset: malformed manifest line '" + line + "'");
        }
        if (v.n_slices <= 0 || v.height <= 0 || v.width <= 0)
            throw std::runtime_error("load_dataset: volume " + v.volume_id + " has no shape");
        if (img_file.empty())
            throw std::runtime_error("load_dataset: volume " + v.volume_id + " has no img file");

        const std::size_t n_vox = std::size_t(v.n_slices) * v.height * v.width;
        {
            const fs::path p = dir / img_file;
            std::ifstream f(p, std::ios::binary);
            if (!f) throw std::runtime_error("load_dataset: missing " + p.string());
            f.seekg(0, std::ios::end);
            const std::size_t bytes = std::size_t(f.tellg());
            if (bytes != n_vox * sizeof(float))
                throw std::runtime_error("load_dataset: shape mismatch for " + p.string() +
                                         ": manifest expects " + std::to_string(n_vox * sizeof(float)) +
                                         " bytes, file has " + std::to_string(bytes));
            f.seekg(0);
            v.voxels.resize(n_vox);
            f.read(reinterpret_cast<char*>(v.voxels.data()), std::streamsize(bytes));
            if (!f) throw std::runtime_error("load_dataset: failed reading " + p.string());
        }
        if (!lbl_file.empty()) {
            if (v.class_names.empty())
                throw std::runtime_error("load_dataset: volume " + v.volume_id +
                                         " has labels but no classes");
            const std::size_t n_lbl = n_vox * v.class_names.size();
            const fs::path p = dir / lbl_file;
            std::ifstream f(p, std::ios::binary);
            if (!f) throw std::runtime_error("load_dataset: missing " + p.string());
            f.seekg(0, std::ios::end);
            const std::size_t bytes = std::size_t(f.tellg());
            if (bytes != n_lbl)
                throw std::runtime_error("load_dataset: shape mismatch for " + p.string() +
                                         ": manifest expects " + std::to_string(n_lbl) +
                                         " bytes, file has " + std::to_string(bytes));
            f.seekg(0);
            v.labels.resize(n_lbl);
            f.read(reinterpret_cast<char*>(v.labels.data()), std::streamsize(bytes));
            if (!f) throw std::runtime_error("load_dataset: failed reading " + p.string());
        }
        v.validate();
        ++seen;
        if (split_name == "train")
            split.train.push_back(std::move(v));
        else if (split_name == "val")
            split.val.push_back(std::move(v));
        else if (split_name == "test")
            split.test.push_back(std::move(v));
        else
            throw std::runtime_error("load_dataset: bad split '" + split_name + "' for volume " +
                                     v.volume_id);
    }
    if (seen != expected)
        throw std::runtime_error("load_dataset: manifest advertises " + std::to_string(expected) +
                                 " volumes, found " + std::to_string(seen));
    return split;
}

}  // namespace segclr
