#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace neureg {

/// Grid extents (W, H, D). Voxel (i, j, k) lives at i + W * (j + H * k).
struct Dims {
    std::size_t w = 0;
    std::size_t h = 0;
    std::size_t d = 0;

    std::size_t count() const { return w * h * d; }
    std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return i + w * (j + h * k); }
    std::size_t operator[](std::size_t axis) const { return axis == 0 ? w : (axis == 1 ? h : d); }
    bool operator==(const Dims&) const = default;
};

std::string to_string(const Dims& dims);

/// Dense scalar volume. Values are kept finite by every constructor and op.
class Volume3 {
public:
    Volume3() = default;
    explicit Volume3(Dims dims, double fill = 0.0);
    Volume3(Dims dims, std::vector<double> data);

    const Dims& dims() const { return dims_; }
    std::size_t size() const { return data_.size(); }
    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    double& at(std::size_t i, std::size_t j, std::size_t k) { return data_[dims_.index(i, j, k)]; }
    double at(std::size_t i, std::size_t j, std::size_t k) const { return data_[dims_.index(i, j, k)]; }

    /// (min, max) of the data.
    std::pair<double, double> value_range() const;

    bool operator==(const Volume3& other) const { return dims_ == other.dims_ && data_ == other.data_; }

private:
    Dims dims_;
    std::vector<double> data_;
};

/// Integer segmentation; 0 is background.
class LabelVolume {
public:
    LabelVolume() = default;
    explicit LabelVolume(Dims dims, std::uint16_t fill = 0);
    LabelVolume(Dims dims, std::vector<std::uint16_t> data);

    const Dims& dims() const { return dims_; }
    std::size_t size() const { return data_.size(); }
    const std::vector<std::uint16_t>& data() const { return data_; }

    std::uint16_t at(std::size_t i, std::size_t j, std::size_t k) const { return data_[dims_.index(i, j, k)]; }

    /// Sorted distinct labels present in the data.
    const std::vector<std::uint16_t>& label_set() const { return labels_; }

    bool operator==(const LabelVolume& other) const { return dims_ == other.dims_ && data_ == other.data_; }

private:
    Dims dims_;
    std::vector<std::uint16_t> data_;
    std::vector<std::uint16_t> labels_;
};

/// Three displacement channels (dx, dy, dz) in voxel units, channel-major.
struct DeformationField {
    Dims dims;
    std::vector<double> data;

    DeformationField() = default;
    explicit DeformationField(Dims d) : dims(d), data(3 * d.count(), 0.0) {}
    DeformationField(Dims d, std::vector<double> values);

    double* channel(std::size_t c) { return data.data() + c * dims.count(); }
    const double* channel(std::size_t c) const { return data.data() + c * dims.count(); }
};

enum class IoErrc {
    bad_magic,
    truncated_payload,
    unsupported_dtype,
    unwritable_path,
    unreadable_path,
    bad_header,
    non_finite,
};

const char* to_string(IoErrc code);

class IoError : public std::runtime_error {
public:
    IoError(IoErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    IoErrc code() const { return code_; }

private:
    IoErrc code_;
};

/// Raw container dtype byte.
enum class RawDtype : std::uint8_t { f32 = 1, f64 = 2, u16_labels = 3, field_f32 = 4 };

using RawObject = std::variant<Volume3, LabelVolume, DeformationField>;

RawObject load_raw(const std::filesystem::path& path);
Volume3 load_volume(const std::filesystem::path& path);
LabelVolume load_labels(const std::filesystem::path& path);
DeformationField load_field(const std::filesystem::path& path);

/// Writes a scalar volume. f64 reproduces the in-memory data bitwise; f32 is the compact form.
void save_raw(const Volume3& volume, const std::filesystem::path& path, RawDtype dtype = RawDtype::f64);
void save_raw(const LabelVolume& labels, const std::filesystem::path& path);
void save_raw(const DeformationField& field, const std::filesystem::path& path);

enum class NiftiErrc { bad_sizeof_hdr, unsupported_datatype, bad_dims, truncated };

class NiftiError : public std::runtime_error {
public:
    NiftiError(NiftiErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    NiftiErrc code() const { return code_; }

private:
    NiftiErrc code_;
};

/// Uncompressed single-file NIfTI-1 (uint8, int16, float32). Orientation is ignored.
Volume3 import_nifti1(const std::filesystem::path& path);

/// Centered sub-block; an odd remainder drops the extra voxel from the high side.
Volume3 crop_center(const Volume3& volume, Dims target);
LabelVolume crop_center(const LabelVolume& labels, Dims target);

/// Affine map onto [0, 1]; a constant volume maps to zeros.
Volume3 normalize_minmax(const Volume3& volume);

}  // namespace neureg
