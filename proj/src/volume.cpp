#include "neureg/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace neureg {

namespace {

static_assert(std::endian::native == std::endian::little, "raw container I/O assumes a little-endian host");

constexpr char kRawMagic[4] = {'N', 'R', 'V', '1'};
constexpr std::size_t kRawHeaderBytes = 20;

void require_finite(const std::vector<double>& data, const char* what) {
    for (double v : data) {
        if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite value");
    }
}

template <typename T>
void put(std::vector<char>& out, T value) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T get(const char* p) {
    T value;
    std::memcpy(&value, p, sizeof(T));
    return value;
}

std::vector<char> read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoErrc::unreadable_path, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(IoErrc::unwritable_path, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(IoErrc::unwritable_path, "write failed for " + path.string());
}

std::vector<char> raw_header(RawDtype dtype, const Dims& dims) {
    std::vector<char> out(kRawMagic, kRawMagic + 4);
    out.push_back(static_cast<char>(dtype));
    out.push_back(0);
    out.push_back(0);
    out.push_back(0);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(dims.w));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(dims.h));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(dims.d));
    return out;
}

std::size_t element_bytes(RawDtype dtype) {
    switch (dtype) {
        case RawDtype::f32: return 4;
        case RawDtype::f64: return 8;
        case RawDtype::u16_labels: return 2;
        case RawDtype::field_f32: return 12;
    }
    return 0;
}

Dims crop_origin(const Dims& from, const Dims& to) {
    if (to.w == 0 || to.h == 0 || to.d == 0 || to.w > from.w || to.h > from.h || to.d > from.d) {
        throw std::invalid_argument("crop_center: target " + to_string(to) + " exceeds " + to_string(from));
    }
    return {(from.w - to.w) / 2, (from.h - to.h) / 2, (from.d - to.d) / 2};
}

template <typename T>
std::vector<T> crop_data(const std::vector<T>& data, const Dims& from, const Dims& to) {
    const Dims o = crop_origin(from, to);
    std::vector<T> out(to.count());
    for (std::size_t k = 0; k < to.d; ++k)
        for (std::size_t j = 0; j < to.h; ++j)
            for (std::size_t i = 0; i < to.w; ++i)
                out[to.index(i, j, k)] = data[from.index(i + o.w, j + o.h, k + o.d)];
    return out;
}

}  // namespace

std::string to_string(const Dims& dims) {
    return std::to_string(dims.w) + "x" + std::to_string(dims.h) + "x" + std::to_string(dims.d);
}

const char* to_string(IoErrc code) {
    switch (code) {
        case IoErrc::bad_magic: return "bad_magic";
        case IoErrc::truncated_payload: return "truncated_payload";
        case IoErrc::unsupported_dtype: return "unsupported_dtype";
        case IoErrc::unwritable_path: return "unwritable_path";
        case IoErrc::unreadable_path: return "unreadable_path";
        case IoErrc::bad_header: return "bad_header";
        case IoErrc::non_finite: return "non_finite";
    }
    return "unknown";
}

Volume3::Volume3(Dims dims, double fill) : dims_(dims), data_(dims.count(), fill) {
    if (!std::isfinite(fill)) throw std::invalid_argument("Volume3: non-finite fill");
}

Volume3::Volume3(Dims dims, std::vector<double> data) : dims_(dims), data_(std::move(data)) {
    if (data_.size() != dims_.count()) {
        throw std::invalid_argument("Volume3: data length " + std::to_string(data_.size()) + " does not match " +
                                    to_string(dims_));
    }
    require_finite(data_, "Volume3");
}

std::pair<double, double> Volume3::value_range() const {
    if (data_.empty()) return {0.0, 0.0};
    auto [lo, hi] = std::minmax_element(data_.begin(), data_.end());
    return {*lo, *hi};
}

LabelVolume::LabelVolume(Dims dims, std::uint16_t fill) : LabelVolume(dims, std::vector<std::uint16_t>(dims.count(), fill)) {}

LabelVolume::LabelVolume(Dims dims, std::vector<std::uint16_t> data) : dims_(dims), data_(std::move(data)) {
    if (data_.size() != dims_.count()) throw std::invalid_argument("LabelVolume: data length does not match dims");
    std::vector<bool> seen(65536, false);
    for (auto v : data_) seen[v] = true;
    for (std::size_t v = 0; v < seen.size(); ++v)
        if (seen[v]) labels_.push_back(static_cast<std::uint16_t>(v));
}

DeformationField::DeformationField(Dims d, std::vector<double> values) : dims(d), data(std::move(values)) {
    if (data.size() != 3 * dims.count()) throw std::invalid_argument("DeformationField: data length does not match dims");
    require_finite(data, "DeformationField");
}

RawObject load_raw(const std::filesystem::path& path) {
    const std::vector<char> bytes = read_all(path);
    if (bytes.size() < kRawHeaderBytes || std::memcmp(bytes.data(), kRawMagic, 4) != 0) {
        throw IoError(IoErrc::bad_magic, path.string() + ": missing NRV1 magic");
    }
    const auto code = static_cast<std::uint8_t>(bytes[4]);
    if (code < 1 || code > 4) {
        throw IoError(IoErrc::unsupported_dtype, path.string() + ": unsupported dtype code " + std::to_string(code));
    }
    const auto dtype = static_cast<RawDtype>(code);
    const Dims dims{get<std::uint32_t>(bytes.data() + 8), get<std::uint32_t>(bytes.data() + 12),
                    get<std::uint32_t>(bytes.data() + 16)};
    if (dims.count() == 0) throw IoError(IoErrc::bad_header, path.string() + ": zero extent");
    const std::size_t payload = bytes.size() - kRawHeaderBytes;
    if (payload != dims.count() * element_bytes(dtype)) {
        throw IoError(IoErrc::truncated_payload, path.string() + ": payload of " + std::to_string(payload) +
                                                     " bytes does not match " + to_string(dims));
    }
    const char* p = bytes.data() + kRawHeaderBytes;
    const std::size_t n = dims.count();
    auto checked = [&](std::vector<double> values) {
        for (double v : values)
            if (!std::isfinite(v)) throw IoError(IoErrc::non_finite, path.string() + ": non-finite voxel");
        return values;
    };
    switch (dtype) {
        case RawDtype::f32: {
            std::vector<double> data(n);
            for (std::size_t i = 0; i < n; ++i) data[i] = get<float>(p + 4 * i);
            return Volume3(dims, checked(std::move(data)));
        }
        case RawDtype::f64: {
            std::vector<double> data(n);
            for (std::size_t i = 0; i < n; ++i) data[i] = get<double>(p + 8 * i);
            return Volume3(dims, checked(std::move(data)));
        }
        case RawDtype::u16_labels: {
            std::vector<std::uint16_t> data(n);
            for (std::size_t i = 0; i < n; ++i) data[i] = get<std::uint16_t>(p + 2 * i);
            return LabelVolume(dims, std::move(data));
        }
        case RawDtype::field_f32: {
            std::vector<double> data(3 * n);
            for (std::size_t i = 0; i < 3 * n; ++i) data[i] = get<float>(p + 4 * i);
            return DeformationField(dims, checked(std::move(data)));
        }
    }
    throw IoError(IoErrc::unsupported_dtype, path.string());
}

Volume3 load_volume(const std::filesystem::path& path) {
    auto obj = load_raw(path);
    if (auto* v = std::get_if<Volume3>(&obj)) return std::move(*v);
    throw IoError(IoErrc::unsupported_dtype, path.string() + ": not a scalar volume");
}

LabelVolume load_labels(const std::filesystem::path& path) {
    auto obj = load_raw(path);
    if (auto* v = std::get_if<LabelVolume>(&obj)) return std::move(*v);
    throw IoError(IoErrc::unsupported_dtype, path.string() + ": not a label volume");
}

DeformationField load_field(const std::filesystem::path& path) {
    auto obj = load_raw(path);
    if (auto* v = std::get_if<DeformationField>(&obj)) return std::move(*v);
    throw IoError(IoErrc::unsupported_dtype, path.string() + ": not a deformation field");
}

void save_raw(const Volume3& volume, const std::filesystem::path& path, RawDtype dtype) {
    if (dtype != RawDtype::f32 && dtype != RawDtype::f64) {
        throw IoError(IoErrc::unsupported_dtype, "scalar volumes are stored as f32 or f64");
    }
    std::vector<char> out = raw_header(dtype, volume.dims());
    out.reserve(kRawHeaderBytes + volume.size() * element_bytes(dtype));
    for (double v : volume.data()) {
        if (dtype == RawDtype::f32)
            put<float>(out, static_cast<float>(v));
        else
            put<double>(out, v);
    }
    write_all(path, out);
}

void save_raw(const LabelVolume& labels, const std::filesystem::path& path) {
    std::vector<char> out = raw_header(RawDtype::u16_labels, labels.dims());
    for (auto v : labels.data()) put<std::uint16_t>(out, v);
    write_all(path, out);
}

void save_raw(const DeformationField& field, const std::filesystem::path& path) {
    std::vector<char> out = raw_header(RawDtype::field_f32, field.dims);
    for (double v : field.data) put<float>(out, static_cast<float>(v));
    write_all(path, out);
}

Volume3 import_nifti1(const std::filesystem::path& path) {
    const std::vector<char> bytes = read_all(path);
    if (bytes.size() < 348) throw NiftiError(NiftiErrc::truncated, path.string() + ": shorter than a NIfTI-1 header");
    if (get<std::int32_t>(bytes.data()) != 348) {
        throw NiftiError(NiftiErrc::bad_sizeof_hdr, path.string() + ": sizeof_hdr is not 348");
    }
    std::int16_t dim[8];
    for (int i = 0; i < 8; ++i) dim[i] = get<std::int16_t>(bytes.data() + 40 + 2 * i);
    const bool is3d = dim[0] == 3 || (dim[0] == 4 && dim[4] == 1);
    if (!is3d || dim[1] < 1 || dim[2] < 1 || dim[3] < 1) {
        throw NiftiError(NiftiErrc::bad_dims, path.string() + ": expected a single 3D volume");
    }
    const auto datatype = get<std::int16_t>(bytes.data() + 70);
    const auto vox_offset = static_cast<std::size_t>(get<float>(bytes.data() + 108));
    const float slope = get<float>(bytes.data() + 112);
    const float inter = get<float>(bytes.data() + 116);

    std::size_t width = 0;
    switch (datatype) {
        case 2: width = 1; break;    // uint8
        case 4: width = 2; break;    // int16
        case 16: width = 4; break;   // float32
        default:
            throw NiftiError(NiftiErrc::unsupported_datatype,
                             path.string() + ": unsupported datatype " + std::to_string(datatype));
    }
    const Dims dims{static_cast<std::size_t>(dim[1]), static_cast<std::size_t>(dim[2]), static_cast<std::size_t>(dim[3])};
    const std::size_t n = dims.count();
    if (vox_offset < 348 || bytes.size() < vox_offset + n * width) {
        throw NiftiError(NiftiErrc::truncated, path.string() + ": voxel payload truncated");
    }
    const char* p = bytes.data() + vox_offset;
    const bool scaled = slope != 0.0f && std::isfinite(slope);
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        double v = 0.0;
        if (datatype == 2)
            v = static_cast<std::uint8_t>(p[i]);
        else if (datatype == 4)
            v = get<std::int16_t>(p + 2 * i);
        else
            v = get<float>(p + 4 * i);
        data[i] = scaled ? static_cast<double>(slope) * v + static_cast<double>(inter) : v;
    }
    require_finite(data, "import_nifti1");
    return Volume3(dims, std::move(data));
}

Volume3 crop_center(const Volume3& volume, Dims target) {
    return Volume3(target, crop_data(volume.data(), volume.dims(), target));
}

LabelVolume crop_center(const LabelVolume& labels, Dims target) {
    return LabelVolume(target, crop_data(labels.data(), labels.dims(), target));
}

Volume3 normalize_minmax(const Volume3& volume) {
    const auto [lo, hi] = volume.value_range();
    std::vector<double> out(volume.size(), 0.0);
    if (hi > lo) {
        const double range = hi - lo;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp((volume.data()[i] - lo) / range, 0.0, 1.0);
    }
    return Volume3(volume.dims(), std::move(out));
}

}  // namespace neureg
