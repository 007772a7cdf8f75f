#include "tel/data_io.hpp"

#include "tel/random.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>

namespace tel {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(FormatErrorKind kind) {
    switch (kind) {
    case FormatErrorKind::io: return "io";
    case FormatErrorKind::bad_magic: return "bad_magic";
    case FormatErrorKind::unsupported_version: return "unsupported_version";
    case FormatErrorKind::unsupported_dtype: return "unsupported_dtype";
    case FormatErrorKind::unexpected_eof: return "unexpected_eof";
    case FormatErrorKind::shape_overflow: return "shape_overflow";
    case FormatErrorKind::invalid_shape: return "invalid_shape";
    case FormatErrorKind::invalid_label: return "invalid_label";
    case FormatErrorKind::trailing_data: return "trailing_data";
    case FormatErrorKind::unsupported_variant: return "unsupported_variant";
    case FormatErrorKind::inconsistent_size: return "inconsistent_size";
    case FormatErrorKind::empty_class: return "empty_class";
    }
    return "unknown";
}

FormatError::FormatError(FormatErrorKind kind, const std::string& message)
    : std::runtime_error(message), kind_(kind) {}

namespace {

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatErrorKind::io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatErrorKind::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(FormatErrorKind::io, "write failed for " + path.string());
}

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t offset() const { return offset_; }
    std::size_t remaining() const { return bytes_.size() - offset_; }

    void need(std::size_t n) const {
        if (remaining() < n) {
            throw FormatError(FormatErrorKind::unexpected_eof,
                              "unexpected end of file at byte offset " + std::to_string(bytes_.size()) + " (needed " +
                                  std::to_string(n) + " bytes at offset " + std::to_string(offset_) + ")");
        }
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[offset_ + static_cast<std::size_t>(i)];
        offset_ += 4;
        return v;
    }

    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | bytes_[offset_ + static_cast<std::size_t>(i)];
        offset_ += 8;
        return std::bit_cast<double>(v);
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t offset_ = 0;
};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > std::numeric_limits<std::uint32_t>::max()) {
        throw FormatError(FormatErrorKind::shape_overflow, std::string(what) + " does not fit in 32 bits");
    }
    return static_cast<std::uint32_t>(v);
}

} // namespace

// ---------------------------------------------------------------------------
// TELD

std::vector<std::uint8_t> encode_tensor_dataset(const LabeledTensorDataset& data) {
    data.validate();
    std::vector<std::uint8_t> out{'T', 'E', 'L', 'D'};
    put_u32(out, kTeldVersion);
    put_u32(out, checked_u32(data.size(), "sample count"));
    const Shape shape = data.size() > 0 ? data.shape() : Shape{};
    put_u32(out, checked_u32(shape.size(), "order"));
    for (auto d : shape) put_u32(out, checked_u32(d, "dimension"));
    put_u32(out, kTeldDtypeF64);
    for (std::size_t i = 0; i < data.size(); ++i) {
        put_u32(out, static_cast<std::uint32_t>(data.labels[i]));
        for (double x : data.samples[i].data()) put_f64(out, x);
    }
    return out;
}

LabeledTensorDataset decode_tensor_dataset(std::span<const std::uint8_t> bytes) {
    const std::size_t magic_len = std::min<std::size_t>(bytes.size(), 4);
    if (!std::equal(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(magic_len), "TELD")) {
        throw FormatError(FormatErrorKind::bad_magic, "bad magic: expected \"TELD\" at byte offset 0");
    }
    ByteReader in(bytes);
    in.need(4);
    in.u32();
    const auto version = in.u32();
    if (version != kTeldVersion) {
        throw FormatError(FormatErrorKind::unsupported_version,
                          "unsupported format version " + std::to_string(version) + " at byte offset 4");
    }
    const auto count = in.u32();
    const auto order = in.u32();
    if (order == 0 && count > 0) throw FormatError(FormatErrorKind::invalid_shape, "order 0 at byte offset 12");
    Shape shape;
    std::uint64_t elements = 1;
    for (std::uint32_t n = 0; n < order; ++n) {
        const auto at = in.offset();
        const auto d = in.u32();
        if (d == 0) {
            throw FormatError(FormatErrorKind::invalid_shape, "zero dimension at byte offset " + std::to_string(at));
        }
        if (elements > std::numeric_limits<std::uint64_t>::max() / d) {
            throw FormatError(FormatErrorKind::shape_overflow,
                              "shape overflow: element count exceeds 64 bits at byte offset " + std::to_string(at));
        }
        elements *= d;
        shape.push_back(d);
    }
    const auto dtype_at = in.offset();
    const auto dtype = in.u32();
    if (dtype != kTeldDtypeF64) {
        throw FormatError(FormatErrorKind::unsupported_dtype, "unsupported dtype code " + std::to_string(dtype) +
                                                                  " at byte offset " + std::to_string(dtype_at));
    }
    // Check the whole payload up front so a corrupt header cannot trigger a huge allocation.
    const std::uint64_t u64_max = std::numeric_limits<std::uint64_t>::max();
    if (elements > (u64_max - 4) / 8 || (count > 0 && 4 + 8 * elements > u64_max / count)) {
        throw FormatError(FormatErrorKind::shape_overflow, "shape overflow: payload size exceeds 64 bits");
    }
    const std::uint64_t payload = (4 + 8 * elements) * count;
    if (payload > in.remaining()) {
        throw FormatError(FormatErrorKind::unexpected_eof,
                          "unexpected end of file at byte offset " + std::to_string(bytes.size()) + " (payload needs " +
                              std::to_string(payload) + " bytes from offset " + std::to_string(in.offset()) + ")");
    }

    LabeledTensorDataset data;
    data.samples.reserve(count);
    for (std::uint32_t m = 0; m < count; ++m) {
        const auto label_at = in.offset();
        const auto label = in.u32();
        if (label > static_cast<std::uint32_t>(std::numeric_limits<Label>::max())) {
            throw FormatError(FormatErrorKind::invalid_label,
                              "label " + std::to_string(label) + " at byte offset " + std::to_string(label_at) +
                                  " does not fit a signed 32-bit integer");
        }
        std::vector<double> values(static_cast<std::size_t>(elements));
        for (auto& v : values) v = in.f64();
        data.samples.emplace_back(shape, std::move(values));
        data.labels.push_back(static_cast<Label>(label));
    }
    if (in.remaining() != 0) {
        throw FormatError(FormatErrorKind::trailing_data,
                          std::to_string(in.remaining()) + " trailing bytes at byte offset " + std::to_string(in.offset()));
    }
    return data;
}

void save_tensor_dataset(const fs::path& path, const LabeledTensorDataset& data) {
    write_file(path, encode_tensor_dataset(data));
}

LabeledTensorDataset load_tensor_dataset(const fs::path& path) {
    const auto bytes = read_file(path);
    return decode_tensor_dataset(bytes);
}

// ---------------------------------------------------------------------------
// PPM / PGM

namespace {

class PnmHeader {
public:
    explicit PnmHeader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t offset() const { return pos_; }

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
            } else if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::size_t number(const char* what) {
        skip_space_and_comments();
        if (pos_ >= bytes_.size()) {
            throw FormatError(FormatErrorKind::unexpected_eof, std::string("unexpected end of file at byte offset ") +
                                                                   std::to_string(pos_) + " while reading " + what);
        }
        if (!std::isdigit(bytes_[pos_])) {
            throw FormatError(FormatErrorKind::invalid_shape,
                              std::string("expected ") + what + " at byte offset " + std::to_string(pos_));
        }
        std::size_t v = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            v = v * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
            if (v > (1u << 24)) throw FormatError(FormatErrorKind::shape_overflow, std::string(what) + " too large");
            ++pos_;
        }
        return v;
    }

    // Exactly one whitespace byte separates maxval from the raster.
    void single_space() {
        if (pos_ >= bytes_.size()) {
            throw FormatError(FormatErrorKind::unexpected_eof,
                              "unexpected end of file at byte offset " + std::to_string(pos_) + " before raster");
        }
        if (!std::isspace(bytes_[pos_])) {
            throw FormatError(FormatErrorKind::invalid_shape,
                              "expected whitespace at byte offset " + std::to_string(pos_));
        }
        ++pos_;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 2;
};

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return ext == ".ppm" || ext == ".pgm" || ext == ".pnm";
}

} // namespace

DenseTensor decode_pnm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2) {
        throw FormatError(FormatErrorKind::unexpected_eof, "unexpected end of file at byte offset " +
                                                                std::to_string(bytes.size()) + " in magic");
    }
    if (bytes[0] != 'P' || bytes[1] < '1' || bytes[1] > '7') {
        throw FormatError(FormatErrorKind::bad_magic, "bad magic: not a PNM file");
    }
    std::size_t channels = 0;
    if (bytes[1] == '6') {
        channels = 3;
    } else if (bytes[1] == '5') {
        channels = 1;
    } else {
        throw FormatError(FormatErrorKind::unsupported_variant,
                          std::string("unsupported PNM variant P") + static_cast<char>(bytes[1]) +
                              " (only binary P5 and P6 are supported)");
    }
    PnmHeader header(bytes);
    const auto width = header.number("width");
    const auto height = header.number("height");
    const auto maxval = header.number("maxval");
    if (width == 0 || height == 0) throw FormatError(FormatErrorKind::invalid_shape, "image has zero width or height");
    if (maxval == 0 || maxval > 255) {
        throw FormatError(FormatErrorKind::unsupported_variant,
                          "unsupported maxval " + std::to_string(maxval) + " (1..255 supported)");
    }
    header.single_space();
    const std::size_t start = header.offset();
    const std::size_t needed = width * height * channels;
    if (bytes.size() - start < needed) {
        throw FormatError(FormatErrorKind::unexpected_eof,
                          "unexpected end of file at byte offset " + std::to_string(bytes.size()) + " (raster needs " +
                              std::to_string(needed) + " bytes from offset " + std::to_string(start) + ")");
    }
    Shape shape{height, width, channels};
    std::vector<double> data(needed);
    const double scale = static_cast<double>(maxval);
    for (std::size_t row = 0; row < height; ++row) {
        for (std::size_t col = 0; col < width; ++col) {
            for (std::size_t ch = 0; ch < channels; ++ch) {
                const std::uint8_t v = bytes[start + (row * width + col) * channels + ch];
                data[row + col * height + ch * height * width] = static_cast<double>(v) / scale;
            }
        }
    }
    return DenseTensor(std::move(shape), std::move(data));
}

ImageDataset load_ppm_dir(const fs::path& root) {
    if (!fs::is_directory(root)) throw FormatError(FormatErrorKind::io, root.string() + " is not a directory");
    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    }
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw FormatError(FormatErrorKind::empty_class, root.string() + " has no class subdirectories");

    ImageDataset out;
    for (std::size_t label = 0; label < class_dirs.size(); ++label) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(class_dirs[label])) {
            if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) {
            throw FormatError(FormatErrorKind::empty_class, "class directory " + class_dirs[label].string() +
                                                                " contains no PPM/PGM images");
        }
        out.class_names.push_back(class_dirs[label].filename().string());
        for (const auto& file : files) {
            DenseTensor image = [&] {
                try {
                    return decode_pnm(read_file(file));
                } catch (const FormatError& e) {
                    throw FormatError(e.kind(), file.string() + ": " + e.what());
                }
            }();
            if (!out.data.samples.empty() && image.shape() != out.data.samples.front().shape()) {
                throw FormatError(FormatErrorKind::inconsistent_size,
                                  file.string() + " has shape " + shape_to_string(image.shape()) + ", expected " +
                                      shape_to_string(out.data.samples.front().shape()));
            }
            out.data.samples.push_back(std::move(image));
            out.data.labels.push_back(static_cast<Label>(label));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

void SyntheticSpec::validate() const {
    if (shape.empty()) throw std::invalid_argument("synthetic spec: empty shape");
    for (auto d : shape) {
        if (d == 0) throw std::invalid_argument("synthetic spec: dimensions must be positive");
    }
    if (rank.order() != shape.size()) {
        throw std::invalid_argument("synthetic spec: rank " + rank.to_string() + " does not match order of shape " +
                                    shape_to_string(shape));
    }
    for (std::size_t n = 0; n < shape.size(); ++n) {
        if (rank[n] > shape[n]) {
            throw std::invalid_argument("synthetic spec: rank " + rank.to_string() + " exceeds shape " +
                                        shape_to_string(shape) + " in mode " + std::to_string(n));
        }
    }
    if (classes < 1) throw std::invalid_argument("synthetic spec: need at least one class");
    if (samples_per_class < 1) throw std::invalid_argument("synthetic spec: need at least one sample per class");
    if (!(noise >= 0.0) || !std::isfinite(noise)) throw std::invalid_argument("synthetic spec: noise must be >= 0");
    if (!(core_perturbation >= 0.0) || !std::isfinite(core_perturbation)) {
        throw std::invalid_argument("synthetic spec: core_perturbation must be >= 0");
    }
}

json SyntheticSpec::to_json() const {
    return {{"shape", shape},
            {"classes", classes},
            {"rank", rank.values()},
            {"samples_per_class", samples_per_class},
            {"noise", noise},
            {"core_perturbation", core_perturbation},
            {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const json& j) {
    for (const auto& [key, value] : j.items()) {
        static const std::vector<std::string> allowed{"shape", "classes", "rank", "samples_per_class",
                                                      "noise", "core_perturbation", "seed"};
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw std::invalid_argument("synthetic spec: unknown key '" + key + "'");
        }
    }
    SyntheticSpec s;
    s.shape = j.at("shape").get<Shape>();
    s.classes = j.at("classes").get<std::size_t>();
    s.rank = MultilinearRank(j.at("rank").get<std::vector<std::size_t>>());
    s.samples_per_class = j.at("samples_per_class").get<std::size_t>();
    s.noise = j.value("noise", 0.0);
    s.core_perturbation = j.value("core_perturbation", SyntheticSpec{}.core_perturbation);
    s.seed = j.value("seed", std::uint64_t{0});
    s.validate();
    return s;
}

namespace {

Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.normal();
    }
    return m;
}

// Modified Gram-Schmidt, columns in order.
Matrix orthonormalize(Matrix q) {
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
        for (Eigen::Index i = 0; i < j; ++i) q.col(j) -= q.col(i).dot(q.col(j)) * q.col(i);
        q.col(j) /= q.col(j).norm();
    }
    return q;
}

} // namespace

LabeledTensorDataset synth_generate(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const Shape core_shape = spec.rank.values();
    const std::size_t core_size = shape_size(core_shape);
    const double scale =
        std::sqrt(static_cast<double>(shape_size(spec.shape)) / static_cast<double>(core_size));

    struct Latent {
        std::vector<Matrix> factors;
        std::vector<double> core;
    };
    std::vector<Latent> latent(spec.classes);
    for (auto& l : latent) {
        for (std::size_t n = 0; n < spec.shape.size(); ++n) {
            l.factors.push_back(orthonormalize(gaussian_matrix(rng, spec.shape[n], spec.rank[n])));
        }
        l.core.resize(core_size);
        for (auto& g : l.core) g = scale * rng.normal();
    }

    LabeledTensorDataset data;
    const double jitter = spec.core_perturbation * scale;
    for (std::size_t k = 0; k < spec.classes; ++k) {
        for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
            std::vector<double> core(core_size);
            for (std::size_t i = 0; i < core_size; ++i) core[i] = latent[k].core[i] + jitter * rng.normal();
            DenseTensor x(core_shape, std::move(core));
            for (std::size_t n = 0; n < spec.shape.size(); ++n) x = mode_n_product(x, latent[k].factors[n], n);
            std::vector<double> values(x.data().begin(), x.data().end());
            for (auto& v : values) v = v + spec.noise * rng.normal();
            data.samples.emplace_back(spec.shape, std::move(values));
            data.labels.push_back(static_cast<Label>(k));
        }
    }
    return data;
}

// ---------------------------------------------------------------------------
// Split

TrainTestSplit train_test_split(const LabeledTensorDataset& data, double train_fraction, std::uint64_t seed) {
    data.validate();
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw std::invalid_argument("train_test_split: fraction must lie in (0, 1)");
    }
    TrainTestSplit out;
    Rng rng(seed);
    for (Label c : distinct_labels(data.labels)) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (data.labels[i] == c) idx.push_back(i);
        }
        if (idx.size() < 2) {
            throw std::invalid_argument("train_test_split: class " + std::to_string(c) + " has fewer than 2 samples");
        }
        for (std::size_t i = idx.size(); i-- > 1;) std::swap(idx[i], idx[rng.below(i + 1)]);
        // The epsilon keeps exact products such as 0.7 * 10 from rounding up.
        auto n_train = static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(idx.size()) - 1e-9));
        n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
        out.train_indices.insert(out.train_indices.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
        out.test_indices.insert(out.test_indices.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    }
    std::sort(out.train_indices.begin(), out.train_indices.end());
    std::sort(out.test_indices.begin(), out.test_indices.end());
    out.train = data.subset(out.train_indices);
    out.test = data.subset(out.test_indices);
    return out;
}

} // namespace tel
