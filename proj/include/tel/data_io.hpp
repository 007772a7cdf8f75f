#pragma once

#include "tel/ensemble.hpp"
#include "tel/hosvd.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tel {

enum class FormatErrorKind {
    io,
    bad_magic,
    unsupported_version,
    unsupported_dtype,
    unexpected_eof,
    shape_overflow,
    invalid_shape,
    invalid_label,
    trailing_data,
    unsupported_variant,
    inconsistent_size,
    empty_class,
};

// Stable snake_case name, e.g. "bad_magic".
std::string to_string(FormatErrorKind kind);

class FormatError : public std::runtime_error {
public:
    FormatError(FormatErrorKind kind, const std::string& message);
    FormatErrorKind kind() const { return kind_; }

private:
    FormatErrorKind kind_;
};

// TELD binary layout, all integers 4-byte little-endian unsigned:
//   "TELD" | version | sample count | order N | I_1 .. I_N | dtype (1 = f64 LE)
//   then per sample: label | prod(I_n) f64 LE values in column-major order.
inline constexpr std::uint32_t kTeldVersion = 1;
inline constexpr std::uint32_t kTeldDtypeF64 = 1;

std::vector<std::uint8_t> encode_tensor_dataset(const LabeledTensorDataset& data);
LabeledTensorDataset decode_tensor_dataset(std::span<const std::uint8_t> bytes);

void save_tensor_dataset(const std::filesystem::path& path, const LabeledTensorDataset& data);
LabeledTensorDataset load_tensor_dataset(const std::filesystem::path& path);

// Binary PPM (P6) or PGM (P5) with maxval <= 255, as a (height, width,
// channels) tensor scaled to [0, 1].
DenseTensor decode_pnm(std::span<const std::uint8_t> bytes);

struct ImageDataset {
    LabeledTensorDataset data;
    std::vector<std::string> class_names; // index = label
};

// Every subdirectory of root is a class; labels follow the lexicographic order
// of subdirectory names, images within a class are read in lexicographic order.
ImageDataset load_ppm_dir(const std::filesystem::path& root);

struct SyntheticSpec {
    Shape shape;
    std::size_t classes = 2;
    MultilinearRank rank;
    std::size_t samples_per_class = 10;
    double noise = 0.0;
    // Per-sample core jitter relative to the class core scale.
    double core_perturbation = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static SyntheticSpec from_json(const nlohmann::json& j);
};

// Per class, seeded Gaussian factors (Gram-Schmidt orthonormalized) and a core
// scaled so entries have unit RMS; each sample is the class core plus a
// Gaussian jitter, expanded by the factors, plus Gaussian noise.
LabeledTensorDataset synth_generate(const SyntheticSpec& spec);

struct TrainTestSplit {
    LabeledTensorDataset train;
    LabeledTensorDataset test;
    std::vector<std::size_t> train_indices; // ascending
    std::vector<std::size_t> test_indices;  // ascending
};

// Stratified: per class (ascending label) a seeded shuffle, the first
// ceil(fraction * count) go to train, clamped so both sides are nonempty.
TrainTestSplit train_test_split(const LabeledTensorDataset& data, double train_fraction, std::uint64_t seed);

} // namespace tel
