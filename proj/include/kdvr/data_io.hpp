#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "kdvr/dataset.hpp"
#include "kdvr/vector.hpp"

namespace kdvr {

enum class Normalization {
  none,
  /// IDX: pixel / 255. Other sources: per-column min-max onto [0, 1].
  scale_0_1,
  /// Per-column zero mean, unit variance (constant columns are centered only).
  standardize,
};

std::string to_string(Normalization n);
Normalization normalization_from_string(const std::string& name);

/// Applies a normalization in place. scale_0_1 here is the min-max variant.
void normalize(Dataset& data, Normalization n);

// IDX (MNIST container): big-endian u32 magic, u32 dims, raw unsigned bytes.
// Images use magic 0x00000803 (count, rows, cols), labels 0x00000801 (count).
// Errors carry the byte offset of the offending field.

Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels,
                  Normalization n = Normalization::scale_0_1);
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 Normalization n = Normalization::scale_0_1);

struct CsvOptions {
  bool header = false;
  /// Column holding the target; negative counts from the end (-1 = last).
  int label_column = -1;
  TargetKind target_kind = TargetKind::class_index;
  /// class_index only; 0 infers max label + 1.
  std::size_t num_classes = 0;

  friend bool operator==(const CsvOptions&, const CsvOptions&) = default;
};

/// Comma-separated numeric rows. FormatError offsets are 1-based rows,
/// columns 1-based.
Dataset parse_csv(const std::string& text, const CsvOptions& options);
Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options);

/// Header `f0,...,f{d-1},label`, reals with 17 significant digits. Reloads
/// with {header = true, label_column = -1} and the dataset's target kind.
std::string format_csv(const Dataset& data);
void write_csv(const Dataset& data, const std::filesystem::path& path);
CsvOptions csv_options_for(const Dataset& data);

enum class SynthKind { linear_gaussian, logistic_separable, logistic_noisy };

std::string to_string(SynthKind kind);
SynthKind synth_kind_from_string(const std::string& name);

struct SynthSpec {
  SynthKind kind = SynthKind::linear_gaussian;
  std::size_t n = 100;
  std::size_t d = 5;
  double noise = 0.0;
  std::uint64_t seed = 0;
  /// Classification kinds: 2 gives {0,1} probability targets for the binary
  /// model, K > 2 gives class indices.
  std::size_t classes = 2;
  /// Standard deviation of the planted weights.
  double weight_scale = 1.0;

  friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

struct SynthData {
  Dataset data;
  /// Planted parameters in the lifted layout ([w, bias] per class).
  ParamVector planted;
};

/// Inputs a_n ~ N(0, I_d).
///   linear_gaussian:    b_n = w . [a_n 1] + noise * eps_n
///   logistic_separable: label = argmax_k W_k . [a_n 1] (sign for K = 2)
///   logistic_noisy:     same with logits perturbed by noise * eps_{n,k}
SynthData synth(const SynthSpec& spec);

/// `count` distinct samples chosen uniformly by `seed`, in draw order.
Dataset subset(const Dataset& data, std::size_t count, std::uint64_t seed);

/// Random split into (train, test) with round(test_fraction * N) test samples.
std::pair<Dataset, Dataset> split(const Dataset& data, double test_fraction, std::uint64_t seed);

struct DatasetSpec {
  enum class Source { idx, csv, synthetic };
  Source source = Source::synthetic;
  std::filesystem::path images;
  std::filesystem::path labels;
  std::filesystem::path csv;
  CsvOptions csv_options;
  SynthSpec synthetic;
  Normalization normalization = Normalization::none;
  std::optional<std::pair<std::size_t, std::uint64_t>> subset;  // (count, seed)

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct LoadedData {
  Dataset data;
  std::optional<ParamVector> planted;
};

LoadedData load_dataset(const DatasetSpec& spec);

}  // namespace kdvr
