#include "kdvr/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <vector>

#include "kdvr/errors.hpp"
#include "kdvr/rng.hpp"

namespace kdvr {

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset,
                        const char* what) {
  if (bytes.size() < offset + 4) {
    throw FormatError(std::string(what) + ": truncated header", offset);
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view cell, double& out) {
  cell = trim(cell);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  if (cell.empty()) return false;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return ec == std::errc() && ptr == cell.data() + cell.size() && std::isfinite(out);
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void infer_classes(Dataset& data, std::size_t declared) {
  if (data.target_kind != TargetKind::class_index) return;
  if (declared != 0) {
    data.num_classes = declared;
    return;
  }
  double top = 0.0;
  for (double b : data.targets) top = std::max(top, b);
  data.num_classes = std::max<std::size_t>(2, static_cast<std::size_t>(top) + 1);
}

std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t count,
                                                  std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed, 0x5ab5e7);
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(idx[i], idx[i + rng.uniform_index(n - i)]);
  }
  idx.resize(count);
  return idx;
}

Dataset select_rows(const Dataset& data, std::span<const std::size_t> rows) {
  Dataset out;
  out.target_kind = data.target_kind;
  out.num_classes = data.num_classes;
  out.features = Matrix(rows.size(), data.feature_dim());
  out.targets.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = data.features.row(rows[i]);
    std::copy(src.begin(), src.end(), out.features.row(i).begin());
    out.targets[i] = data.targets[rows[i]];
  }
  return out;
}

}  // namespace

std::string to_string(Normalization n) {
  switch (n) {
    case Normalization::none: return "none";
    case Normalization::scale_0_1: return "scale_0_1";
    case Normalization::standardize: return "standardize";
  }
  return "unknown";
}

Normalization normalization_from_string(const std::string& name) {
  if (name == "none") return Normalization::none;
  if (name == "scale_0_1") return Normalization::scale_0_1;
  if (name == "standardize") return Normalization::standardize;
  throw InvalidArgument("unknown normalization '" + name + "'");
}

void normalize(Dataset& data, Normalization n) {
  if (n == Normalization::none || data.size() == 0) return;
  const std::size_t N = data.size();
  for (std::size_t j = 0; j < data.feature_dim(); ++j) {
    if (n == Normalization::scale_0_1) {
      double lo = data.features(0, j), hi = lo;
      for (std::size_t i = 1; i < N; ++i) {
        lo = std::min(lo, data.features(i, j));
        hi = std::max(hi, data.features(i, j));
      }
      const double span = hi - lo;
      for (std::size_t i = 0; i < N; ++i) {
        data.features(i, j) = span > 0.0 ? (data.features(i, j) - lo) / span : 0.0;
      }
    } else {
      double mean = 0.0;
      for (std::size_t i = 0; i < N; ++i) mean += data.features(i, j);
      mean /= static_cast<double>(N);
      double var = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        const double d = data.features(i, j) - mean;
        var += d * d;
      }
      var /= static_cast<double>(N);
      const double sd = std::sqrt(var);
      for (std::size_t i = 0; i < N; ++i) {
        const double centered = data.features(i, j) - mean;
        data.features(i, j) = sd > 0.0 ? centered / sd : centered;
      }
    }
  }
}

Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels,
                  Normalization n) {
  if (read_be32(images, 0, "idx images") != kIdxImages) {
    throw FormatError("idx images: bad magic", 0);
  }
  if (read_be32(labels, 0, "idx labels") != kIdxLabels) {
    throw FormatError("idx labels: bad magic", 0);
  }
  const std::size_t count = read_be32(images, 4, "idx images");
  const std::size_t rows = read_be32(images, 8, "idx images");
  const std::size_t cols = read_be32(images, 12, "idx images");
  const std::size_t label_count = read_be32(labels, 4, "idx labels");
  if (label_count != count) {
    throw FormatError("idx: " + std::to_string(count) + " images but " +
                          std::to_string(label_count) + " labels",
                      4);
  }
  if (count == 0) throw EmptyDataset("idx: zero images");
  const std::size_t d = rows * cols;
  if (d == 0) throw FormatError("idx images: zero-size image", 8);
  constexpr std::size_t image_header = 16, label_header = 8;
  if (images.size() < image_header + count * d) {
    throw FormatError("idx images: truncated pixel data", images.size());
  }
  if (labels.size() < label_header + count) {
    throw FormatError("idx labels: truncated label data", labels.size());
  }

  Dataset data;
  data.target_kind = TargetKind::class_index;
  data.features = Matrix(count, d);
  data.targets.resize(count);
  const double scale = n == Normalization::scale_0_1 ? 1.0 / 255.0 : 1.0;
  for (std::size_t i = 0; i < count * d; ++i) {
    data.features.data()[i] = static_cast<double>(images[image_header + i]) * scale;
  }
  std::uint8_t top = 0;
  for (std::size_t i = 0; i < count; ++i) {
    data.targets[i] = labels[label_header + i];
    top = std::max(top, labels[label_header + i]);
  }
  data.num_classes = std::max<std::size_t>(10, std::size_t{top} + 1);
  if (n == Normalization::standardize) normalize(data, n);
  return data;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 Normalization n) {
  const auto img = read_bytes(images);
  const auto lab = read_bytes(labels);
  return parse_idx(img, lab, n);
}

Dataset parse_csv(const std::string& text, const CsvOptions& options) {
  Dataset data;
  data.target_kind = options.target_kind;
  std::vector<double> values;
  std::size_t width = 0;
  std::size_t row = 0;
  std::size_t samples = 0;
  std::istringstream in(text);
  std::string line;
  std::vector<double> cells;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    if (row == 1 && options.header) continue;
    cells.clear();
    std::string_view rest = line;
    std::size_t col = 0;
    while (true) {
      const auto comma = rest.find(',');
      const std::string_view cell = rest.substr(0, comma);
      ++col;
      double v = 0.0;
      if (!parse_double(cell, v)) {
        throw FormatError("csv: non-numeric cell '" + std::string(trim(cell)) + "' at row " +
                              std::to_string(row) + ", column " + std::to_string(col),
                          row, col);
      }
      cells.push_back(v);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (width == 0) {
      width = cells.size();
      if (width < 2) throw FormatError("csv: need at least one feature and a label", row, 1);
    } else if (cells.size() != width) {
      throw FormatError("csv: row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                            " cells, expected " + std::to_string(width),
                        row, std::min(cells.size(), width) + 1);
    }
    const int lc = options.label_column < 0 ? static_cast<int>(width) + options.label_column
                                            : options.label_column;
    if (lc < 0 || lc >= static_cast<int>(width)) {
      throw FormatError("csv: label column out of range", row, 0);
    }
    for (std::size_t j = 0; j < width; ++j) {
      if (static_cast<int>(j) == lc) {
        data.targets.push_back(cells[j]);
      } else {
        values.push_back(cells[j]);
      }
    }
    ++samples;
  }
  if (samples == 0) throw EmptyDataset("csv: no data rows");
  data.features = Matrix(samples, width - 1, std::move(values));
  infer_classes(data, options.num_classes);
  data.validate();
  return data;
}

Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options) {
  return parse_csv(read_text(path), options);
}

std::string format_csv(const Dataset& data) {
  std::string out;
  for (std::size_t j = 0; j < data.feature_dim(); ++j) out += "f" + std::to_string(j) + ",";
  out += "label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.features.row(i)) out += format_real(v) + ",";
    out += format_real(data.targets[i]) + "\n";
  }
  return out;
}

void write_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << format_csv(data);
  if (!out) throw IoError("write failed: " + path.string());
}

CsvOptions csv_options_for(const Dataset& data) {
  return CsvOptions{true, -1, data.target_kind, data.num_classes};
}

std::string to_string(SynthKind kind) {
  switch (kind) {
    case SynthKind::linear_gaussian: return "linear_gaussian";
    case SynthKind::logistic_separable: return "logistic_separable";
    case SynthKind::logistic_noisy: return "logistic_noisy";
  }
  return "unknown";
}

SynthKind synth_kind_from_string(const std::string& name) {
  if (name == "linear_gaussian") return SynthKind::linear_gaussian;
  if (name == "logistic_separable") return SynthKind::logistic_separable;
  if (name == "logistic_noisy") return SynthKind::logistic_noisy;
  throw InvalidArgument("unknown synthetic kind '" + name + "'");
}

SynthData synth(const SynthSpec& spec) {
  if (spec.n == 0 || spec.d == 0) throw InvalidArgument("synth: N and d must be positive");
  if (!(spec.noise >= 0.0) || !std::isfinite(spec.noise)) {
    throw InvalidArgument("synth: noise must be finite and non-negative");
  }
  const bool regression = spec.kind == SynthKind::linear_gaussian;
  if (!regression && spec.classes < 2) throw InvalidArgument("synth: classes must be >= 2");
  Rng rng(spec.seed, 0x5e7d);
  const std::size_t lifted = spec.d + 1;
  const std::size_t heads = regression || spec.classes == 2 ? 1 : spec.classes;

  SynthData out;
  out.planted = ParamVector(lifted * heads);
  for (double& w : out.planted) w = spec.weight_scale * rng.normal();

  Dataset& data = out.data;
  data.features = Matrix(spec.n, spec.d);
  data.targets.resize(spec.n);
  for (double& v : data.features.data()) v = rng.normal();

  std::vector<double> logits(heads);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const auto a = data.features.row(i);
    for (std::size_t k = 0; k < heads; ++k) {
      const double* w = out.planted.data() + k * lifted;
      double z = 0.0;
      for (std::size_t j = 0; j < spec.d; ++j) z += w[j] * a[j];
      z += w[spec.d];
      logits[k] = z;
    }
    if (regression) {
      data.targets[i] = logits[0] + spec.noise * rng.normal();
      continue;
    }
    if (spec.kind == SynthKind::logistic_noisy) {
      for (double& z : logits) z += spec.noise * rng.normal();
    }
    if (heads == 1) {
      data.targets[i] = logits[0] > 0.0 ? 1.0 : 0.0;
    } else {
      data.targets[i] = static_cast<double>(
          std::distance(logits.begin(), std::max_element(logits.begin(), logits.end())));
    }
  }
  if (regression) {
    data.target_kind = TargetKind::real;
  } else if (spec.classes == 2) {
    data.target_kind = TargetKind::probability;
  } else {
    data.target_kind = TargetKind::class_index;
    data.num_classes = spec.classes;
  }
  data.validate();
  return out;
}

Dataset subset(const Dataset& data, std::size_t count, std::uint64_t seed) {
  if (count == 0 || count > data.size()) {
    throw InvalidArgument("subset: count " + std::to_string(count) + " not in [1, " +
                          std::to_string(data.size()) + "]");
  }
  const auto rows = draw_without_replacement(data.size(), count, seed);
  return select_rows(data, rows);
}

std::pair<Dataset, Dataset> split(const Dataset& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw InvalidArgument("split: test fraction must be in (0, 1)");
  }
  const auto test_count =
      static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(data.size())));
  if (test_count == 0 || test_count >= data.size()) {
    throw InvalidArgument("split: dataset too small for the requested fraction");
  }
  const auto order = draw_without_replacement(data.size(), data.size(), seed);
  const std::span<const std::size_t> all(order);
  return {select_rows(data, all.subspan(test_count)), select_rows(data, all.first(test_count))};
}

LoadedData load_dataset(const DatasetSpec& spec) {
  LoadedData out;
  switch (spec.source) {
    case DatasetSpec::Source::idx:
      out.data = load_idx(spec.images, spec.labels, spec.normalization);
      break;
    case DatasetSpec::Source::csv:
      out.data = load_csv(spec.csv, spec.csv_options);
      normalize(out.data, spec.normalization);
      break;
    case DatasetSpec::Source::synthetic: {
      SynthData s = synth(spec.synthetic);
      out.data = std::move(s.data);
      out.planted = std::move(s.planted);
      normalize(out.data, spec.normalization);
      break;
    }
  }
  if (spec.subset) {
    out.data = subset(out.data, spec.subset->first, spec.subset->second);
  }
  return out;
}

}  // namespace kdvr
