#include "kdvr/telemetry.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kdvr/distillation.hpp"
#include "kdvr/errors.hpp"

namespace kdvr {

namespace {

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_opt(const std::optional<double>& v) { return v ? format_real(*v) : std::string(); }

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_real(const std::string& s, std::size_t row, std::size_t col) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("trace: bad number '" + s + "'", row, col);
  }
  return v;
}

std::optional<double> parse_opt(const std::string& s, std::size_t row, std::size_t col) {
  if (s.empty()) return std::nullopt;
  return parse_real(s, row, col);
}

template <typename T>
T parse_uint(const std::string& s, std::size_t row, std::size_t col) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("trace: bad integer '" + s + "'", row, col);
  }
  return v;
}

}  // namespace

std::string format_trace(std::span<const EpochStats> records) {
  std::string out = kTraceHeader;
  out += '\n';
  for (const EpochStats& r : records) {
    if (r.run_id.find(',') != std::string::npos || r.mode.find(',') != std::string::npos) {
      throw InvalidArgument("trace: run_id and mode must not contain commas");
    }
    out += std::to_string(r.epoch) + ',' + r.run_id + ',' + std::to_string(r.seed) + ',' + r.mode +
           ',' + format_real(r.lambda) + ',' + format_real(r.gamma) + ',' +
           format_real(r.loss_running) + ',' + format_real(r.loss_full) + ',' +
           format_opt(r.grad_variance) + ',' + format_opt(r.cosine) + ',' + format_opt(r.l2) + ',' +
           format_opt(r.snr) + ',' + format_opt(r.test_acc) + '\n';
  }
  return out;
}

void write_trace(std::span<const EpochStats> records, const std::filesystem::path& path) {
  const std::string text = format_trace(records);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<EpochStats> parse_trace(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader) throw FormatError("trace: missing header", 1);
  std::vector<EpochStats> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != 13) throw FormatError("trace: expected 13 fields", row);
    EpochStats r;
    r.epoch = parse_uint<std::size_t>(f[0], row, 1);
    r.run_id = f[1];
    r.seed = parse_uint<std::uint64_t>(f[2], row, 3);
    r.mode = f[3];
    r.lambda = parse_real(f[4], row, 5);
    r.gamma = parse_real(f[5], row, 6);
    r.loss_running = parse_real(f[6], row, 7);
    r.loss_full = parse_real(f[7], row, 8);
    r.grad_variance = parse_opt(f[8], row, 9);
    r.cosine = parse_opt(f[9], row, 10);
    r.l2 = parse_opt(f[10], row, 11);
    r.snr = parse_opt(f[11], row, 12);
    r.test_acc = parse_opt(f[12], row, 13);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<EpochStats> read_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_trace(buf.str());
}

VarianceEstimate grad_variance_probe(const Objective& obj, const DirectionFn& direction,
                                     const VarianceProbe& probe, Rng* rng,
                                     const ParamVector* center) {
  std::vector<ParamVector> samples;
  if (probe.kind == VarianceProbe::Kind::exact_enumeration) {
    samples.reserve(obj.num_samples());
    for (std::size_t n = 0; n < obj.num_samples(); ++n) {
      samples.emplace_back();
      direction(Minibatch::single(n), samples.back());
    }
  } else {
    if (probe.trials < 2) throw InvalidArgument("monte-carlo variance probe needs >= 2 trials");
    if (rng == nullptr) throw InvalidArgument("monte-carlo variance probe needs an rng");
    for (std::size_t t = 0; t < probe.trials; ++t) {
      samples.emplace_back();
      direction(sample_minibatch(obj.num_samples(), probe.batch_size, *rng), samples.back());
    }
  }
  const double count = static_cast<double>(samples.size());
  ParamVector mean(samples.front().size());
  for (const auto& g : samples) axpy_inplace(1.0 / count, g, mean);
  double spread = 0.0;
  double around_center = 0.0;
  for (const auto& g : samples) {
    spread += dist_sq(g, mean);
    if (center != nullptr) around_center += dist_sq(g, *center);
  }
  VarianceEstimate est;
  est.around_mean = probe.kind == VarianceProbe::Kind::exact_enumeration ? spread / count
                                                                        : spread / (count - 1.0);
  if (center != nullptr) est.around_center = around_center / count;
  return est;
}

GapStats approx_gap_stats(const Objective& mlp, const ParamVector& x, const ParamVector& teacher,
                          double lambda, const Minibatch& batch) {
  if (mlp.kind() != ObjectiveKind::mlp_relu) throw InvalidKind("approx_gap_stats: mlp_relu only");
  ParamVector exact, approx;
  distillation_direction(mlp, x, teacher, lambda, batch, exact);
  approx_kd_direction(mlp, x, teacher, lambda, batch, approx);
  GapStats s;
  s.l2 = std::sqrt(dist_sq(exact, approx));
  const double n_exact = norm(exact);
  if (n_exact > 0.0) {
    s.snr = s.l2 / n_exact;
    if (norm_sq(approx) > 0.0) s.cosine = cosine(exact, approx);
  }
  return s;
}

}  // namespace kdvr
