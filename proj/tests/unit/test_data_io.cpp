#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "doctest.h"
#include "kdvr/data_io.hpp"
#include "kdvr/errors.hpp"
#include "kdvr/objective.hpp"
#include "kdvr/oracle.hpp"

using namespace kdvr;

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

// Two 2x3 images and their labels, hand-assembled.
std::vector<std::uint8_t> images_fixture(std::uint32_t count = 2) {
  std::vector<std::uint8_t> b;
  put_u32(b, 0x00000803);
  put_u32(b, count);
  put_u32(b, 2);
  put_u32(b, 3);
  const std::uint8_t px[] = {0, 51, 255, 102, 0, 0, 255, 255, 255, 0, 0, 153};
  for (std::uint32_t i = 0; i < count * 6; ++i) b.push_back(px[i]);
  return b;
}

std::vector<std::uint8_t> labels_fixture(std::uint32_t count = 2) {
  std::vector<std::uint8_t> b;
  put_u32(b, 0x00000801);
  put_u32(b, count);
  const std::uint8_t lab[] = {7, 2};
  for (std::uint32_t i = 0; i < count; ++i) b.push_back(lab[i]);
  return b;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("kdvr_io_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("idx fixture decodes") {
  const auto img = images_fixture();
  const auto lab = labels_fixture();
  const Dataset d = parse_idx(img, lab);
  REQUIRE(d.size() == 2);
  CHECK(d.feature_dim() == 6);
  CHECK(d.target_kind == TargetKind::class_index);
  CHECK(d.targets == std::vector<double>{7.0, 2.0});
  CHECK(d.features.row(0)[1] == doctest::Approx(0.2));
  CHECK(d.features.row(0)[2] == 1.0);
  CHECK(d.features.row(1)[5] == doctest::Approx(0.6));

  const Dataset raw = parse_idx(img, lab, Normalization::none);
  CHECK(raw.features.row(0)[3] == 102.0);
}

TEST_CASE("idx errors") {
  CHECK_THROWS_AS(parse_idx(images_fixture(0), labels_fixture(0)), EmptyDataset);

  auto bad = images_fixture();
  bad[3] = 0x04;
  try {
    parse_idx(bad, labels_fixture());
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }

  auto truncated = images_fixture();
  truncated.resize(truncated.size() - 1);
  CHECK_THROWS_AS(parse_idx(truncated, labels_fixture()), FormatError);
  CHECK_THROWS_AS(parse_idx(images_fixture(), labels_fixture(1)), FormatError);
  CHECK_THROWS_AS(load_idx("/nonexistent/images", "/nonexistent/labels"), IoError);
}

TEST_CASE("csv fixture") {
  const std::string text = "1.5,2,0\n-3,4.25,2\n0,0,1\n";
  const Dataset d = parse_csv(text, CsvOptions{});
  REQUIRE(d.size() == 3);
  CHECK(d.feature_dim() == 2);
  CHECK(d.num_classes == 3);
  CHECK(d.targets == std::vector<double>{0.0, 2.0, 1.0});
  CHECK(d.features.row(1)[1] == 4.25);

  CsvOptions first;
  first.label_column = 0;
  first.target_kind = TargetKind::real;
  const Dataset f = parse_csv(text, first);
  CHECK(f.targets == std::vector<double>{1.5, -3.0, 0.0});
  CHECK(f.features.row(0)[0] == 2.0);
}

TEST_CASE("csv errors") {
  CHECK_THROWS_AS(parse_csv("", CsvOptions{}), EmptyDataset);
  CHECK_THROWS_AS(parse_csv("a,b,label\n", CsvOptions{true}), EmptyDataset);
  try {
    parse_csv("a,b,label\n1,2,0\n", CsvOptions{});
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 1);
    CHECK(e.column() == 1);
  }
  try {
    parse_csv("1,2,0\n1,2\n", CsvOptions{});
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 2);
  }
  CHECK_THROWS_AS(parse_csv("1,2,0.5\n", CsvOptions{}), InvalidArgument);
}

TEST_CASE("csv round trip is bitwise") {
  const SynthData s = synth({SynthKind::linear_gaussian, 12, 3, 0.7, 5});
  const Dataset back = parse_csv(format_csv(s.data), csv_options_for(s.data));
  CHECK(back == s.data);

  const SynthData c = synth({SynthKind::logistic_noisy, 30, 4, 0.5, 6, 3});
  TempDir tmp;
  write_csv(c.data, tmp.path / "c.csv");
  CHECK(load_csv(tmp.path / "c.csv", csv_options_for(c.data)) == c.data);
  CHECK_THROWS_AS(write_csv(c.data, tmp.path / "missing" / "c.csv"), IoError);
}

TEST_CASE("synthetic generators") {
  const SynthData clean = synth({SynthKind::linear_gaussian, 200, 5, 0.0, 11});
  const Objective f0 = Objective::linear_regression(clean.data);
  CHECK(solve_linear_regression(f0).sigma_star_sq <= 1e-10);
  CHECK(f0.full_loss(clean.planted) <= 1e-24);

  const SynthData noisy = synth({SynthKind::linear_gaussian, 200, 5, 1.0, 11});
  CHECK(solve_linear_regression(Objective::linear_regression(noisy.data)).sigma_star_sq > 0.0);

  CHECK(synth({SynthKind::linear_gaussian, 50, 4, 1.0, 3}).data ==
        synth({SynthKind::linear_gaussian, 50, 4, 1.0, 3}).data);
  CHECK_FALSE(synth({SynthKind::linear_gaussian, 50, 4, 1.0, 3}).data ==
              synth({SynthKind::linear_gaussian, 50, 4, 1.0, 4}).data);

  // Separable labels are reproduced exactly by the planted weights.
  const SynthData sep = synth({SynthKind::logistic_separable, 100, 4, 0.0, 12, 3});
  CHECK(sep.data.num_classes == 3);
  CHECK(Objective::softmax_linear(sep.data).accuracy(sep.planted) == 1.0);
  const SynthData bin = synth({SynthKind::logistic_separable, 100, 4, 0.0, 13, 2});
  CHECK(bin.data.target_kind == TargetKind::probability);
  CHECK(Objective::binary_logistic(bin.data).accuracy(bin.planted) == 1.0);

  CHECK_THROWS_AS(synth({SynthKind::linear_gaussian, 0, 4, 1.0, 3}), InvalidArgument);
}

TEST_CASE("subset and split") {
  const Dataset d = synth({SynthKind::linear_gaussian, 40, 3, 1.0, 21}).data;
  const Dataset s = subset(d, 10, 4);
  CHECK(s.size() == 10);
  CHECK(s == subset(d, 10, 4));
  std::set<double> seen(s.targets.begin(), s.targets.end());
  CHECK(seen.size() == 10);
  for (double t : s.targets) CHECK(std::find(d.targets.begin(), d.targets.end(), t) != d.targets.end());
  CHECK_THROWS_AS(subset(d, 0, 4), InvalidArgument);
  CHECK_THROWS_AS(subset(d, 41, 4), InvalidArgument);

  const auto [train, test] = split(d, 0.25, 8);
  CHECK(test.size() == 10);
  CHECK(train.size() == 30);
  std::multiset<double> all(train.targets.begin(), train.targets.end());
  all.insert(test.targets.begin(), test.targets.end());
  CHECK(all == std::multiset<double>(d.targets.begin(), d.targets.end()));
  CHECK_THROWS_AS(split(d, 0.0, 8), InvalidArgument);
  CHECK_THROWS_AS(split(d, 1.0, 8), InvalidArgument);
}

TEST_CASE("normalizations") {
  Dataset d = synth({SynthKind::linear_gaussian, 50, 3, 1.0, 31}).data;
  Dataset s = d;
  normalize(s, Normalization::standardize);
  for (std::size_t j = 0; j < 3; ++j) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 50; ++i) m += s.features.row(i)[j] / 50;
    for (std::size_t i = 0; i < 50; ++i) v += (s.features.row(i)[j] - m) * (s.features.row(i)[j] - m) / 50;
    CHECK(std::abs(m) <= 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
  }
  normalize(d, Normalization::scale_0_1);
  for (std::size_t j = 0; j < 3; ++j) {
    double lo = 1, hi = 0;
    for (std::size_t i = 0; i < 50; ++i) {
      lo = std::min(lo, d.features.row(i)[j]);
      hi = std::max(hi, d.features.row(i)[j]);
    }
    CHECK(lo == 0.0);
    CHECK(hi == 1.0);
  }
  CHECK(normalization_from_string(to_string(Normalization::standardize)) == Normalization::standardize);
}
