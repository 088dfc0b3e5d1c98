#include <cmath>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "iwc/data.hpp"

namespace {

using iwc::ErrorKind;

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("iwc_test_data_" + name);
}

ErrorKind kind_of_validation(const iwc::ObservationTable& t, const iwc::TreatmentCoding& c) {
  try {
    iwc::validate_table(t, c);
  } catch (const iwc::Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "table unexpectedly valid";
  return ErrorKind::kIoError;
}

TEST(Table, CreditTrainingTableIsValid) {
  const auto t = fixtures::credit_table(fixtures::kCreditTrain);
  EXPECT_TRUE(iwc::check_table(t, fixtures::credit_coding()).empty());
  EXPECT_EQ(&iwc::validate_table(t, fixtures::credit_coding()), &t);
  const auto counts = iwc::level_counts(t, 2);
  EXPECT_EQ(counts[0], 5u);
  EXPECT_EQ(counts[1], 5u);
}

TEST(Table, NonFiniteValuesAreListedPerCell) {
  auto t = fixtures::credit_table(fixtures::kCreditTrain);
  t.y[2] = std::numeric_limits<double>::quiet_NaN();
  t.z(7, 0) = std::numeric_limits<double>::infinity();
  const auto v = iwc::check_table(t, fixtures::credit_coding());
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[0].kind, ErrorKind::kNonFiniteValue);
  EXPECT_EQ(v[0].row, 2);
  EXPECT_EQ(v[0].column, "y");
  EXPECT_EQ(v[1].row, 7);
  EXPECT_EQ(v[1].column, "z_1");
  EXPECT_EQ(kind_of_validation(t, fixtures::credit_coding()), ErrorKind::kNonFiniteValue);
}

TEST(Table, LabelOutsideCodingIsRejected) {
  auto t = fixtures::credit_table(fixtures::kCreditTrain);
  const iwc::TreatmentCoding five({1, 2, 3, 4, 5});
  EXPECT_TRUE(iwc::check_table(t, five).empty());
  t.d[4] = 5;
  EXPECT_EQ(kind_of_validation(t, five), ErrorKind::kUnknownTreatmentLabel);
  t.d[4] = -1;
  EXPECT_EQ(kind_of_validation(t, five), ErrorKind::kUnknownTreatmentLabel);
}

TEST(Table, ShapeMismatchAndEmptyTable) {
  auto t = fixtures::credit_table(fixtures::kCreditTrain);
  t.d.pop_back();
  EXPECT_EQ(kind_of_validation(t, fixtures::credit_coding()), ErrorKind::kShapeMismatch);
  iwc::ObservationTable empty;
  EXPECT_EQ(kind_of_validation(empty, fixtures::credit_coding()), ErrorKind::kShapeMismatch);
}

TEST(Coding, RequiresStrictlyIncreasingFiniteLevels) {
  EXPECT_THROW(iwc::TreatmentCoding({1.0}), iwc::Error);
  EXPECT_THROW(iwc::TreatmentCoding({1.0, 1.0}), iwc::Error);
  EXPECT_THROW(iwc::TreatmentCoding({2.0, 1.0}), iwc::Error);
  EXPECT_THROW(iwc::TreatmentCoding({1.0, std::nan("")}), iwc::Error);
  const iwc::TreatmentCoding c({-0.5, 0.25, 3.0});
  EXPECT_EQ(c.label_of(0.25), 1);
  EXPECT_EQ(c.label_of(0.2500001), -1);
  EXPECT_DOUBLE_EQ(c.value(2), 3.0);
}

TEST(Split, SevenThreeOnTenRows) {
  const auto t = fixtures::credit_table(fixtures::kCreditTrain);
  const auto s = iwc::split_train_test(t, 0.7, 42);
  EXPECT_EQ(s.train_rows.size(), 7u);
  EXPECT_EQ(s.test_rows.size(), 3u);
  std::set<std::size_t> all(s.train_rows.begin(), s.train_rows.end());
  all.insert(s.test_rows.begin(), s.test_rows.end());
  EXPECT_EQ(all.size(), 10u);
}

TEST(Split, DeterministicInSeedAndSensitiveToIt) {
  iwc::ObservationTable t;
  t.y.assign(1000, 0.0);
  t.d.assign(1000, 0);
  t.u.resize(1000, 0);
  t.x.resize(1000, 0);
  t.z.resize(1000, 0);
  const auto a = iwc::split_train_test(t, 0.7, 9);
  const auto b = iwc::split_train_test(t, 0.7, 9);
  const auto c = iwc::split_train_test(t, 0.7, 10);
  EXPECT_EQ(a.train_rows, b.train_rows);
  EXPECT_EQ(a.test_rows, b.test_rows);
  EXPECT_NE(a.train_rows, c.train_rows);
  EXPECT_EQ(a.train_rows.size(), 700u);
  EXPECT_TRUE(std::is_sorted(a.train_rows.begin(), a.train_rows.end()));
}

TEST(Split, DegenerateFractionsThrow) {
  const auto t = fixtures::credit_table(fixtures::kCreditTrain);
  for (double f : {0.0, 1.0, -0.2, 1.5, 0.01, 0.99}) {
    try {
      iwc::split_train_test(t, f, 1);
      ADD_FAILURE() << "fraction " << f;
    } catch (const iwc::Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kDegenerateSplit);
    }
  }
}

TEST(Subpopulation, PartitionsTheRows) {
  const auto t = fixtures::credit_table(fixtures::kCreditTrain);
  const auto a = iwc::subpopulation(t, 0);
  const auto b = iwc::subpopulation(t, 1);
  EXPECT_EQ(a, (iwc::RowIndex{0, 1, 2, 3, 4}));
  EXPECT_EQ(b, (iwc::RowIndex{5, 6, 7, 8, 9}));
  const iwc::RowIndex some{1, 3, 6, 9};
  EXPECT_EQ(iwc::subpopulation(t, some, 1), (iwc::RowIndex{6, 9}));
  EXPECT_EQ(iwc::levels_missing_from(t, a, 2), std::vector<int>{1});
  EXPECT_TRUE(iwc::levels_missing_from(t, some, 2).empty());
}

TEST(Select, CopiesListedRows) {
  const auto t = fixtures::credit_table(fixtures::kCreditTrain);
  const iwc::RowIndex rows{9, 0};
  const auto s = t.select(rows);
  ASSERT_EQ(s.rows(), 2u);
  EXPECT_EQ(s.y[0], 0.551);
  EXPECT_EQ(s.d[1], 0);
  EXPECT_EQ(s.z(0, 0), 10000.0);
}

TEST(Csv, TableRoundTripIsExact) {
  auto t = fixtures::credit_table(fixtures::kCreditTrain);
  t.y[0] = 0.1 + 0.2;  // not representable in short decimal form
  t.u(3, 0) = -1.0 / 3.0;
  const auto path = temp_file("roundtrip.csv");
  iwc::write_table_csv(path, t, fixtures::credit_coding());
  const auto back = iwc::read_table_csv(path, fixtures::credit_coding());
  EXPECT_EQ(back.y, t.y);
  EXPECT_EQ(back.d, t.d);
  EXPECT_EQ(back.u, t.u);
  EXPECT_EQ(back.x, t.x);
  EXPECT_EQ(back.z, t.z);
  std::filesystem::remove(path);
}

TEST(Csv, UnknownTreatmentValueIsReported) {
  const auto t = fixtures::credit_table(fixtures::kCreditTrain);
  const auto path = temp_file("unknown.csv");
  iwc::write_table_csv(path, t, fixtures::credit_coding());
  try {
    iwc::read_table_csv(path, iwc::TreatmentCoding({1000.0, 3000.0}));
    ADD_FAILURE() << "expected UnknownTreatmentLabel";
  } catch (const iwc::TableValidationError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUnknownTreatmentLabel);
    EXPECT_EQ(e.violations().size(), 5u);
  }
  std::filesystem::remove(path);
}

TEST(Csv, MalformedFilesRaiseParseOrIoErrors) {
  const auto path = temp_file("bad.csv");
  {
    std::ofstream out(path);
    out << "y,d,z_1\n0.1,1000,abc\n";
  }
  try {
    iwc::read_table_csv(path, fixtures::credit_coding());
    ADD_FAILURE();
  } catch (const iwc::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kParseError);
  }
  try {
    iwc::read_csv(temp_file("does_not_exist.csv"));
    ADD_FAILURE();
  } catch (const iwc::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIoError);
  }
  std::filesystem::remove(path);
}

TEST(Csv, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1e-300, -2.5e17, 1.0 / 7.0, 0.0}) {
    EXPECT_EQ(std::stod(iwc::format_double(v)), v);
  }
}

}  // namespace
