#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "iwc/error.hpp"

namespace iwc {

// Feature blocks are row-major so a customer's features are contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowIndex = std::vector<std::size_t>;

inline std::span<const double> row_span(const Matrix& m, std::size_t r) {
  return {m.data() + r * static_cast<std::size_t>(m.cols()),
          static_cast<std::size_t>(m.cols())};
}

// Observed outcome y, dense treatment label d in 0..n-1, and the three
// feature blocks: outcome-specific u, treatment-specific x, confounders z.
struct ObservationTable {
  std::vector<double> y;
  std::vector<int> d;
  Matrix u;
  Matrix x;
  Matrix z;

  std::size_t rows() const { return y.size(); }
  std::size_t p_u() const { return static_cast<std::size_t>(u.cols()); }
  std::size_t p_x() const { return static_cast<std::size_t>(x.cols()); }
  std::size_t p_z() const { return static_cast<std::size_t>(z.cols()); }

  // Copies the listed rows into a new table.
  ObservationTable select(std::span<const std::size_t> rows) const;
};

// The real-valued treatment levels d^1 < ... < d^n behind the dense labels.
class TreatmentCoding {
 public:
  explicit TreatmentCoding(std::vector<double> levels);

  std::size_t size() const { return levels_.size(); }
  double value(int label) const { return levels_.at(static_cast<std::size_t>(label)); }
  const std::vector<double>& levels() const { return levels_; }

  // Exact match of a raw treatment value; -1 when the value is not a level.
  int label_of(double value) const;

 private:
  std::vector<double> levels_;
};

struct SplitIndex {
  RowIndex train_rows;
  RowIndex test_rows;
};

struct Violation {
  ErrorKind kind;
  long row;  // -1 when the violation is not tied to a row
  std::string column;
  std::string message;
};

class TableValidationError : public Error {
 public:
  explicit TableValidationError(std::vector<Violation> violations);
  const std::vector<Violation>& violations() const { return violations_; }

 private:
  std::vector<Violation> violations_;
};

// Lists every violated table invariant; empty when the table is valid.
std::vector<Violation> check_table(const ObservationTable& table,
                                   const TreatmentCoding& coding);

// Returns the table unchanged when valid, throws TableValidationError listing
// every violation otherwise.
const ObservationTable& validate_table(const ObservationTable& table,
                                       const TreatmentCoding& coding);

// Uniform shuffle then the first round(fraction * N) rows go to training.
// Deterministic in (N, fraction, seed).
SplitIndex split_train_test(const ObservationTable& table, double fraction,
                            std::uint64_t seed);

// Levels that do not appear on the training side of a split.
std::vector<int> levels_missing_from(const ObservationTable& table,
                                     std::span<const std::size_t> rows,
                                     std::size_t n_levels);

RowIndex subpopulation(const ObservationTable& table, int level);
RowIndex subpopulation(const ObservationTable& table,
                       std::span<const std::size_t> rows, int level);
std::vector<std::size_t> level_counts(const ObservationTable& table,
                                      std::size_t n_levels);

// CSV layout: header `y,d,u_1..u_pu,x_1..x_px,z_1..z_pz`; `d` holds the raw
// treatment value. Numbers are written in shortest round-trip form.
ObservationTable read_table_csv(const std::filesystem::path& path,
                                const TreatmentCoding& coding);
void write_table_csv(const std::filesystem::path& path,
                     const ObservationTable& table,
                     const TreatmentCoding& coding);

// Generic numeric CSV with a header row.
struct CsvFrame {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name) const;
};
CsvFrame read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvFrame& frame);
std::string format_double(double v);

}  // namespace iwc
