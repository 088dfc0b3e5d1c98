#include "iwc/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "iwc/rng.hpp"

namespace iwc {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kNonFiniteValue: return "NonFiniteValue";
    case ErrorKind::kUnknownTreatmentLabel: return "UnknownTreatmentLabel";
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kDegenerateSplit: return "DegenerateSplit";
    case ErrorKind::kLevelMissingInTrain: return "LevelMissingInTrain";
    case ErrorKind::kSingularDesign: return "SingularDesign";
    case ErrorKind::kDimensionMismatch: return "DimensionMismatch";
    case ErrorKind::kEmptyTreatedGroup: return "EmptyTreatedGroup";
    case ErrorKind::kDomainError: return "DomainError";
    case ErrorKind::kDegenerateSlope: return "DegenerateSlope";
    case ErrorKind::kInvalidPath: return "InvalidPath";
    case ErrorKind::kFactorizationFailure: return "FactorizationFailure";
    case ErrorKind::kDegenerateScores: return "DegenerateScores";
    case ErrorKind::kConfigError: return "ConfigError";
    case ErrorKind::kAllTrueEffectsZero: return "AllTrueEffectsZero";
    case ErrorKind::kNoValidTriples: return "NoValidTriples";
    case ErrorKind::kDivisionByZero: return "DivisionByZeroErr";
    case ErrorKind::kZeroDenominator: return "ZeroDenominator";
    case ErrorKind::kInsufficientRepetitions: return "InsufficientRepetitions";
    case ErrorKind::kParseError: return "ParseError";
    case ErrorKind::kIoError: return "IoError";
  }
  return "Unknown";
}

ObservationTable ObservationTable::select(
    std::span<const std::size_t> rows) const {
  ObservationTable out;
  out.y.reserve(rows.size());
  out.d.reserve(rows.size());
  out.u.resize(static_cast<Eigen::Index>(rows.size()), u.cols());
  out.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
  out.z.resize(static_cast<Eigen::Index>(rows.size()), z.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(rows[k]);
    const auto dst = static_cast<Eigen::Index>(k);
    out.y.push_back(y[rows[k]]);
    out.d.push_back(d[rows[k]]);
    out.u.row(dst) = u.row(r);
    out.x.row(dst) = x.row(r);
    out.z.row(dst) = z.row(r);
  }
  return out;
}

TreatmentCoding::TreatmentCoding(std::vector<double> levels)
    : levels_(std::move(levels)) {
  if (levels_.size() < 2) {
    throw Error(ErrorKind::kConfigError,
                "a treatment coding needs at least two levels");
  }
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    if (!std::isfinite(levels_[i])) {
      throw Error(ErrorKind::kConfigError, "treatment levels must be finite");
    }
    if (i > 0 && !(levels_[i] > levels_[i - 1])) {
      throw Error(ErrorKind::kConfigError,
                  "treatment levels must be strictly increasing");
    }
  }
}

int TreatmentCoding::label_of(double value) const {
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    if (levels_[i] == value) return static_cast<int>(i);
  }
  return -1;
}

namespace {

std::string describe(const std::vector<Violation>& violations) {
  std::ostringstream os;
  os << violations.size() << " violation(s)";
  const std::size_t shown = std::min<std::size_t>(violations.size(), 10);
  for (std::size_t i = 0; i < shown; ++i) {
    os << "; " << to_string(violations[i].kind) << " " << violations[i].message;
  }
  if (shown < violations.size()) os << "; ...";
  return os.str();
}

void check_block(const Matrix& m, const char* name, std::size_t n,
                 std::vector<Violation>& out) {
  if (static_cast<std::size_t>(m.rows()) != n) {
    out.push_back({ErrorKind::kShapeMismatch, -1, name,
                   std::string(name) + " has " + std::to_string(m.rows()) +
                       " rows, expected " + std::to_string(n)});
    return;
  }
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (!std::isfinite(m(r, c))) {
        const std::string col = std::string(name) + "_" + std::to_string(c + 1);
        out.push_back({ErrorKind::kNonFiniteValue, static_cast<long>(r), col,
                       "row " + std::to_string(r) + " column " + col});
      }
    }
  }
}

}  // namespace

TableValidationError::TableValidationError(std::vector<Violation> violations)
    : Error(violations.empty() ? ErrorKind::kShapeMismatch
                               : violations.front().kind,
            describe(violations)),
      violations_(std::move(violations)) {}

std::vector<Violation> check_table(const ObservationTable& table,
                                   const TreatmentCoding& coding) {
  std::vector<Violation> out;
  const std::size_t n = table.y.size();
  if (n == 0) {
    out.push_back({ErrorKind::kShapeMismatch, -1, "y", "table has no rows"});
  }
  if (table.d.size() != n) {
    out.push_back({ErrorKind::kShapeMismatch, -1, "d",
                   "d has " + std::to_string(table.d.size()) +
                       " entries, expected " + std::to_string(n)});
  }
  for (std::size_t r = 0; r < n; ++r) {
    if (!std::isfinite(table.y[r])) {
      out.push_back({ErrorKind::kNonFiniteValue, static_cast<long>(r), "y",
                     "row " + std::to_string(r) + " column y"});
    }
  }
  const auto levels = static_cast<int>(coding.size());
  for (std::size_t r = 0; r < table.d.size(); ++r) {
    if (table.d[r] < 0 || table.d[r] >= levels) {
      out.push_back({ErrorKind::kUnknownTreatmentLabel, static_cast<long>(r),
                     "d",
                     "row " + std::to_string(r) + " label " +
                         std::to_string(table.d[r])});
    }
  }
  check_block(table.u, "u", n, out);
  check_block(table.x, "x", n, out);
  check_block(table.z, "z", n, out);
  return out;
}

const ObservationTable& validate_table(const ObservationTable& table,
                                       const TreatmentCoding& coding) {
  auto violations = check_table(table, coding);
  if (!violations.empty()) throw TableValidationError(std::move(violations));
  return table;
}

SplitIndex split_train_test(const ObservationTable& table, double fraction,
                            std::uint64_t seed) {
  const std::size_t n = table.rows();
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw Error(ErrorKind::kDegenerateSplit, "fraction must lie in (0, 1)");
  }
  const auto n_train =
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (n < 2 || n_train == 0 || n_train >= n) {
    throw Error(ErrorKind::kDegenerateSplit,
                "split of " + std::to_string(n) + " rows at fraction " +
                    format_double(fraction) + " leaves one side empty");
  }
  RowIndex order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Engine engine = make_engine(seed, streams::kSplit);
  std::shuffle(order.begin(), order.end(), engine);
  SplitIndex split;
  split.train_rows.assign(order.begin(), order.begin() + static_cast<long>(n_train));
  split.test_rows.assign(order.begin() + static_cast<long>(n_train), order.end());
  std::sort(split.train_rows.begin(), split.train_rows.end());
  std::sort(split.test_rows.begin(), split.test_rows.end());
  return split;
}

std::vector<int> levels_missing_from(const ObservationTable& table,
                                     std::span<const std::size_t> rows,
                                     std::size_t n_levels) {
  std::vector<bool> seen(n_levels, false);
  for (std::size_t r : rows) {
    const int label = table.d[r];
    if (label >= 0 && static_cast<std::size_t>(label) < n_levels) {
      seen[static_cast<std::size_t>(label)] = true;
    }
  }
  std::vector<int> missing;
  for (std::size_t j = 0; j < n_levels; ++j) {
    if (!seen[j]) missing.push_back(static_cast<int>(j));
  }
  return missing;
}

RowIndex subpopulation(const ObservationTable& table, int level) {
  RowIndex out;
  for (std::size_t r = 0; r < table.d.size(); ++r) {
    if (table.d[r] == level) out.push_back(r);
  }
  return out;
}

RowIndex subpopulation(const ObservationTable& table,
                       std::span<const std::size_t> rows, int level) {
  RowIndex out;
  for (std::size_t r : rows) {
    if (table.d[r] == level) out.push_back(r);
  }
  return out;
}

std::vector<std::size_t> level_counts(const ObservationTable& table,
                                      std::size_t n_levels) {
  std::vector<std::size_t> counts(n_levels, 0);
  for (int label : table.d) {
    if (label >= 0 && static_cast<std::size_t>(label) < n_levels) {
      ++counts[static_cast<std::size_t>(label)];
    }
  }
  return counts;
}

// ---------------------------------------------------------------- CSV

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

int CsvFrame::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  return -1;
}

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '"')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' ||
                   s[e - 1] == '"')) {
    --e;
  }
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(trim(std::string_view(line).substr(start)));
      break;
    }
    out.push_back(trim(std::string_view(line).substr(start, comma - start)));
    start = comma + 1;
  }
  return out;
}

double parse_double(const std::string& field, std::size_t line_no) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (!field.empty() && field[0] == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) {
    const std::string lower = [&] {
      std::string s = field;
      for (char& c : s) c = static_cast<char>(std::tolower(c));
      return s;
    }();
    if (lower == "nan") return std::nan("");
    if (lower == "inf" || lower == "+inf") return HUGE_VAL;
    if (lower == "-inf") return -HUGE_VAL;
    throw Error(ErrorKind::kParseError, "line " + std::to_string(line_no) +
                                            ": cannot parse '" + field + "'");
  }
  return v;
}

}  // namespace

CsvFrame read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIoError, "cannot open " + path.string());
  CsvFrame frame;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_line(line);
    if (frame.header.empty()) {
      frame.header = std::move(fields);
      continue;
    }
    if (fields.size() != frame.header.size()) {
      throw Error(ErrorKind::kParseError,
                  "line " + std::to_string(line_no) + " has " +
                      std::to_string(fields.size()) + " fields, header has " +
                      std::to_string(frame.header.size()));
    }
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto& f : fields) row.push_back(parse_double(f, line_no));
    frame.rows.push_back(std::move(row));
  }
  if (frame.header.empty()) {
    throw Error(ErrorKind::kParseError, path.string() + " has no header row");
  }
  return frame;
}

void write_csv(const std::filesystem::path& path, const CsvFrame& frame) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIoError, "cannot write " + path.string());
  for (std::size_t i = 0; i < frame.header.size(); ++i) {
    out << (i ? "," : "") << frame.header[i];
  }
  out << '\n';
  for (const auto& row : frame.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      out << (i ? "," : "") << format_double(row[i]);
    }
    out << '\n';
  }
}

namespace {

std::vector<int> block_columns(const CsvFrame& frame, const std::string& prefix) {
  std::vector<int> cols;
  for (int k = 1;; ++k) {
    const int c = frame.column(prefix + "_" + std::to_string(k));
    if (c < 0) break;
    cols.push_back(c);
  }
  return cols;
}

}  // namespace

ObservationTable read_table_csv(const std::filesystem::path& path,
                                const TreatmentCoding& coding) {
  const CsvFrame frame = read_csv(path);
  const int cy = frame.column("y");
  const int cd = frame.column("d");
  if (cy < 0 || cd < 0) {
    throw Error(ErrorKind::kParseError,
                path.string() + " must have columns y and d");
  }
  const auto cu = block_columns(frame, "u");
  const auto cx = block_columns(frame, "x");
  const auto cz = block_columns(frame, "z");
  const auto n = static_cast<Eigen::Index>(frame.rows.size());

  ObservationTable table;
  table.u.resize(n, static_cast<Eigen::Index>(cu.size()));
  table.x.resize(n, static_cast<Eigen::Index>(cx.size()));
  table.z.resize(n, static_cast<Eigen::Index>(cz.size()));
  std::vector<Violation> unknown;
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = frame.rows[static_cast<std::size_t>(r)];
    table.y.push_back(row[static_cast<std::size_t>(cy)]);
    const double raw = row[static_cast<std::size_t>(cd)];
    const int label = coding.label_of(raw);
    if (label < 0) {
      unknown.push_back({ErrorKind::kUnknownTreatmentLabel, static_cast<long>(r),
                         "d",
                         "row " + std::to_string(r) + " treatment value " +
                             format_double(raw)});
    }
    table.d.push_back(label);
    for (std::size_t k = 0; k < cu.size(); ++k) {
      table.u(r, static_cast<Eigen::Index>(k)) = row[static_cast<std::size_t>(cu[k])];
    }
    for (std::size_t k = 0; k < cx.size(); ++k) {
      table.x(r, static_cast<Eigen::Index>(k)) = row[static_cast<std::size_t>(cx[k])];
    }
    for (std::size_t k = 0; k < cz.size(); ++k) {
      table.z(r, static_cast<Eigen::Index>(k)) = row[static_cast<std::size_t>(cz[k])];
    }
  }
  if (!unknown.empty()) throw TableValidationError(std::move(unknown));
  return table;
}

void write_table_csv(const std::filesystem::path& path,
                     const ObservationTable& table,
                     const TreatmentCoding& coding) {
  CsvFrame frame;
  frame.header = {"y", "d"};
  for (std::size_t k = 1; k <= table.p_u(); ++k) frame.header.push_back("u_" + std::to_string(k));
  for (std::size_t k = 1; k <= table.p_x(); ++k) frame.header.push_back("x_" + std::to_string(k));
  for (std::size_t k = 1; k <= table.p_z(); ++k) frame.header.push_back("z_" + std::to_string(k));
  frame.rows.reserve(table.rows());
  for (std::size_t r = 0; r < table.rows(); ++r) {
    std::vector<double> row;
    row.reserve(frame.header.size());
    row.push_back(table.y[r]);
    row.push_back(coding.value(table.d[r]));
    const auto ri = static_cast<Eigen::Index>(r);
    for (Eigen::Index k = 0; k < table.u.cols(); ++k) row.push_back(table.u(ri, k));
    for (Eigen::Index k = 0; k < table.x.cols(); ++k) row.push_back(table.x(ri, k));
    for (Eigen::Index k = 0; k < table.z.cols(); ++k) row.push_back(table.z(ri, k));
    frame.rows.push_back(std::move(row));
  }
  write_csv(path, frame);
}

}  // namespace iwc
