#include "diffrisk/libsvm.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "diffrisk/error.hpp"

namespace diffrisk {

namespace {

double parse_number(std::string_view text, std::size_t line) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (!text.empty() && *first == '+') {
    ++first;
  }
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw MalformedLine("libsvm line " + std::to_string(line) + ": bad number '" + std::string(text) + "'", line);
  }
  return value;
}

}  // namespace

std::string format_double(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, ec == std::errc() ? ptr : buf);
}

Dataset read_libsvm(std::istream& in, std::optional<std::size_t> expected_dim) {
  std::vector<double> labels;
  std::vector<std::vector<std::pair<std::size_t, double>>> rows;
  std::size_t max_index = 0;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) {
      raw.resize(hash);
    }
    std::istringstream tokens(raw);
    std::string tok;
    if (!(tokens >> tok)) {
      continue;
    }
    const double y = parse_number(tok, line_no);
    double label = 0.0;
    if (y == 1.0) {
      label = 1.0;
    } else if (y == -1.0 || y == 0.0) {
      label = -1.0;
    } else {
      throw LabelDomain("libsvm line " + std::to_string(line_no) + ": label " + tok + " is not binary");
    }
    std::vector<std::pair<std::size_t, double>> entries;
    while (tokens >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos || colon == 0) {
        throw MalformedLine("libsvm line " + std::to_string(line_no) + ": expected idx:val, got '" + tok + "'",
                            line_no);
      }
      const std::string_view idx_text(tok.data(), colon);
      std::size_t idx = 0;
      const auto [ptr, ec] = std::from_chars(idx_text.data(), idx_text.data() + idx_text.size(), idx);
      if (ec != std::errc() || ptr != idx_text.data() + idx_text.size() || idx == 0) {
        throw MalformedLine("libsvm line " + std::to_string(line_no) + ": bad feature index '" +
                                std::string(idx_text) + "'",
                            line_no);
      }
      const double val = parse_number(std::string_view(tok).substr(colon + 1), line_no);
      if (expected_dim && idx > *expected_dim) {
        throw MalformedLine("libsvm line " + std::to_string(line_no) + ": index " + std::to_string(idx) +
                                " exceeds dimension " + std::to_string(*expected_dim),
                            line_no);
      }
      max_index = std::max(max_index, idx);
      entries.emplace_back(idx - 1, val);
    }
    labels.push_back(label);
    rows.push_back(std::move(entries));
  }
  const std::size_t dim = expected_dim ? *expected_dim : max_index;
  if (dim == 0) {
    throw ValidationError("libsvm: could not determine a positive feature dimension");
  }
  Matrix features = Matrix::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    for (const auto& [i, v] : rows[j]) {
      features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  }
  Vector y = Eigen::Map<const Vector>(labels.data(), static_cast<Eigen::Index>(labels.size()));
  return Dataset::uniform(std::move(features), std::move(y));
}

Dataset load_libsvm(const std::string& path, std::optional<std::size_t> expected_dim) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("libsvm: cannot open '" + path + "'");
  }
  return read_libsvm(in, expected_dim);
}

void write_libsvm(std::ostream& out, const Dataset& data) {
  for (std::size_t j = 0; j < data.size(); ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    out << (data.labels(c) > 0.0 ? "+1" : "-1");
    for (Eigen::Index i = 0; i < data.features.rows(); ++i) {
      const double v = data.features(i, c);
      if (v != 0.0) {
        out << ' ' << (i + 1) << ':' << format_double(v);
      }
    }
    out << '\n';
  }
}

}  // namespace diffrisk
