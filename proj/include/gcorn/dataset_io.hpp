#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gcorn/errors.hpp"
#include "gcorn/graph.hpp"

namespace gcorn {

namespace io_detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    const std::size_t b = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r') ++i;
    if (i > b) out.push_back(s.substr(b, i - b));
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v{};
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) return std::nullopt;
  return v;
}

inline std::optional<long long> parse_int(std::string_view s) {
  long long v{};
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) return std::nullopt;
  return v;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

inline std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace io_detail

struct DatasetPaths {
  std::filesystem::path edges;
  std::filesystem::path features;
  std::filesystem::path labels;
  std::filesystem::path split;
};

struct LoadOptions {
  bool normalize_features = false;
};

inline FeatureMatrix read_features(const std::filesystem::path& path) {
  using namespace io_detail;
  const auto lines = read_lines(path);
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  bool first = true;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto line = trim(lines[ln]);
    if (line.empty()) continue;
    const auto tokens = split(line, ',');
    if (first) {
      first = false;
      if (!parse_double(tokens.front())) continue;  // header row
    }
    if (cols == 0) cols = tokens.size();
    if (tokens.size() != cols)
      throw ParseError(path.string(), ln + 1, "expected " + std::to_string(cols) + " columns");
    for (auto t : tokens) {
      const auto v = parse_double(t);
      if (!v) throw ParseError(path.string(), ln + 1, "not a number: '" + std::string(t) + "'");
      if (!std::isfinite(*v)) throw ParseError(path.string(), ln + 1, "non-finite feature value");
      values.push_back(*v);
    }
    ++rows;
  }
  if (rows == 0) throw ParseError(path.string(), lines.size(), "no feature rows");
  return FeatureMatrix{DenseMatrix(rows, cols, std::move(values))};
}

inline Graph read_edges(const std::filesystem::path& path, std::size_t n) {
  using namespace io_detail;
  const auto lines = read_lines(path);
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    std::string_view line = lines[ln];
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto tokens = split_ws(line);
    if (tokens.size() != 2) throw ParseError(path.string(), ln + 1, "expected 'u v'");
    const auto u = parse_int(tokens[0]);
    const auto v = parse_int(tokens[1]);
    if (!u || !v || *u < 0 || *v < 0)
      throw ParseError(path.string(), ln + 1, "invalid node index");
    if (*u == *v) throw ParseError(path.string(), ln + 1, "self-loop not allowed");
    if (static_cast<std::size_t>(*u) >= n || static_cast<std::size_t>(*v) >= n) {
      throw IndexError(path.string() + ":" + std::to_string(ln + 1) + ": node index out of range (n=" +
                       std::to_string(n) + ")");
    }
    edges.emplace_back(static_cast<NodeId>(*u), static_cast<NodeId>(*v));
  }
  return Graph(n, edges);
}

inline std::vector<int> read_labels(const std::filesystem::path& path, std::size_t n) {
  using namespace io_detail;
  const auto lines = read_lines(path);
  std::vector<int> labels(n, -1);
  bool first = true;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto line = trim(lines[ln]);
    if (line.empty()) continue;
    const bool header_allowed = std::exchange(first, false);
    const auto tokens = split(line, ',');
    if (tokens.size() != 2) throw ParseError(path.string(), ln + 1, "expected 'node,label'");
    const auto node = parse_int(tokens[0]);
    const auto label = parse_int(tokens[1]);
    if (!node || !label) {
      if (header_allowed) continue;
      throw ParseError(path.string(), ln + 1, "invalid integer");
    }
    if (*node < 0 || static_cast<std::size_t>(*node) >= n)
      throw IndexError(path.string() + ":" + std::to_string(ln + 1) + ": node index out of range");
    if (*label < 0) throw ParseError(path.string(), ln + 1, "negative label");
    labels[static_cast<std::size_t>(*node)] = static_cast<int>(*label);
  }
  return labels;
}

struct Split {
  std::vector<NodeId> train, val, test;
};

inline Split read_split(const std::filesystem::path& path, std::size_t n) {
  using namespace io_detail;
  const auto lines = read_lines(path);
  Split s;
  bool have[3] = {false, false, false};
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto line = trim(lines[ln]);
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string_view::npos) throw ParseError(path.string(), ln + 1, "expected 'name:'");
    const auto name = trim(line.substr(0, colon));
    std::vector<NodeId>* target = nullptr;
    int slot = -1;
    if (name == "train") target = &s.train, slot = 0;
    else if (name == "val") target = &s.val, slot = 1;
    else if (name == "test") target = &s.test, slot = 2;
    else throw ParseError(path.string(), ln + 1, "unknown split '" + std::string(name) + "'");
    if (have[slot]) throw ParseError(path.string(), ln + 1, "duplicate split line");
    have[slot] = true;
    const auto rest = trim(line.substr(colon + 1));
    if (rest.empty()) continue;
    for (auto t : split(rest, ',')) {
      const auto v = parse_int(t);
      if (!v || *v < 0) throw ParseError(path.string(), ln + 1, "invalid node index");
      if (static_cast<std::size_t>(*v) >= n)
        throw IndexError(path.string() + ":" + std::to_string(ln + 1) + ": node index out of range");
      target->push_back(static_cast<NodeId>(*v));
    }
  }
  if (!(have[0] && have[1] && have[2]))
    throw ParseError(path.string(), lines.size(), "split file needs train:, val: and test: lines");
  return s;
}

// Node count is taken from the feature file.
inline Dataset load_dataset(const DatasetPaths& paths, const LoadOptions& opts = {}) {
  for (const auto* p : {&paths.edges, &paths.features, &paths.labels, &paths.split}) {
    if (!std::filesystem::exists(*p)) throw IoError("missing file: " + p->string());
  }
  Dataset ds;
  ds.features = read_features(paths.features);
  const std::size_t n = ds.features.rows();
  ds.graph = read_edges(paths.edges, n);
  ds.labels = read_labels(paths.labels, n);
  int max_label = -1;
  for (int y : ds.labels) max_label = std::max(max_label, y);
  ds.num_classes = max_label + 1;
  auto split = read_split(paths.split, n);
  ds.train = std::move(split.train);
  ds.val = std::move(split.val);
  ds.test = std::move(split.test);
  if (opts.normalize_features) normalize_rows(ds.features);
  ds.validate();
  return ds;
}

inline DatasetPaths dataset_paths_in(const std::filesystem::path& dir) {
  return {dir / "edges.txt", dir / "features.csv", dir / "labels.csv", dir / "split.txt"};
}

// Writes the four dataset files with shortest round-trip float formatting.
inline DatasetPaths save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  using namespace io_detail;
  std::filesystem::create_directories(dir);
  const auto paths = dataset_paths_in(dir);

  std::ostringstream e;
  e << "# " << ds.graph.num_nodes() << " nodes, " << ds.graph.num_edges() << " edges\n";
  for (auto [u, v] : ds.graph.edges()) e << u << ' ' << v << '\n';
  write_file(paths.edges, e.str());

  std::ostringstream f;
  const auto& x = ds.features.values;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (j) f << ',';
      f << format_double(x(i, j));
    }
    f << '\n';
  }
  write_file(paths.features, f.str());

  std::ostringstream l;
  l << "node,label\n";
  for (std::size_t u = 0; u < ds.labels.size(); ++u)
    if (ds.labels[u] >= 0) l << u << ',' << ds.labels[u] << '\n';
  write_file(paths.labels, l.str());

  std::ostringstream s;
  auto emit = [&s](const char* name, const std::vector<NodeId>& idx) {
    s << name << ':';
    for (std::size_t i = 0; i < idx.size(); ++i) s << (i ? "," : " ") << idx[i];
    s << '\n';
  };
  emit("train", ds.train);
  emit("val", ds.val);
  emit("test", ds.test);
  write_file(paths.split, s.str());
  return paths;
}

}  // namespace gcorn
