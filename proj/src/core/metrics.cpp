#include "sslattn/metrics.hpp"

#include "sslattn/errors.hpp"

#include <sstream>

namespace sslattn {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::optional<double> opt_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

}  // namespace

MetricsLog::MetricsLog(const std::filesystem::path& file, std::optional<int> keep_through_epoch) {
  std::vector<std::string> kept;
  if (keep_through_epoch && std::filesystem::exists(file)) {
    std::ifstream in(file);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      auto cells = split_csv(line);
      if (cells.size() >= 2 && std::stoi(cells[1]) <= *keep_through_epoch) kept.push_back(line);
    }
  }
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  out_.open(file, std::ios::trunc);
  if (!out_) throw DatasetError("cannot open metrics log " + file.string());
  out_.precision(17);
  out_ << kMetricsHeader << '\n';
  for (const auto& line : kept) out_ << line << '\n';
  out_.flush();
}

void MetricsLog::write(const StepRecord& r) {
  out_ << r.step << ',' << r.epoch << ',' << r.l_ssl << ',' << r.l_mu << ',' << r.l_cls << ',' << r.l_total << ','
       << r.lr_core << ',' << r.lr_attn << ",\n";
  out_.flush();
}

void MetricsLog::write(const EpochRecord& r) {
  out_ << ',' << r.epoch << ',' << r.l_ssl << ',' << r.l_mu << ',' << r.l_cls << ',' << r.l_total << ",,,";
  if (r.knn_top1) out_ << *r.knn_top1;
  out_ << '\n';
  out_.flush();
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DatasetError("cannot read metrics log " + file.string());
  std::string line;
  std::getline(in, line);
  if (line != kMetricsHeader) throw DatasetError("unexpected metrics header in " + file.string());
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    auto c = split_csv(line);
    if (c.size() != 9) throw DatasetError("malformed metrics row: " + line);
    MetricsRow r;
    if (!c[0].empty()) r.step = std::stoll(c[0]);
    r.epoch = std::stoi(c[1]);
    r.l_ssl = std::stod(c[2]);
    r.l_mu = std::stod(c[3]);
    r.l_cls = std::stod(c[4]);
    r.l_total = std::stod(c[5]);
    r.lr_core = opt_number(c[6]);
    r.lr_attn = opt_number(c[7]);
    r.knn_top1 = opt_number(c[8]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace sslattn
