#include "gsvr/io/history.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace gsvr::io {

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

void write_text(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

std::string format_history(const std::vector<HistoryRecord>& records) {
  std::ostringstream out;
  out << "epoch,lr,loss_total,loss_data,loss_reg,loss_outlier,wall_seconds,psnr,ssim\n";
  for (const auto& r : records) {
    out << r.epoch << ',' << num(r.lr) << ',' << num(r.loss_total) << ',' << num(r.loss_data) << ','
        << num(r.loss_reg) << ',' << num(r.loss_outlier) << ',' << num(r.wall_seconds) << ','
        << opt(r.psnr) << ',' << opt(r.ssim) << '\n';
  }
  return out.str();
}

void write_history(const std::vector<HistoryRecord>& records, const std::filesystem::path& path) {
  write_text(format_history(records), path);
}

std::vector<HistoryRecord> read_history(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("epoch,", 0) != 0) {
    throw IoError("history: missing header in " + path.string());
  }
  std::vector<HistoryRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 9) throw IoError("history: expected 9 columns in \"" + line + "\"");
    try {
      HistoryRecord r;
      r.epoch = std::stoi(cells[0]);
      r.lr = std::stod(cells[1]);
      r.loss_total = std::stod(cells[2]);
      r.loss_data = std::stod(cells[3]);
      r.loss_reg = std::stod(cells[4]);
      r.loss_outlier = std::stod(cells[5]);
      r.wall_seconds = std::stod(cells[6]);
      if (!cells[7].empty()) r.psnr = std::stod(cells[7]);
      if (!cells[8].empty()) r.ssim = std::stod(cells[8]);
      records.push_back(r);
    } catch (const std::logic_error&) {
      throw IoError("history: malformed row \"" + line + "\"");
    }
  }
  return records;
}

std::string format_convergence(const std::vector<HistoryRecord>& records) {
  std::ostringstream out;
  out << "epoch,wall_seconds,psnr,ssim\n";
  for (const auto& r : records) {
    if (!r.psnr || !r.ssim) continue;
    out << r.epoch << ',' << num(r.wall_seconds) << ',' << num(*r.psnr) << ',' << num(*r.ssim) << '\n';
  }
  return out.str();
}

}  // namespace gsvr::io
