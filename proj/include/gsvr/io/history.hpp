#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gsvr/train.hpp"

namespace gsvr::io {

/// CSV with header
///   epoch,lr,loss_total,loss_data,loss_reg,loss_outlier,wall_seconds,psnr,ssim
/// one row per record; psnr/ssim are empty when not evaluated.
std::string format_history(const std::vector<HistoryRecord>& records);
void write_history(const std::vector<HistoryRecord>& records, const std::filesystem::path& path);
std::vector<HistoryRecord> read_history(const std::filesystem::path& path);

/// Rows of the history that carry metrics, as epoch,wall_seconds,psnr,ssim.
std::string format_convergence(const std::vector<HistoryRecord>& records);

}  // namespace gsvr::io
