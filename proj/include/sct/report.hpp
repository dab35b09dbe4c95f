#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sct/evaluator.hpp"

namespace sct {

enum class TableFormat { Csv, Markdown };

TableFormat parse_table_format(std::string_view s);

/// Which metrics of an MM+STN record beat every baseline of its group.
struct Improvement {
  bool mae = false;
  bool one_minus_ssim = false;
  bool perceptual = false;
};

/// Strict improvement of `stn` over `mm`, `base` and stn's own CT-only column,
/// metric by metric. A missing CT-only column counts as no improvement.
Improvement improvement(const MetricsRecord &stn, const MetricsRecord &mm, const MetricsRecord &base);

/// Markdown groups rows by quality, then Base, MM (alpha_a descending) and
/// MM+STN (alpha_a descending), with CT-only columns after each metric and
/// improvements in bold. Throws IncompleteGrid when an MM+STN row lacks its
/// MM or Base counterpart. CSV holds one row per record at full precision.
std::string emit_table(const std::vector<MetricsRecord> &records, TableFormat format);

/// Inverse of the CSV form of emit_table.
std::vector<MetricsRecord> parse_csv(const std::string &csv);

/// Rows of equally shaped volumes, one montage row each.
struct Montage {
  std::vector<std::string> row_labels;
  std::vector<std::string> column_labels;
  std::vector<std::vector<Volume>> panels;
};

struct GrayImage {
  int64_t width = 0;
  int64_t height = 0;
  std::vector<uint8_t> pixels; // row-major
};

/// Mid-axial slice clamped to [0, 1] and scaled to 0..255 with rounding.
GrayImage display_slice(const Volume &v);

/// Tiles the mid-axial slices into one grayscale image with `gap` black
/// pixels between panels.
GrayImage render_montage(const Montage &m, int64_t gap = 2);

void write_png(const GrayImage &img, const std::filesystem::path &path);
GrayImage read_png(const std::filesystem::path &path);

/// render_montage then write_png.
void emit_qualitative(const Montage &m, const std::filesystem::path &path);

} // namespace sct
