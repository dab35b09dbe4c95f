#include "sct/report.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <map>
#include <memory>
#include <sstream>

#include <png.h>

#include "sct/errors.hpp"

namespace fs = std::filesystem;

namespace sct {

namespace {

std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string alpha_label(double a) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", a);
  return buf;
}

std::string cell(const MeanStd &m, bool bold) {
  const std::string s = fixed3(m.mean) + " ± " + fixed3(m.std);
  return bold ? "**" + s + "**" : s;
}

using Key = std::pair<int, double>; // quality (-1 when absent), alpha_a

int quality_key(const MetricsRecord &r) { return r.quality.value_or(-1); }

std::vector<std::string> split_csv_line(const std::string &line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

const std::vector<std::string> kMetricNames{"mae", "one_minus_ssim", "perceptual"};
const std::vector<std::string> kGroups{"model", "ct_only", "ct_warped"};

std::vector<std::string> csv_header() {
  std::vector<std::string> h{"kind", "alpha_a", "quality", "n_runs", "n_cases"};
  for (const auto &g : kGroups)
    for (const auto &m : kMetricNames) {
      h.push_back(g + "_" + m + "_mean");
      h.push_back(g + "_" + m + "_std");
    }
  return h;
}

void append_summary(std::vector<std::string> &row, const std::optional<MetricSummary> &s) {
  for (const MeanStd *m : {s ? &s->mae : nullptr, s ? &s->one_minus_ssim : nullptr, s ? &s->perceptual : nullptr}) {
    row.push_back(m ? full(m->mean) : "");
    row.push_back(m ? full(m->std) : "");
  }
}

double parse_double(const std::string &s) {
  size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception &) {
    throw DataError("bad number in CSV: '" + s + "'");
  }
  if (pos != s.size()) throw DataError("bad number in CSV: '" + s + "'");
  return v;
}

int parse_int(const std::string &s) {
  size_t pos = 0;
  int v = 0;
  try {
    v = std::stoi(s, &pos);
  } catch (const std::exception &) {
    throw DataError("bad integer in CSV: '" + s + "'");
  }
  if (pos != s.size()) throw DataError("bad integer in CSV: '" + s + "'");
  return v;
}

std::optional<MetricSummary> read_summary(const std::vector<std::string> &row, size_t at) {
  size_t filled = 0;
  for (size_t i = 0; i < 6; ++i) filled += row[at + i].empty() ? 0 : 1;
  const bool any = filled > 0, all = filled == 6;
  if (!any) return std::nullopt;
  if (!all) throw DataError("partially filled metric group in CSV");
  MetricSummary s;
  s.mae = {parse_double(row[at]), parse_double(row[at + 1])};
  s.one_minus_ssim = {parse_double(row[at + 2]), parse_double(row[at + 3])};
  s.perceptual = {parse_double(row[at + 4]), parse_double(row[at + 5])};
  return s;
}

} // namespace

TableFormat parse_table_format(std::string_view s) {
  if (s == "csv") return TableFormat::Csv;
  if (s == "markdown" || s == "md") return TableFormat::Markdown;
  throw ConfigError("unknown table format: " + std::string(s));
}

Improvement improvement(const MetricsRecord &stn, const MetricsRecord &mm, const MetricsRecord &base) {
  Improvement imp;
  if (!stn.ct_only) return imp;
  const auto better = [](double v, double a, double b, double c) { return v < a && v < b && v < c; };
  imp.mae = better(stn.model.mae.mean, mm.model.mae.mean, base.model.mae.mean, stn.ct_only->mae.mean);
  imp.one_minus_ssim = better(stn.model.one_minus_ssim.mean, mm.model.one_minus_ssim.mean,
                              base.model.one_minus_ssim.mean, stn.ct_only->one_minus_ssim.mean);
  imp.perceptual = better(stn.model.perceptual.mean, mm.model.perceptual.mean, base.model.perceptual.mean,
                          stn.ct_only->perceptual.mean);
  return imp;
}

std::string emit_table(const std::vector<MetricsRecord> &records, TableFormat format) {
  for (const auto &r : records) r.validate();

  if (format == TableFormat::Csv) {
    std::ostringstream out;
    const auto header = csv_header();
    for (size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << "\n";
    for (const auto &r : records) {
      std::vector<std::string> row{to_string(r.kind), r.alpha_a ? full(*r.alpha_a) : "",
                                   r.quality ? std::to_string(*r.quality) : "", std::to_string(r.n_runs),
                                   std::to_string(r.n_cases)};
      append_summary(row, r.model);
      append_summary(row, r.ct_only);
      append_summary(row, r.ct_warped);
      for (size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
      out << "\n";
    }
    return out.str();
  }

  std::map<int, const MetricsRecord *> base;
  std::map<Key, const MetricsRecord *> mm, stn;
  std::vector<int> qualities;
  for (const auto &r : records) {
    const int q = quality_key(r);
    if (std::find(qualities.begin(), qualities.end(), q) == qualities.end()) qualities.push_back(q);
    if (r.kind == ModelKind::Unimodal) {
      base[q] = &r;
    } else {
      auto &slot = (r.kind == ModelKind::MM ? mm : stn)[{q, *r.alpha_a}];
      if (slot) throw DataError("duplicate record for " + display_name(r.kind));
      slot = &r;
    }
  }
  std::sort(qualities.begin(), qualities.end());
  const bool with_quality = std::any_of(records.begin(), records.end(), [](const auto &r) { return r.quality.has_value(); });

  std::ostringstream out;
  out << "| |" << (with_quality ? " α_np |" : "") << " α_a | MAE | CT-only | 1-SSIM | CT-only | Perceptual | CT-only |\n";
  out << "|---|" << (with_quality ? "---|" : "") << "---|---|---|---|---|---|---|\n";
  const auto row = [&](const MetricsRecord &r, const std::string &alpha, Improvement imp) {
    out << "| " << display_name(r.kind) << " |";
    if (with_quality) out << " " << (r.quality ? std::to_string(*r.quality) : "") << " |";
    out << " " << alpha << " |";
    const auto ct = [&](const MeanStd MetricSummary::*m) { return r.ct_only ? cell((*r.ct_only).*m, false) : ""; };
    out << " " << cell(r.model.mae, imp.mae) << " | " << ct(&MetricSummary::mae) << " |";
    out << " " << cell(r.model.one_minus_ssim, imp.one_minus_ssim) << " | " << ct(&MetricSummary::one_minus_ssim) << " |";
    out << " " << cell(r.model.perceptual, imp.perceptual) << " | " << ct(&MetricSummary::perceptual) << " |\n";
  };

  for (int q : qualities) {
    const auto b = base.find(q);
    if (b != base.end()) row(*b->second, "", {});
    for (auto *group : {&mm, &stn}) {
      std::vector<std::pair<double, const MetricsRecord *>> rows;
      for (const auto &[k, r] : *group)
        if (k.first == q) rows.emplace_back(k.second, r);
      std::sort(rows.begin(), rows.end(), [](const auto &a, const auto &c) { return a.first > c.first; });
      for (const auto &[alpha, r] : rows) {
        Improvement imp;
        if (group == &stn) {
          const auto m = mm.find({q, alpha});
          if (m == mm.end() || b == base.end())
            throw IncompleteGrid("MM+STN row at alpha_a=" + alpha_label(alpha) + (q >= 0 ? " quality " + std::to_string(q) : "") +
                                 " has no " + (m == mm.end() ? "MM" : "Base") + " counterpart");
          imp = improvement(*r, *m->second, *b->second);
        }
        row(*r, alpha_label(alpha), imp);
      }
    }
  }
  return out.str();
}

std::vector<MetricsRecord> parse_csv(const std::string &csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV");
  const auto header = csv_header();
  if (split_csv_line(line) != header) throw DataError("unexpected CSV header");
  std::vector<MetricsRecord> out;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto row = split_csv_line(line);
    if (row.size() != header.size()) throw DataError("CSV row has " + std::to_string(row.size()) + " fields");
    MetricsRecord r;
    r.kind = parse_model_kind(row[0]);
    if (!row[1].empty()) r.alpha_a = parse_double(row[1]);
    if (!row[2].empty()) r.quality = parse_int(row[2]);
    r.n_runs = parse_int(row[3]);
    r.n_cases = parse_int(row[4]);
    const auto model = read_summary(row, 5);
    if (!model) throw DataError("CSV row without model metrics");
    r.model = *model;
    r.ct_only = read_summary(row, 11);
    r.ct_warped = read_summary(row, 17);
    r.validate();
    out.push_back(std::move(r));
  }
  return out;
}

GrayImage display_slice(const Volume &v) {
  const Shape3 s = v.shape();
  const torch::Tensor slice = v.data.select(0, s.d / 2).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8).contiguous();
  GrayImage img;
  img.width = s.w;
  img.height = s.h;
  img.pixels.assign(slice.data_ptr<uint8_t>(), slice.data_ptr<uint8_t>() + slice.numel());
  return img;
}

GrayImage render_montage(const Montage &m, int64_t gap) {
  if (m.panels.empty() || m.panels.front().empty()) throw InvalidArgument("montage needs at least one panel");
  const size_t cols = m.panels.front().size();
  const Shape3 shape = m.panels.front().front().shape();
  for (const auto &r : m.panels) {
    if (r.size() != cols) throw InvalidArgument("montage rows differ in length");
    for (const auto &v : r)
      if (v.shape() != shape) throw ShapeMismatch("montage panels differ in shape");
  }
  const int64_t rows = static_cast<int64_t>(m.panels.size());
  GrayImage img;
  img.width = static_cast<int64_t>(cols) * shape.w + (static_cast<int64_t>(cols) - 1) * gap;
  img.height = rows * shape.h + (rows - 1) * gap;
  img.pixels.assign(static_cast<size_t>(img.width * img.height), 0);
  for (int64_t r = 0; r < rows; ++r)
    for (size_t c = 0; c < cols; ++c) {
      const GrayImage p = display_slice(m.panels[r][c]);
      const int64_t y0 = r * (shape.h + gap), x0 = static_cast<int64_t>(c) * (shape.w + gap);
      for (int64_t y = 0; y < p.height; ++y)
        std::copy_n(p.pixels.begin() + y * p.width, p.width, img.pixels.begin() + (y0 + y) * img.width + x0);
    }
  return img;
}

void write_png(const GrayImage &img, const fs::path &path) {
  if (img.width <= 0 || img.height <= 0 || img.pixels.size() != static_cast<size_t>(img.width * img.height))
    throw InvalidArgument("image buffer does not match its size");
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::unique_ptr<FILE, int (*)(FILE *)> f(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!f) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int64_t y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * img.width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

GrayImage read_png(const fs::path &path) {
  std::unique_ptr<FILE, int (*)(FILE *)> f(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!f) throw IoError("cannot read " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed");
  }
  GrayImage img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw MalformedHeader("PNG decoding failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw UnsupportedDatatype("only 8-bit grayscale PNG is supported");
  }
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.pixels.resize(static_cast<size_t>(img.width * img.height));
  for (int64_t y = 0; y < img.height; ++y) png_read_row(png, img.pixels.data() + y * img.width, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void emit_qualitative(const Montage &m, const fs::path &path) { write_png(render_montage(m), path); }

} // namespace sct
