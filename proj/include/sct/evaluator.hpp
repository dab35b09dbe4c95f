#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sct/pipeline.hpp"

namespace sct {

struct MetricTriple {
  double mae = 0.0;
  double one_minus_ssim = 0.0;
  double perceptual = 0.0;
};

/// The loss functions evaluated as metrics on one pair of volumes.
MetricTriple compute_metrics(const Volume &prediction, const Volume &target, const LossContext &ctx);

struct CaseMetrics {
  std::string case_id;
  MetricTriple model;
  MetricTriple ct_only;                  // metric(U_CT, Y)
  std::optional<MetricTriple> ct_warped; // metric(V_CT, Y), MM+STN only
  std::optional<double> displacement_before;
  std::optional<double> displacement_after; // residual misalignment after the STN
};

/// Per-case metrics of a trained model on held-out samples (eval mode).
std::vector<CaseMetrics> evaluate(SynthesisModel &model, const std::vector<PairedSample> &test_samples,
                                  const LossContext &ctx);

/// Metrics between the CT-side input and the aligned CT, no synthesis model
/// involved: U_CT for MM rows, the STN-warped CT for MM+STN diagnostics.
MetricTriple ct_only_baseline(const PairedSample &sample, const LossContext &ctx);
MetricTriple ct_only_baseline(const PairedSample &sample, const Volume &warped_ct, const LossContext &ctx);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0; // population standard deviation
};

MeanStd aggregate(std::span<const double> values);

struct MetricSummary {
  MeanStd mae;
  MeanStd one_minus_ssim;
  MeanStd perceptual;
};

MetricSummary summarize(std::span<const MetricTriple> triples);

/// One table cell group: a model's metrics plus its CT-only columns.
struct MetricsRecord {
  ModelKind kind = ModelKind::MM;
  std::optional<double> alpha_a; // absent for the unimodal baseline
  std::optional<int> quality;    // absent for datasets without a quality ladder
  MetricSummary model;
  std::optional<MetricSummary> ct_only;
  std::optional<MetricSummary> ct_warped;
  int n_runs = 0;
  int n_cases = 0;

  void validate() const;
};

/// Pool every case from every split of a cell into one record.
MetricsRecord make_record(ModelKind kind, std::optional<double> alpha_a, std::optional<int> quality,
                          const std::vector<std::vector<CaseMetrics>> &runs);

} // namespace sct
