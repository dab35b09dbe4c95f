#include "sct/evaluator.hpp"

#include <cmath>

#include "sct/errors.hpp"

namespace sct {

MetricTriple compute_metrics(const Volume &prediction, const Volume &target, const LossContext &ctx) {
  if (prediction.shape() != target.shape())
    throw ShapeMismatch("metric operands differ in shape: " + to_string(prediction.shape()) + " vs " +
                        to_string(target.shape()));
  if (!ctx.extractor) throw InvalidArgument("metrics need a feature extractor");
  torch::NoGradGuard no_grad;
  const torch::Tensor a = prediction.data.unsqueeze(0).unsqueeze(0);
  const torch::Tensor b = target.data.unsqueeze(0).unsqueeze(0);
  MetricTriple m;
  m.mae = mae(a, b).item<double>();
  m.one_minus_ssim = 1.0 - ssim(a, b, ctx.ssim).item<double>();
  m.perceptual = perceptual(a, b, *ctx.extractor).item<double>();
  return m;
}

MetricTriple ct_only_baseline(const PairedSample &sample, const LossContext &ctx) {
  if (!sample.u_ct.data.defined() || !sample.y.data.defined())
    throw InvalidArgument("CT-only baseline needs U_CT and Y");
  return compute_metrics(sample.u_ct, sample.y, ctx);
}

MetricTriple ct_only_baseline(const PairedSample &sample, const Volume &warped_ct, const LossContext &ctx) {
  if (!sample.y.data.defined()) throw InvalidArgument("CT-only baseline needs Y");
  return compute_metrics(warped_ct, sample.y, ctx);
}

std::vector<CaseMetrics> evaluate(SynthesisModel &model, const std::vector<PairedSample> &test_samples,
                                  const LossContext &ctx) {
  const bool was_training = model->is_training();
  model->eval();
  std::vector<CaseMetrics> out;
  out.reserve(test_samples.size());
  for (const auto &s : test_samples) {
    const VolumeForward fwd = forward(model, s);
    CaseMetrics c;
    c.case_id = s.case_id;
    c.model = compute_metrics(fwd.y_hat, s.y, ctx);
    c.ct_only = ct_only_baseline(s, ctx);
    if (fwd.v_ct) {
      c.ct_warped = ct_only_baseline(s, *fwd.v_ct, ctx);
      const Shape3 shape = s.y.shape();
      c.displacement_before = mean_displacement(s.truth, shape);
      // v_ct(o) = U_CT(theta o) = Y(truth theta o)
      c.displacement_after = mean_displacement(s.truth.compose(*fwd.theta), shape);
    }
    out.push_back(std::move(c));
  }
  model->train(was_training);
  return out;
}

MeanStd aggregate(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("cannot aggregate an empty metric list");
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

MetricSummary summarize(std::span<const MetricTriple> triples) {
  std::vector<double> a, b, c;
  for (const auto &t : triples) {
    a.push_back(t.mae);
    b.push_back(t.one_minus_ssim);
    c.push_back(t.perceptual);
  }
  return {aggregate(a), aggregate(b), aggregate(c)};
}

void MetricsRecord::validate() const {
  const auto check = [](const MetricSummary &s) {
    for (const MeanStd &m : {s.mae, s.one_minus_ssim, s.perceptual})
      if (!std::isfinite(m.mean) || !std::isfinite(m.std) || m.std < 0)
        throw DataError("metrics record holds a non-finite value or negative std");
  };
  check(model);
  if (ct_only) check(*ct_only);
  if (ct_warped) check(*ct_warped);
  if (kind != ModelKind::Unimodal && !alpha_a) throw DataError("multimodal records need an alpha_a");
}

MetricsRecord make_record(ModelKind kind, std::optional<double> alpha_a, std::optional<int> quality,
                          const std::vector<std::vector<CaseMetrics>> &runs) {
  std::vector<MetricTriple> model, ct_only, ct_warped;
  for (const auto &run : runs)
    for (const auto &c : run) {
      model.push_back(c.model);
      ct_only.push_back(c.ct_only);
      if (c.ct_warped) ct_warped.push_back(*c.ct_warped);
    }
  if (model.empty()) throw DataError("no evaluated cases for record");
  MetricsRecord r;
  r.kind = kind;
  r.alpha_a = kind == ModelKind::Unimodal ? std::nullopt : alpha_a;
  r.quality = quality;
  r.model = summarize(model);
  if (kind != ModelKind::Unimodal) r.ct_only = summarize(ct_only);
  if (!ct_warped.empty()) r.ct_warped = summarize(ct_warped);
  r.n_runs = static_cast<int>(runs.size());
  r.n_cases = static_cast<int>(model.size());
  return r;
}

} // namespace sct
