#include "sct/pipeline.hpp"

#include "sct/errors.hpp"

namespace sct {

std::string to_string(ModelKind k) {
  switch (k) {
  case ModelKind::Unimodal: return "unimodal";
  case ModelKind::MM: return "mm";
  case ModelKind::MMSTN: return "mm_stn";
  }
  return "mm";
}

ModelKind parse_model_kind(std::string_view s) {
  if (s == "unimodal" || s == "base") return ModelKind::Unimodal;
  if (s == "mm") return ModelKind::MM;
  if (s == "mm_stn" || s == "mm+stn") return ModelKind::MMSTN;
  throw ConfigError("unknown model variant '" + std::string(s) + "' (expected unimodal|mm|mm_stn)");
}

std::string display_name(ModelKind k) {
  switch (k) {
  case ModelKind::Unimodal: return "Base";
  case ModelKind::MM: return "MM";
  case ModelKind::MMSTN: return "MM+STN";
  }
  return "MM";
}

Batch stack_samples(std::span<const PairedSample> samples, torch::Dtype dtype) {
  if (samples.empty()) throw InvalidArgument("cannot stack an empty sample list");
  std::vector<torch::Tensor> cbct, u_ct, y;
  const Shape3 shape = samples.front().y.shape();
  for (const auto &s : samples) {
    if (s.cbct.shape() != shape || s.u_ct.shape() != shape || s.y.shape() != shape)
      throw ShapeMismatch("sample " + s.case_id + " has inconsistent volume shapes");
    cbct.push_back(s.cbct.data);
    u_ct.push_back(s.u_ct.data);
    y.push_back(s.y.data);
  }
  const auto stack = [dtype](const std::vector<torch::Tensor> &v) { return torch::stack(v).unsqueeze(1).to(dtype); };
  return {stack(cbct), stack(u_ct), stack(y)};
}

SynthesisModelImpl::SynthesisModelImpl(ModelConfig cfg) : cfg_(cfg) {
  cfg_.unet.in_channels = cfg_.kind == ModelKind::Unimodal ? 1 : 2;
  unet = register_module("unet", UNet3d(cfg_.unet));
  if (cfg_.kind == ModelKind::MMSTN) stn = register_module("stn", SpatialTransformer(cfg_.localization));
}

ForwardOutput SynthesisModelImpl::forward(const Batch &batch) {
  ForwardOutput out;
  switch (cfg_.kind) {
  case ModelKind::Unimodal:
    out.y_hat = unet->forward(batch.cbct);
    break;
  case ModelKind::MM:
    if (!batch.u_ct.defined()) throw InvalidArgument("MM model needs the preoperative CT");
    out.y_hat = unet->forward(torch::cat({batch.u_ct, batch.cbct}, 1));
    break;
  case ModelKind::MMSTN: {
    if (!batch.u_ct.defined()) throw InvalidArgument("MM+STN model needs the preoperative CT");
    StnOutput reg = stn->forward(batch.u_ct, batch.cbct);
    out.y_hat = unet->forward(torch::cat({reg.warped, batch.cbct}, 1));
    out.v_ct = reg.warped;
    out.theta = reg.theta;
    break;
  }
  }
  return out;
}

SynthesisModel make_model(const ModelConfig &cfg, uint64_t seed) {
  torch::manual_seed(seed);
  return SynthesisModel(cfg);
}

LossTerms loss_for(ModelKind kind, const ForwardOutput &out, const torch::Tensor &y, const LossContext &ctx) {
  if (!ctx.extractor) throw InvalidArgument("loss context has no feature extractor");
  LossTerms terms = composite(out.y_hat, y, ctx.weights, *ctx.extractor, ctx.ssim);
  if (kind == ModelKind::MMSTN) {
    if (!out.v_ct) throw InvalidArgument("MM+STN loss requires the warped CT");
    terms.registration = registration_loss(*out.v_ct, y, ctx.weights.reg_weight);
    terms.total = terms.total + terms.registration;
  }
  return terms;
}

VolumeForward forward(SynthesisModel &model, const PairedSample &sample) {
  torch::NoGradGuard no_grad;
  auto params = model->parameters();
  const auto dtype = params.empty() ? torch::kFloat32 : params.front().scalar_type();
  const Batch batch = stack_samples(std::span<const PairedSample>(&sample, 1), dtype);
  const ForwardOutput out = model->forward(batch);
  VolumeForward result;
  result.y_hat = sample.y.with_data(out.y_hat[0][0].to(torch::kFloat32).contiguous());
  result.y_hat.modality = Modality::SCT;
  result.y_hat.domain = IntensityDomain::Logit;
  if (out.v_ct) {
    result.v_ct = sample.u_ct.with_data((*out.v_ct)[0][0].to(torch::kFloat32).contiguous());
    result.theta = AffineMatrix::from_tensor(out.theta[0]);
  }
  return result;
}

} // namespace sct
