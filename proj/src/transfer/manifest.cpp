#include "coserve/transfer/manifest.hpp"

#include <algorithm>

namespace coserve::transfer {

const char* module_kind_name(ModuleKind k) {
  switch (k) {
    case ModuleKind::ColumnLinear: return "column_linear";
    case ModuleKind::RowLinear: return "row_linear";
    case ModuleKind::Embedding: return "embedding";
    case ModuleKind::Norm: return "norm";
    case ModuleKind::Replicated: return "replicated";
  }
  return "?";
}

std::vector<ParamMeta> toy_transformer_manifest(const ModelSpec& spec) {
  std::vector<ParamMeta> m;
  const std::int64_t h = spec.hidden;
  const std::int64_t v = spec.vocab;
  auto add = [&](std::string name, ModuleKind kind, std::vector<std::int64_t> shape,
                 int layer) {
    m.push_back(ParamMeta{std::move(name), kind, std::move(shape), spec.dtype, layer});
  };
  add("embed.tokens", ModuleKind::Embedding, {v, h}, 0);
  for (int i = 0; i < spec.layers; ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    add(p + "attn.qkv", ModuleKind::ColumnLinear, {3 * h, h}, i);
    add(p + "attn.out", ModuleKind::RowLinear, {h, h}, i);
    add(p + "mlp.up", ModuleKind::ColumnLinear, {4 * h, h}, i);
    add(p + "mlp.down", ModuleKind::RowLinear, {h, 4 * h}, i);
    add(p + "norm1", ModuleKind::Norm, {h}, i);
    add(p + "norm2", ModuleKind::Norm, {h}, i);
  }
  add("final_norm", ModuleKind::Norm, {h}, spec.layers - 1);
  add("lm_head", ModuleKind::ColumnLinear, {v, h}, spec.layers - 1);
  return m;
}

int manifest_num_layers(const std::vector<ParamMeta>& manifest) {
  int n = 0;
  for (const auto& p : manifest) n = std::max(n, p.layer + 1);
  return n;
}

WeightMap random_weights(const std::vector<ParamMeta>& manifest, sim::RngStream& rng) {
  WeightMap w;
  for (const auto& p : manifest) {
    HostTensor t = HostTensor::zeros(p.dtype, p.shape);
    const std::int64_t n = t.elems();
    if (p.dtype == DType::F32) {
      float* d = t.f32();
      for (std::int64_t i = 0; i < n; ++i)
        d[i] = static_cast<float>(rng.uniform() * 2.0 - 1.0);
    } else {
      std::int32_t* d = t.i32();
      for (std::int64_t i = 0; i < n; ++i)
        d[i] = static_cast<std::int32_t>(rng.uniform_int(-1000, 1000));
    }
    w.emplace(p.name, std::move(t));
  }
  return w;
}

WeightMap perturb_weights(const WeightMap& base, double density, sim::RngStream& rng) {
  WeightMap out;
  for (const auto& [name, t] : base) {
    HostTensor nt = t;
    const std::int64_t n = nt.elems();
    if (nt.dtype == DType::F32) {
      float* d = nt.f32();
      for (std::int64_t i = 0; i < n; ++i) {
        if (rng.uniform() < density) {
          // |d| <= a few, so adding [0.5, 1.5) can never round back to the
          // original value.
          d[i] += static_cast<float>(0.5 + rng.uniform());
        }
      }
    } else {
      std::int32_t* d = nt.i32();
      for (std::int64_t i = 0; i < n; ++i) {
        if (rng.uniform() < density) d[i] += static_cast<std::int32_t>(rng.uniform_int(1, 100));
      }
    }
    out.emplace(name, std::move(nt));
  }
  return out;
}

}  // namespace coserve::transfer
