#pragma once

#include <map>
#include <string>
#include <vector>

#include "coserve/sim/rng.hpp"
#include "coserve/transfer/tensor.hpp"

namespace coserve::transfer {

// How a parameter is laid out under tensor parallelism.
enum class ModuleKind : std::uint8_t {
  ColumnLinear,  // output-dim sharded: split along dim 0
  RowLinear,     // input-dim sharded: split along dim 1
  Embedding,     // vocab sharded: split along dim 0
  Norm,          // replicated
  Replicated,    // replicated (biases, scalars, ...)
};

const char* module_kind_name(ModuleKind k);

struct ParamMeta {
  std::string name;
  ModuleKind kind = ModuleKind::Replicated;
  std::vector<std::int64_t> shape;
  DType dtype = DType::F32;
  int layer = 0;  // owning pipeline layer (embedding -> 0, head -> last)
};

struct ModelSpec {
  int layers = 4;
  int hidden = 256;
  int vocab = 1024;
  DType dtype = DType::F32;
};

// Small transformer-shaped manifest used by the benchmarks and tests:
// embedding, per-layer fused qkv / attention out / mlp up / mlp down /
// two norms, a final norm and an lm head.
std::vector<ParamMeta> toy_transformer_manifest(const ModelSpec& spec);

int manifest_num_layers(const std::vector<ParamMeta>& manifest);

using WeightMap = std::map<std::string, HostTensor>;

// Seeded full-model weights, f32 in [-1, 1) (i32 in [-1000, 1000]).
WeightMap random_weights(const std::vector<ParamMeta>& manifest, sim::RngStream& rng);

// Next-step weights: each element is touched independently with probability
// `density`; touched elements change by a delta that can never round to
// zero, untouched elements are bit-identical to the base.
WeightMap perturb_weights(const WeightMap& base, double density, sim::RngStream& rng);

}  // namespace coserve::transfer
