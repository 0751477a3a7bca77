#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ehdiscrim/io.hpp"
#include "ehdiscrim/model.hpp"
#include "ehdiscrim/optimizer.hpp"

namespace ehd {

// Checkpoint layout: 8-byte magic, a key=value metadata block, then named
// f32 arrays (parameters as "p.<name>", Adam moments as "m."/"v."). Values
// are stored at 32-bit precision; a float-typed model round-trips bit-exactly.
inline constexpr char kCheckpointMagic[8] = {'E', 'H', 'D', 'C',
                                             'K', 'P', 'T', '1'};

struct CheckpointMeta {
  size_t step = 0;
  uint64_t seed = 0;
  std::map<std::string, std::string> extra;
};

// Geometry keys beyond the always-written vocab_size/layers/hidden, enough
// to rebuild the model from the file alone.
inline std::map<std::string, std::string> model_geometry_meta(
    const ModelConfig& cfg) {
  return {{"heads", std::to_string(cfg.heads)},
          {"intermediate", std::to_string(cfg.intermediate)},
          {"embedding_size", std::to_string(cfg.embedding_size)},
          {"max_positions", std::to_string(cfg.max_positions)},
          {"gen_mult_num", std::to_string(cfg.gen_mult_num)},
          {"gen_mult_den", std::to_string(cfg.gen_mult_den)},
          {"dropout", std::to_string(cfg.dropout)}};
}

inline ModelConfig model_config_from_meta(const CheckpointMeta& meta) {
  ModelConfig cfg;
  auto want = [&](const std::string& key) {
    auto it = meta.extra.find(key);
    if (it == meta.extra.end())
      throw std::runtime_error("checkpoint lacks model geometry key " + key);
    return it->second;
  };
  cfg.vocab_size = std::stoull(want("vocab_size"));
  cfg.layers = std::stoull(want("layers"));
  cfg.hidden = std::stoull(want("hidden"));
  cfg.heads = std::stoull(want("heads"));
  cfg.intermediate = std::stoull(want("intermediate"));
  cfg.embedding_size = std::stoull(want("embedding_size"));
  cfg.max_positions = std::stoull(want("max_positions"));
  cfg.gen_mult_num = static_cast<unsigned>(std::stoul(want("gen_mult_num")));
  cfg.gen_mult_den = static_cast<unsigned>(std::stoul(want("gen_mult_den")));
  cfg.dropout = std::stod(want("dropout"));
  cfg.validate();
  return cfg;
}

namespace detail {

template <typename S>
void put_array(std::ostream& out, const std::string& name, const Tensor<S>& t) {
  put_u32(out, static_cast<uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(out, static_cast<uint32_t>(t.shape.size()));
  for (size_t d : t.shape) put_u32(out, static_cast<uint32_t>(d));
  for (const S& v : t.data) put_f32(out, static_cast<float>(v));
}

template <typename S>
std::pair<std::string, Tensor<S>> get_array(std::istream& in) {
  const uint32_t name_len = get_u32(in);
  std::string name(name_len, '\0');
  if (!in.read(name.data(), name_len))
    throw std::runtime_error("truncated checkpoint: array name");
  const uint32_t rank = get_u32(in);
  std::vector<size_t> shape;
  size_t numel = 1;
  for (uint32_t r = 0; r < rank; ++r) {
    shape.push_back(get_u32(in));
    numel *= shape.back();
  }
  Tensor<S> t = Tensor<S>::zeros(shape);
  for (size_t i = 0; i < numel; ++i) t.data[i] = static_cast<S>(get_f32(in));
  return {std::move(name), std::move(t)};
}

}  // namespace detail

template <typename S>
void write_checkpoint(const std::string& path, const Model<S>& model,
                      Adam<S>* opt, const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, 8);

  std::ostringstream mb;
  mb << "step=" << meta.step << "\n";
  mb << "seed=" << meta.seed << "\n";
  mb << "adam_t=" << (opt ? opt->steps_taken() : 0) << "\n";
  mb << "vocab_size=" << model.cfg.vocab_size << "\n";
  mb << "layers=" << model.cfg.layers << "\n";
  mb << "hidden=" << model.cfg.hidden << "\n";
  for (const auto& [k, v] : meta.extra) mb << k << "=" << v << "\n";
  const std::string metas = mb.str();
  detail::put_u32(out, static_cast<uint32_t>(metas.size()));
  out.write(metas.data(), static_cast<std::streamsize>(metas.size()));

  const auto params = model.store.all();
  const uint32_t count =
      static_cast<uint32_t>(params.size() * (opt ? 3 : 1));
  detail::put_u32(out, count);
  for (const Parameter<S>* p : params)
    detail::put_array(out, "p." + p->name, p->value);
  if (opt) {
    if (opt->params().size() != params.size())
      throw std::logic_error("write_checkpoint: optimizer/model param mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
      detail::put_array(out, "m." + params[i]->name, opt->first_moment(i));
      detail::put_array(out, "v." + params[i]->name, opt->second_moment(i));
    }
  }
  if (!out) throw std::runtime_error("write failure on checkpoint " + path);
}

// Metadata block only, enough to size a model before loading arrays.
inline CheckpointMeta read_checkpoint_meta(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  const uint32_t meta_len = detail::get_u32(in);
  std::string metas(meta_len, '\0');
  if (!in.read(metas.data(), meta_len))
    throw std::runtime_error("truncated checkpoint: metadata");
  CheckpointMeta meta;
  std::istringstream ms(metas);
  std::string line;
  while (std::getline(ms, line)) {
    const size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    if (k == "step")
      meta.step = std::stoull(v);
    else if (k == "seed")
      meta.seed = std::stoull(v);
    else if (k != "adam_t")
      meta.extra[k] = v;
  }
  return meta;
}

// Loads arrays into an already-built model (and optimizer, when given);
// every parameter must be present with its exact shape.
template <typename S>
CheckpointMeta read_checkpoint(const std::string& path, Model<S>& model,
                               Adam<S>* opt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);

  const uint32_t meta_len = detail::get_u32(in);
  std::string metas(meta_len, '\0');
  if (!in.read(metas.data(), meta_len))
    throw std::runtime_error("truncated checkpoint: metadata");
  CheckpointMeta meta;
  std::istringstream ms(metas);
  std::string line;
  size_t adam_t = 0;
  while (std::getline(ms, line)) {
    const size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    if (k == "step")
      meta.step = std::stoull(v);
    else if (k == "seed")
      meta.seed = std::stoull(v);
    else if (k == "adam_t")
      adam_t = std::stoull(v);
    else
      meta.extra[k] = v;
  }

  std::map<std::string, Tensor<S>> arrays;
  const uint32_t count = detail::get_u32(in);
  for (uint32_t i = 0; i < count; ++i) {
    auto [name, t] = detail::get_array<S>(in);
    if (!arrays.emplace(std::move(name), std::move(t)).second)
      throw std::runtime_error("duplicate array in checkpoint");
  }

  auto take = [&](const std::string& name, Tensor<S>& dst) {
    auto it = arrays.find(name);
    if (it == arrays.end())
      throw std::runtime_error("checkpoint missing array " + name);
    if (it->second.shape != dst.shape)
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    dst = std::move(it->second);
    arrays.erase(it);
  };
  const auto params = model.store.all();
  for (Parameter<S>* p : params) take("p." + p->name, p->value);
  if (opt) {
    if (opt->params().size() != params.size())
      throw std::logic_error("read_checkpoint: optimizer/model param mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
      take("m." + params[i]->name, opt->first_moment(i));
      take("v." + params[i]->name, opt->second_moment(i));
    }
    opt->set_steps_taken(adam_t);
  }
  return meta;
}

}  // namespace ehd
