/* Copyright 2026 The ffwd Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "ffwd/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iostream>
#include <iterator>
#include <set>

#include "ffwd/errors.hpp"

namespace ffwd {
namespace {

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void f32s(std::span<const float> v) {
    for (float f : v) u32(std::bit_cast<std::uint32_t>(f));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(std::uint64_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  void need(std::uint64_t n, const char* what) const {
    if (n > bytes_.size() - pos_) {
      throw ValidationError(std::string("checkpoint truncated while reading ") + what);
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct DirEntry {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::uint64_t offset = 0;
  std::uint64_t nbytes = 0;
};

std::uint64_t element_count(const std::vector<std::uint64_t>& shape) {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string layer_name(std::size_t l, const char* suffix) {
  return "layers." + std::to_string(l) + "." + suffix;
}

std::string aux_name(const char* kind, std::size_t l, const char* suffix) {
  return std::string(kind) + "." + std::to_string(l) + "." + suffix;
}

}  // namespace

void TensorArchive::put(const std::string& name, const Matrix& m) {
  put(TensorEntry{name, {m.rows(), m.cols()}, m.storage()});
}

void TensorArchive::put(const std::string& name, std::span<const float> v) {
  put(TensorEntry{name, {v.size()}, std::vector<float>(v.begin(), v.end())});
}

void TensorArchive::put(TensorEntry entry) {
  if (contains(entry.name)) throw ValidationError("duplicate tensor '" + entry.name + "'");
  if (element_count(entry.shape) != entry.data.size()) {
    throw ValidationError("tensor '" + entry.name + "': shape does not match data length");
  }
  entries_.push_back(std::move(entry));
}

bool TensorArchive::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const TensorEntry& e) { return e.name == name; });
}

const TensorEntry& TensorArchive::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw ValidationError("checkpoint has no tensor '" + name + "'");
}

Matrix TensorArchive::matrix(const std::string& name) const {
  const auto& e = get(name);
  if (e.shape.size() == 1) return Matrix(1, e.shape[0], e.data);
  if (e.shape.size() != 2) throw ValidationError("tensor '" + name + "' is not 2-D");
  return Matrix(e.shape[0], e.shape[1], e.data);
}

std::vector<float> TensorArchive::vector(const std::string& name) const {
  const auto& e = get(name);
  if (e.shape.size() != 1) throw ValidationError("tensor '" + name + "' is not 1-D");
  return e.data;
}

std::vector<std::uint8_t> encode_archive(const TensorArchive& archive) {
  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  const std::string cfg = archive.config.is_null() ? "{}" : archive.config.dump();
  w.u64(cfg.size());
  w.bytes(cfg.data(), cfg.size());
  w.u32(static_cast<std::uint32_t>(archive.entries().size()));
  std::uint64_t offset = 0;
  for (const auto& e : archive.entries()) {
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.u32(kDtypeF32);
    w.u32(static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) w.u64(d);
    const std::uint64_t nbytes = e.data.size() * sizeof(float);
    w.u64(offset);
    w.u64(nbytes);
    offset += nbytes;
  }
  for (const auto& e : archive.entries()) w.f32s(e.data);
  return w.take();
}

TensorArchive decode_archive(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::string magic = r.str(4, "magic");
  if (magic != std::string(kCheckpointMagic, 4)) {
    throw ValidationError("not a checkpoint: bad magic bytes");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint64_t cfg_len = r.u64("config length");
  TensorArchive archive;
  const std::string cfg = r.str(cfg_len, "config");
  try {
    archive.config = nlohmann::json::parse(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint config JSON: ") + e.what());
  }

  const std::uint32_t count = r.u32("tensor count");
  std::vector<DirEntry> dir;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    DirEntry e;
    e.name = r.str(r.u32("name length"), "tensor name");
    if (!names.insert(e.name).second) {
      throw ValidationError("tensor '" + e.name + "' appears twice in the directory");
    }
    const std::uint32_t dtype = r.u32("dtype");
    if (dtype != kDtypeF32) {
      throw ValidationError("tensor '" + e.name + "': unsupported dtype " + std::to_string(dtype));
    }
    const std::uint32_t ndim = r.u32("rank");
    for (std::uint32_t d = 0; d < ndim; ++d) e.shape.push_back(r.u64("dims"));
    e.offset = r.u64("offset");
    e.nbytes = r.u64("byte count");
    if (e.nbytes != element_count(e.shape) * sizeof(float)) {
      throw ValidationError("tensor '" + e.name + "': byte count does not match shape");
    }
    dir.push_back(std::move(e));
  }

  const std::size_t payload = r.pos();
  const std::uint64_t payload_size = bytes.size() - payload;
  std::vector<const DirEntry*> by_offset;
  for (const auto& e : dir) {
    if (e.offset > payload_size || e.nbytes > payload_size - e.offset) {
      throw ValidationError("tensor '" + e.name + "' extends past the end of the file (truncated?)");
    }
    by_offset.push_back(&e);
  }
  std::sort(by_offset.begin(), by_offset.end(),
            [](const DirEntry* a, const DirEntry* b) { return a->offset < b->offset; });
  for (std::size_t i = 1; i < by_offset.size(); ++i) {
    if (by_offset[i - 1]->offset + by_offset[i - 1]->nbytes > by_offset[i]->offset) {
      throw ValidationError("tensors '" + by_offset[i - 1]->name + "' and '" + by_offset[i]->name +
                            "' overlap");
    }
  }

  for (const auto& e : dir) {
    TensorEntry t{e.name, e.shape, std::vector<float>(e.nbytes / sizeof(float))};
    const std::uint8_t* src = bytes.data() + payload + e.offset;
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(src[4 * i + b]) << (8 * b);
      t.data[i] = std::bit_cast<float>(u);
    }
    archive.mutable_entries().push_back(std::move(t));
  }
  return archive;
}

void write_archive(const TensorArchive& archive, const std::string& path) {
  const auto bytes = encode_archive(archive);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path);
}

TensorArchive read_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_archive(bytes);
}

TensorArchive to_archive(const EngineCheckpoint& ckpt) {
  TensorArchive a;
  a.config = config_to_json(ckpt.config);
  if (ckpt.model) {
    const auto& m = *ckpt.model;
    a.put("tok_embeddings", m.embedding);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      const auto& w = m.layers[l];
      a.put(layer_name(l, "attn.wq"), w.wq);
      a.put(layer_name(l, "attn.wk"), w.wk);
      a.put(layer_name(l, "attn.wv"), w.wv);
      a.put(layer_name(l, "attn.wo"), w.wo);
      a.put(layer_name(l, "ffn.w_gate"), w.w_gate);
      a.put(layer_name(l, "ffn.w_up"), w.w_up);
      a.put(layer_name(l, "ffn.w_down"), w.w_down);
      a.put(layer_name(l, "attn_norm"), std::span<const float>(w.attn_norm));
      a.put(layer_name(l, "ffn_norm"), std::span<const float>(w.ffn_norm));
    }
    a.put("norm", std::span<const float>(m.final_norm));
    if (m.lm_head) a.put("output", *m.lm_head);
  }
  for (std::size_t l = 0; l < ckpt.predictors.size(); ++l) {
    a.put(aux_name("predictor", l, "query"), ckpt.predictors[l].query);
    a.put(aux_name("predictor", l, "w1"), ckpt.predictors[l].w1);
    a.put(aux_name("predictor", l, "w2"), ckpt.predictors[l].w2);
  }
  for (std::size_t l = 0; l < ckpt.compensators.size(); ++l) {
    a.put(aux_name("compensator", l, "w1"), ckpt.compensators[l].w1);
    a.put(aux_name("compensator", l, "w2"), ckpt.compensators[l].w2);
  }
  return a;
}

EngineCheckpoint from_archive(const TensorArchive& a) {
  EngineCheckpoint ckpt;
  ckpt.config = config_from_json(a.config);
  const auto& cfg = ckpt.config;
  if (a.contains("tok_embeddings")) {
    ModelWeights m;
    m.config = cfg;
    m.embedding = a.matrix("tok_embeddings");
    m.layers.resize(cfg.n_layers);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      auto& w = m.layers[l];
      w.wq = a.matrix(layer_name(l, "attn.wq"));
      w.wk = a.matrix(layer_name(l, "attn.wk"));
      w.wv = a.matrix(layer_name(l, "attn.wv"));
      w.wo = a.matrix(layer_name(l, "attn.wo"));
      w.w_gate = a.matrix(layer_name(l, "ffn.w_gate"));
      w.w_up = a.matrix(layer_name(l, "ffn.w_up"));
      w.w_down = a.matrix(layer_name(l, "ffn.w_down"));
      w.attn_norm = a.vector(layer_name(l, "attn_norm"));
      w.ffn_norm = a.vector(layer_name(l, "ffn_norm"));
    }
    m.final_norm = a.vector("norm");
    if (a.contains("output")) m.lm_head = a.matrix("output");
    m.validate();
    ckpt.model = std::move(m);
  }
  if (a.contains(aux_name("predictor", 0, "query"))) {
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      PredictorParams p{a.matrix(aux_name("predictor", l, "query")),
                        a.matrix(aux_name("predictor", l, "w1")),
                        a.matrix(aux_name("predictor", l, "w2"))};
      validate_predictor(p, cfg);
      ckpt.predictors.push_back(std::move(p));
    }
  }
  if (a.contains(aux_name("compensator", 0, "w1"))) {
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      CompensatorParams c{a.matrix(aux_name("compensator", l, "w1")),
                          a.matrix(aux_name("compensator", l, "w2"))};
      validate_compensator(c, cfg);
      ckpt.compensators.push_back(std::move(c));
    }
  }
  return ckpt;
}

void write_checkpoint(const EngineCheckpoint& ckpt, const std::string& path) {
  write_archive(to_archive(ckpt), path);
}

EngineCheckpoint read_checkpoint(const std::string& path) {
  return from_archive(read_archive(path));
}

ModelWeights load_model(const std::string& checkpoint_path,
                        const std::optional<std::string>& config_path) {
  auto ckpt = read_checkpoint(checkpoint_path);
  if (!ckpt.model) throw ValidationError(checkpoint_path + " holds no model weights");
  if (config_path) {
    const ModelConfig standalone = load_config(*config_path);
    if (!(standalone == ckpt.config)) {
      std::cerr << "warning: " << *config_path << " disagrees with the config stored in "
                << checkpoint_path << "; using the checkpoint copy\n";
    }
  }
  return std::move(*ckpt.model);
}

}  // namespace ffwd
