#pragma once

// Multi-stream teacher (one local stream per class + shared global layers)
// and the residual student with its classification head.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"

#include "gemini/common.hpp"
#include "gemini/datapipe.hpp"
#include "gemini/nn.hpp"
#include "gemini/tensor.hpp"

namespace gemini::models {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

/// Per-class local stream: parameterless input pooling, then one
/// conv -> relu -> max-pool block per entry of `channels`.
struct StreamSpec {
  int input_pool = 4;
  std::vector<int> channels{8, 16};
  std::vector<int> pools{2, 4};
  int kernel = 3;
};

/// Shared global component: fully connected layers of the listed widths,
/// followed by the output layer of width embedding_dim.
struct GlobalSpec {
  std::vector<int> hidden{64};
};

struct TeacherConfig {
  int n_classes = 6;
  int input_size = 256;
  int input_channels = 3;
  StreamSpec stream;
  GlobalSpec global;
  int embedding_dim = 32;

  void validate() const {
    if (n_classes < 2) throw ConfigError("teacher needs n_classes >= 2");
    if (embedding_dim < 2) throw ConfigError("teacher embedding_dim must be >= 2");
    if (stream.channels.empty() || stream.channels.size() != stream.pools.size()) {
      throw ConfigError("teacher stream needs one pool size per conv block");
    }
    if (input_size <= 0 || stream.input_pool <= 0) throw ConfigError("teacher input geometry must be positive");
  }
};

struct StageSpec {
  int channels = 8;
  int blocks = 1;
  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

/// Residual feature extractor: input pooling, stem conv, then stages of
/// residual blocks with 2x max-pooling between stages. The output of the
/// last stage is the spatial feature map.
struct BackboneSpec {
  int input_pool = 4;
  int stem_channels = 8;
  std::vector<StageSpec> stages{{8, 1}, {16, 1}};

  /// 16 residual blocks in a 3-4-6-3 layout at widths 64..512.
  static BackboneSpec full_depth() {
    BackboneSpec s;
    s.input_pool = 1;
    s.stem_channels = 64;
    s.stages = {{64, 3}, {128, 4}, {256, 6}, {512, 3}};
    return s;
  }
};

inline constexpr int kEmbeddingSizes[] = {8, 16, 32, 64, 128, 256, 512, 1024};

inline bool is_supported_embedding_dim(int d) {
  for (int s : kEmbeddingSizes) {
    if (s == d) return true;
  }
  return false;
}

struct StudentConfig {
  int n_classes = 6;
  int input_size = 256;
  int input_channels = 3;
  BackboneSpec backbone;
  int embedding_dim = 32;

  void validate() const {
    if (n_classes < 2) throw ConfigError("student needs n_classes >= 2");
    if (!is_supported_embedding_dim(embedding_dim)) {
      throw ConfigError("student embedding_dim must be one of 8,16,...,1024; got " + std::to_string(embedding_dim));
    }
    if (backbone.stages.empty()) throw ConfigError("student backbone needs at least one stage");
    for (const auto& s : backbone.stages) {
      if (s.channels <= 0 || s.blocks <= 0) throw ConfigError("student stage widths and depths must be positive");
    }
  }
};

/// Linear classifier over fused features.
struct FusionHeadConfig {
  int n_classes = 6;
  int input_dim = 0;
  std::string strategy;
};

inline void to_json(json& j, const StreamSpec& s) {
  j = {{"input_pool", s.input_pool}, {"channels", s.channels}, {"pools", s.pools}, {"kernel", s.kernel}};
}
inline void from_json(const json& j, StreamSpec& s) {
  j.at("input_pool").get_to(s.input_pool);
  j.at("channels").get_to(s.channels);
  j.at("pools").get_to(s.pools);
  j.at("kernel").get_to(s.kernel);
}
inline void to_json(json& j, const GlobalSpec& s) { j = {{"hidden", s.hidden}}; }
inline void from_json(const json& j, GlobalSpec& s) { j.at("hidden").get_to(s.hidden); }
inline void to_json(json& j, const TeacherConfig& c) {
  j = {{"n_classes", c.n_classes}, {"input_size", c.input_size}, {"input_channels", c.input_channels},
       {"stream", c.stream},       {"global", c.global},          {"embedding_dim", c.embedding_dim}};
}
inline void from_json(const json& j, TeacherConfig& c) {
  j.at("n_classes").get_to(c.n_classes);
  j.at("input_size").get_to(c.input_size);
  j.at("input_channels").get_to(c.input_channels);
  j.at("stream").get_to(c.stream);
  j.at("global").get_to(c.global);
  j.at("embedding_dim").get_to(c.embedding_dim);
}
inline void to_json(json& j, const StageSpec& s) { j = {{"channels", s.channels}, {"blocks", s.blocks}}; }
inline void from_json(const json& j, StageSpec& s) {
  j.at("channels").get_to(s.channels);
  j.at("blocks").get_to(s.blocks);
}
inline void to_json(json& j, const BackboneSpec& s) {
  j = {{"input_pool", s.input_pool}, {"stem_channels", s.stem_channels}, {"stages", s.stages}};
}
inline void from_json(const json& j, BackboneSpec& s) {
  j.at("input_pool").get_to(s.input_pool);
  j.at("stem_channels").get_to(s.stem_channels);
  j.at("stages").get_to(s.stages);
}
inline void to_json(json& j, const StudentConfig& c) {
  j = {{"n_classes", c.n_classes},
       {"input_size", c.input_size},
       {"input_channels", c.input_channels},
       {"backbone", c.backbone},
       {"embedding_dim", c.embedding_dim}};
}
inline void from_json(const json& j, StudentConfig& c) {
  j.at("n_classes").get_to(c.n_classes);
  j.at("input_size").get_to(c.input_size);
  j.at("input_channels").get_to(c.input_channels);
  j.at("backbone").get_to(c.backbone);
  j.at("embedding_dim").get_to(c.embedding_dim);
}
inline void to_json(json& j, const FusionHeadConfig& c) {
  j = {{"n_classes", c.n_classes}, {"input_dim", c.input_dim}, {"strategy", c.strategy}};
}
inline void from_json(const json& j, FusionHeadConfig& c) {
  j.at("n_classes").get_to(c.n_classes);
  j.at("input_dim").get_to(c.input_dim);
  j.at("strategy").get_to(c.strategy);
}

// ---------------------------------------------------------------------------
// Model state and checkpoints

struct NamedTensor {
  std::string name;
  std::vector<float> values;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct EpochLoss {
  int epoch = 0;
  double total = 0.0;
  double first = 0.0;   // teacher: local term; student: distance term
  double second = 0.0;  // teacher: hinge term; student: cross-entropy term
  friend bool operator==(const EpochLoss&, const EpochLoss&) = default;
};

struct TrainingMeta {
  std::uint64_t seed = 0;
  int epoch = 0;
  std::vector<EpochLoss> loss_curve;
  json extra = json::object();
};

using ModelConfig = std::variant<TeacherConfig, StudentConfig, FusionHeadConfig>;

struct ModelState {
  ModelConfig config;
  std::vector<NamedTensor> parameters;
  TrainingMeta meta;
};

inline constexpr int kCheckpointVersion = 1;

inline std::string model_kind(const ModelConfig& c) {
  switch (c.index()) {
    case 0: return "teacher";
    case 1: return "student";
    default: return "fusion_head";
  }
}

inline json config_to_json(const ModelConfig& c) {
  json j;
  std::visit([&](const auto& cfg) { j = cfg; }, c);
  return {{"format_version", kCheckpointVersion}, {"kind", model_kind(c)}, {"config", j}};
}

inline ModelConfig config_from_json(const json& j) {
  if (j.value("format_version", 0) != kCheckpointVersion) throw ConfigError("unsupported checkpoint version");
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "teacher") return j.at("config").get<TeacherConfig>();
  if (kind == "student") return j.at("config").get<StudentConfig>();
  if (kind == "fusion_head") return j.at("config").get<FusionHeadConfig>();
  throw ConfigError("unknown checkpoint kind '" + kind + "'");
}

inline void to_json(json& j, const EpochLoss& e) {
  j = {{"epoch", e.epoch}, {"total", e.total}, {"first", e.first}, {"second", e.second}};
}
inline void from_json(const json& j, EpochLoss& e) {
  j.at("epoch").get_to(e.epoch);
  j.at("total").get_to(e.total);
  j.at("first").get_to(e.first);
  j.at("second").get_to(e.second);
}
inline json meta_to_json(const TrainingMeta& m) {
  return {{"format_version", kCheckpointVersion},
          {"seed", m.seed},
          {"epoch", m.epoch},
          {"loss_curve", m.loss_curve},
          {"extra", m.extra}};
}
inline TrainingMeta meta_from_json(const json& j) {
  TrainingMeta m;
  j.at("seed").get_to(m.seed);
  j.at("epoch").get_to(m.epoch);
  j.at("loss_curve").get_to(m.loss_curve);
  if (j.contains("extra")) m.extra = j.at("extra");
  return m;
}

// Parameter blob: "GMNP", u32 version, u32 count, then per tensor
// u32 name length, name bytes, u64 element count, float32 values.
// Integers and floats are written in host (little-endian) byte order.
inline void write_parameter_blob(std::ostream& os, const std::vector<NamedTensor>& params) {
  auto put_u32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); };
  os.write("GMNP", 4);
  put_u32(static_cast<std::uint32_t>(kCheckpointVersion));
  put_u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_u32(static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const auto n = static_cast<std::uint64_t>(p.values.size());
    os.write(reinterpret_cast<const char*>(&n), sizeof n);
    os.write(reinterpret_cast<const char*>(p.values.data()), static_cast<std::streamsize>(n * sizeof(float)));
  }
}

inline std::vector<NamedTensor> read_parameter_blob(std::istream& is) {
  auto get_u32 = [&] {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
  };
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "GMNP", 4) != 0) throw ConfigError("not a parameter blob");
  if (get_u32() != static_cast<std::uint32_t>(kCheckpointVersion)) throw ConfigError("unsupported parameter blob version");
  const std::uint32_t count = get_u32();
  std::vector<NamedTensor> out(count);
  for (auto& p : out) {
    p.name.resize(get_u32());
    is.read(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    std::uint64_t n = 0;
    is.read(reinterpret_cast<char*>(&n), sizeof n);
    p.values.resize(n);
    is.read(reinterpret_cast<char*>(p.values.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!is) throw ConfigError("truncated parameter blob");
  }
  return out;
}

/// Writes <dir>/params.bin, <dir>/config.json, <dir>/meta.json.
inline void save_checkpoint(const std::filesystem::path& dir, const ModelState& state) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "params.bin", std::ios::binary);
    write_parameter_blob(os, state.parameters);
    if (!os) throw Error("failed to write " + (dir / "params.bin").string());
  }
  std::ofstream(dir / "config.json") << config_to_json(state.config).dump(2) << "\n";
  std::ofstream(dir / "meta.json") << meta_to_json(state.meta).dump(2) << "\n";
}

inline bool checkpoint_exists(const std::filesystem::path& dir) {
  return std::filesystem::exists(dir / "params.bin") && std::filesystem::exists(dir / "config.json") &&
         std::filesystem::exists(dir / "meta.json");
}

inline ModelState load_checkpoint(const std::filesystem::path& dir) {
  if (!checkpoint_exists(dir)) throw ConfigError("missing checkpoint at " + dir.string());
  ModelState s;
  std::ifstream blob(dir / "params.bin", std::ios::binary);
  s.parameters = read_parameter_blob(blob);
  std::ifstream cfg(dir / "config.json");
  s.config = config_from_json(json::parse(cfg));
  std::ifstream meta(dir / "meta.json");
  s.meta = meta_from_json(json::parse(meta));
  return s;
}

template <typename T>
std::vector<NamedTensor> export_params(const std::vector<nn::Param<T>*>& params) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (const auto* p : params) out.push_back({p->name, std::vector<float>(p->value.begin(), p->value.end())});
  return out;
}

template <typename T>
void import_params(const std::vector<nn::Param<T>*>& params, const std::vector<NamedTensor>& values) {
  if (values.size() != params.size()) {
    throw ShapeError("checkpoint has " + std::to_string(values.size()) + " tensors, model expects " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].name != params[i]->name || values[i].values.size() != params[i]->value.size()) {
      throw ShapeError("checkpoint tensor " + values[i].name + " does not match model parameter " + params[i]->name);
    }
    params[i]->value.assign(values[i].values.begin(), values[i].values.end());
  }
}

// ---------------------------------------------------------------------------
// Teacher

template <typename T = float>
class TeacherModel {
 public:
  struct TripletCache {
    nn::Cache<T> local, global;
  };

  TeacherModel(TeacherConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build();
    for (int k = 0; k < cfg_.n_classes; ++k) {
      Rng rng = make_rng(seed, stream::kInit, 1 + static_cast<std::uint64_t>(k));
      streams_[static_cast<std::size_t>(k)].initialize(rng);
    }
    Rng rng = make_rng(seed, stream::kInit, 0);
    global_.initialize(rng);
  }

  explicit TeacherModel(const ModelState& state) : cfg_(std::get<TeacherConfig>(state.config)) {
    cfg_.validate();
    build();
    import_params(params(), state.parameters);
  }

  [[nodiscard]] const TeacherConfig& config() const { return cfg_; }
  [[nodiscard]] int intermediate_size() const { return intermediate_size_; }

  /// Intermediate representation f_k(x) of a patch routed through stream k.
  Tensor<T> forward_local(const Tensor<T>& x, int class_index, nn::Cache<T>* cache = nullptr) const {
    return stream(class_index).forward(x, cache).flattened();
  }

  /// Global embedding g(f) shared by all classes.
  Tensor<T> forward_global(const Tensor<T>& intermediate, nn::Cache<T>* cache = nullptr) const {
    if (static_cast<int>(intermediate.size()) != intermediate_size_) {
      throw ShapeError("global component expects " + std::to_string(intermediate_size_) + " inputs, got " +
                       std::to_string(intermediate.size()));
    }
    return global_.forward(intermediate.flattened(), cache);
  }

  /// g(f_k(x)).
  Tensor<T> embed(const Tensor<T>& x, int class_index) const {
    return forward_global(forward_local(x, class_index));
  }

  /// Back-propagates into the global layers, returns dL/df.
  Tensor<T> backward_global(const Tensor<T>& grad_embedding, const nn::Cache<T>& cache) {
    return global_.backward(grad_embedding, cache, true);
  }

  void backward_local(int class_index, const Tensor<T>& grad_intermediate, const nn::Cache<T>& cache) {
    Tensor<T> g = grad_intermediate;
    g.reshape(stream_output_shape_);
    stream(class_index).backward(g, cache, false);
  }

  std::vector<nn::Param<T>*> params() {
    std::vector<nn::Param<T>*> out;
    for (auto& s : streams_) {
      for (auto* p : s.params()) out.push_back(p);
    }
    for (auto* p : global_.params()) out.push_back(p);
    return out;
  }
  std::vector<nn::Param<T>*> stream_params(int class_index) { return stream(class_index).params(); }
  std::vector<nn::Param<T>*> global_params() { return global_.params(); }

  [[nodiscard]] ModelState to_state(TrainingMeta meta = {}) const {
    auto* self = const_cast<TeacherModel*>(this);
    return {cfg_, export_params(self->params()), std::move(meta)};
  }

 private:
  void build() {
    const auto& s = cfg_.stream;
    streams_.clear();
    for (int k = 0; k < cfg_.n_classes; ++k) {
      nn::Sequential<T> seq;
      const std::string prefix = "stream" + std::to_string(k);
      if (s.input_pool > 1) seq.template add<nn::AvgPool<T>>(s.input_pool);
      int in = cfg_.input_channels;
      for (std::size_t b = 0; b < s.channels.size(); ++b) {
        seq.template add<nn::Conv2d<T>>(prefix + ".conv" + std::to_string(b), in, s.channels[b], s.kernel);
        seq.template add<nn::Relu<T>>();
        seq.template add<nn::MaxPool<T>>(s.pools[b]);
        in = s.channels[b];
      }
      streams_.push_back(std::move(seq));
    }
    stream_output_shape_ = streams_.front().output_shape({cfg_.input_channels, cfg_.input_size, cfg_.input_size});
    intermediate_size_ = static_cast<int>(stream_output_shape_.size());
    global_ = nn::Sequential<T>();
    int in = intermediate_size_;
    for (std::size_t i = 0; i < cfg_.global.hidden.size(); ++i) {
      global_.template add<nn::Linear<T>>("global.fc" + std::to_string(i), in, cfg_.global.hidden[i]);
      global_.template add<nn::Relu<T>>();
      in = cfg_.global.hidden[i];
    }
    global_.template add<nn::Linear<T>>("global.out", in, cfg_.embedding_dim);
  }

  const nn::Sequential<T>& stream(int k) const {
    if (k < 0 || k >= cfg_.n_classes) {
      throw InvalidInputError("class index " + std::to_string(k) + " outside [0, " + std::to_string(cfg_.n_classes) + ")");
    }
    return streams_[static_cast<std::size_t>(k)];
  }
  nn::Sequential<T>& stream(int k) { return const_cast<nn::Sequential<T>&>(std::as_const(*this).stream(k)); }

  TeacherConfig cfg_;
  std::vector<nn::Sequential<T>> streams_;
  nn::Sequential<T> global_;
  Shape3 stream_output_shape_{};
  int intermediate_size_ = 0;
};

// ---------------------------------------------------------------------------
// Student

template <typename T>
struct StudentOutput {
  std::vector<T> embedding;
  std::vector<T> logits;
};

template <typename T = float>
class StudentModel {
 public:
  struct ForwardCache {
    nn::Cache<T> backbone, pool, embed, head;
  };

  StudentModel(StudentConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build();
    Rng rng = make_rng(seed, stream::kInit, 0x5354'5544);
    backbone_.initialize(rng);
    embed_->initialize(rng);
    head_->initialize(rng);
  }

  explicit StudentModel(const ModelState& state) : cfg_(std::get<StudentConfig>(state.config)) {
    cfg_.validate();
    build();
    import_params(params(), state.parameters);
  }

  [[nodiscard]] const StudentConfig& config() const { return cfg_; }
  [[nodiscard]] Shape3 feature_shape() const { return feature_shape_; }

  StudentOutput<T> forward(const Tensor<T>& x, ForwardCache* cache = nullptr) const {
    check_input(x.shape());
    const Tensor<T> feat = backbone_.forward(x, cache ? &cache->backbone : nullptr);
    const Tensor<T> pooled = pool_.forward(feat, cache ? &cache->pool : nullptr);
    Tensor<T> z = embed_->forward(pooled, cache ? &cache->embed : nullptr);
    Tensor<T> logits = head_->forward(z, cache ? &cache->head : nullptr);
    return {std::move(z.storage()), std::move(logits.storage())};
  }

  /// Last spatial feature map of the backbone, shape (C, H', W').
  Tensor<T> features(const Tensor<T>& x) const {
    check_input(x.shape());
    return backbone_.forward(x, nullptr);
  }

  /// Either gradient may be empty (treated as zero).
  void backward(const ForwardCache& cache, const std::vector<T>& grad_embedding, const std::vector<T>& grad_logits) {
    Tensor<T> gz(Shape3{cfg_.embedding_dim, 1, 1});
    if (!grad_logits.empty()) {
      gz = head_->backward(Tensor<T>::from_vector(grad_logits), cache.head, true);
    }
    if (!grad_embedding.empty()) {
      if (grad_embedding.size() != gz.size()) throw ShapeError("embedding gradient has wrong size");
      for (std::size_t i = 0; i < gz.size(); ++i) gz[i] += grad_embedding[i];
    }
    const Tensor<T> gp = embed_->backward(gz, cache.embed, true);
    const Tensor<T> gf = pool_.backward(gp, cache.pool, true);
    backbone_.backward(gf, cache.backbone, false);
  }

  std::vector<nn::Param<T>*> params() {
    std::vector<nn::Param<T>*> out = backbone_.params();
    for (auto* p : embed_->params()) out.push_back(p);
    for (auto* p : head_->params()) out.push_back(p);
    return out;
  }
  /// Everything except the classification head.
  std::vector<nn::Param<T>*> embedding_params() {
    std::vector<nn::Param<T>*> out = backbone_.params();
    for (auto* p : embed_->params()) out.push_back(p);
    return out;
  }

  [[nodiscard]] ModelState to_state(TrainingMeta meta = {}) const {
    auto* self = const_cast<StudentModel*>(this);
    return {cfg_, export_params(self->params()), std::move(meta)};
  }

 private:
  void check_input(const Shape3& s) const {
    const Shape3 expected{cfg_.input_channels, cfg_.input_size, cfg_.input_size};
    if (!(s == expected)) throw ShapeError("student expects input " + to_string(expected) + ", got " + to_string(s));
  }

  void build() {
    const auto& b = cfg_.backbone;
    if (b.input_pool > 1) backbone_.template add<nn::AvgPool<T>>(b.input_pool);
    backbone_.template add<nn::Conv2d<T>>("stem.conv", cfg_.input_channels, b.stem_channels, 3);
    backbone_.template add<nn::Relu<T>>();
    int in = b.stem_channels;
    for (std::size_t s = 0; s < b.stages.size(); ++s) {
      if (s > 0) backbone_.template add<nn::MaxPool<T>>(2);
      for (int k = 0; k < b.stages[s].blocks; ++k) {
        backbone_.template add<nn::ResidualBlock<T>>("stage" + std::to_string(s) + ".block" + std::to_string(k), in,
                                                     b.stages[s].channels);
        in = b.stages[s].channels;
      }
    }
    feature_shape_ = backbone_.output_shape({cfg_.input_channels, cfg_.input_size, cfg_.input_size});
    embed_ = std::make_unique<nn::Linear<T>>("embed", feature_shape_.channels, cfg_.embedding_dim);
    head_ = std::make_unique<nn::Linear<T>>("head", cfg_.embedding_dim, cfg_.n_classes);
  }

  StudentConfig cfg_;
  nn::Sequential<T> backbone_;
  nn::GlobalAvgPool<T> pool_;
  std::unique_ptr<nn::Linear<T>> embed_;
  std::unique_ptr<nn::Linear<T>> head_;
  Shape3 feature_shape_{};
};

}  // namespace gemini::models
