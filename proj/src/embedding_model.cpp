#include "fieldguide/learner.hpp"

#include "fieldguide/error.hpp"
#include "json_config.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#ifdef __GLIBC__
#include <malloc.h>
#endif
#include <fstream>
#include <numeric>

namespace fieldguide {

using nlohmann::json;

void ModelConfig::validate() const {
  if (latent_dim < 1) throw Error(ErrorCode::invalid_argument, "latent_dim must be >= 1");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::invalid_argument, "learning_rate must be > 0");
  const auto& w = loss_weights;
  if (w.attribute_reconstruction < 0 || w.image_reconstruction < 0 || w.cross_reconstruction < 0 ||
      w.alignment < 0)
    throw Error(ErrorCode::invalid_argument, "loss weights must be >= 0");
  for (auto h : hidden_dims)
    if (h == 0) throw Error(ErrorCode::invalid_argument, "hidden layer width must be >= 1");
}

namespace {

void check_length(const Vector& v, std::size_t expected, const char* what) {
  if (static_cast<std::size_t>(v.size()) != expected)
    throw Error(ErrorCode::invalid_argument, std::string(what) + " has length " + std::to_string(v.size()) +
                                                 ", expected " + std::to_string(expected));
}

}  // namespace

Vector EmbeddingModel::encode_attributes(const Vector& a) const {
  check_length(a, attribute_dim(), "attribute vector");
  return attribute_encoder.forward(a);
}

Vector EmbeddingModel::encode_image(const Vector& f) const {
  check_length(f, feature_dim(), "feature vector");
  return image_encoder.forward(f);
}

Vector EmbeddingModel::decode_attributes(const Vector& z) const {
  check_length(z, latent_dim(), "latent vector");
  return attribute_decoder.forward(z);
}

Vector EmbeddingModel::decode_image(const Vector& z) const {
  check_length(z, latent_dim(), "latent vector");
  return image_decoder.forward(z);
}

Matrix EmbeddingModel::encode_images(const Matrix& f) const {
  if (static_cast<std::size_t>(f.rows()) != feature_dim())
    throw Error(ErrorCode::invalid_argument, "feature batch has wrong row count");
  return image_encoder.forward_batch(f);
}

Matrix EmbeddingModel::attribute_jacobian(const Vector& a) const {
  check_length(a, attribute_dim(), "attribute vector");
  if (!a.allFinite()) throw Error(ErrorCode::invalid_argument, "attribute vector is not finite");
  return attribute_encoder.jacobian(a);
}

bool EmbeddingModel::operator==(const EmbeddingModel& o) const {
  return attribute_encoder == o.attribute_encoder && image_encoder == o.image_encoder &&
         attribute_decoder == o.attribute_decoder && image_decoder == o.image_decoder &&
         norm_stats == o.norm_stats;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr int kFormatVersion = 1;

json matrix_to_json(const Matrix& m) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto flat = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols)
    throw Error(ErrorCode::parse, "checkpoint: matrix data size mismatch");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
  return m;
}

json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from_json(const json& j) {
  const auto flat = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(flat.data(), static_cast<Eigen::Index>(flat.size()));
}

json mlp_to_json(const Mlp& net) {
  json layers = json::array();
  for (const auto& l : net.layers()) layers.push_back({{"weight", matrix_to_json(l.weight)}, {"bias", vector_to_json(l.bias)}});
  return json{{"activation", to_string(net.activation())}, {"layers", layers}};
}

Mlp mlp_from_json(const json& j) {
  std::vector<DenseLayer> layers;
  for (const auto& l : j.at("layers")) layers.push_back({matrix_from_json(l.at("weight")), vector_from_json(l.at("bias"))});
  return Mlp(std::move(layers), parse_activation(j.at("activation").get<std::string>()));
}

json config_to_json(const ModelConfig& c) {
  return json{{"latent_dim", c.latent_dim},
              {"hidden_dims", c.hidden_dims},
              {"activation", to_string(c.activation)},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"loss_weights",
               {{"attribute_reconstruction", c.loss_weights.attribute_reconstruction},
                {"image_reconstruction", c.loss_weights.image_reconstruction},
                {"cross_reconstruction", c.loss_weights.cross_reconstruction},
                {"alignment", c.loss_weights.alignment}}},
              {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.hidden_dims = j.value("hidden_dims", c.hidden_dims);
  c.activation = parse_activation(j.value("activation", std::string("tanh")));
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    c.loss_weights.attribute_reconstruction = w.value("attribute_reconstruction", 1.0);
    c.loss_weights.image_reconstruction = w.value("image_reconstruction", 1.0);
    c.loss_weights.cross_reconstruction = w.value("cross_reconstruction", 1.0);
    c.loss_weights.alignment = w.value("alignment", 1.0);
  }
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

}  // namespace

json model_config_to_json(const ModelConfig& c) { return config_to_json(c); }
ModelConfig model_config_from_json(const json& j) { return config_from_json(j); }

void EmbeddingModel::save(const std::filesystem::path& path) const {
  json j{{"format_version", kFormatVersion},
         {"config", config_to_json(config)},
         {"attribute_encoder", mlp_to_json(attribute_encoder)},
         {"image_encoder", mlp_to_json(image_encoder)},
         {"attribute_decoder", mlp_to_json(attribute_decoder)},
         {"image_decoder", mlp_to_json(image_decoder)}};
  if (norm_stats)
    j["norm_stats"] = {{"min", vector_to_json(norm_stats->min)}, {"max", vector_to_json(norm_stats->max)}};
  else
    j["norm_stats"] = nullptr;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << j.dump() << '\n';
}

EmbeddingModel EmbeddingModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "missing file " + path.string());
  try {
    json j = json::parse(in);
    if (j.at("format_version").get<int>() != kFormatVersion)
      throw Error(ErrorCode::parse, "checkpoint: unsupported format_version");
    EmbeddingModel m;
    m.config = config_from_json(j.at("config"));
    m.attribute_encoder = mlp_from_json(j.at("attribute_encoder"));
    m.image_encoder = mlp_from_json(j.at("image_encoder"));
    m.attribute_decoder = mlp_from_json(j.at("attribute_decoder"));
    m.image_decoder = mlp_from_json(j.at("image_decoder"));
    if (!j.at("norm_stats").is_null())
      m.norm_stats = NormStats{vector_from_json(j["norm_stats"].at("min")), vector_from_json(j["norm_stats"].at("max"))};
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, "checkpoint " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct TrainingData {
  Matrix attributes;         // d x classes
  Matrix features;           // m x images
  Matrix class_mean_features;  // m x classes
  std::vector<std::size_t> labels;  // image -> class column
};

TrainingData gather(const Dataset& ds) {
  TrainingData t;
  const auto d = static_cast<Eigen::Index>(ds.schema.dim());
  const auto m = static_cast<Eigen::Index>(ds.feature_dim());
  const auto nb = static_cast<Eigen::Index>(ds.base.size());
  std::unordered_map<std::string, std::size_t> col;
  t.attributes.resize(d, nb);
  for (Eigen::Index c = 0; c < nb; ++c) {
    const auto& id = ds.base[static_cast<std::size_t>(c)];
    col[id] = static_cast<std::size_t>(c);
    t.attributes.col(c) = ds.attributes(id);
  }
  const auto split = split_features(ds);
  t.features.resize(m, static_cast<Eigen::Index>(split.train.size()));
  t.class_mean_features = Matrix::Zero(m, nb);
  std::vector<double> counts(static_cast<std::size_t>(nb), 0.0);
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(split.train[i]);
    const auto c = col.at(ds.features.class_ids[split.train[i]]);
    t.features.col(static_cast<Eigen::Index>(i)) = ds.features.values.col(row);
    t.class_mean_features.col(static_cast<Eigen::Index>(c)) += ds.features.values.col(row);
    counts[c] += 1.0;
    t.labels.push_back(c);
  }
  for (Eigen::Index c = 0; c < nb; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0.0)
      throw Error(ErrorCode::precondition, "base class '" + ds.base[static_cast<std::size_t>(c)] +
                                               "' has no training images");
    t.class_mean_features.col(c) /= counts[static_cast<std::size_t>(c)];
  }
  return t;
}

struct Gradients {
  std::vector<DenseLayer> enc_a, enc_i, dec_a, dec_i;
};

double mean_square(const Matrix& m) { return m.size() ? m.squaredNorm() / static_cast<double>(m.size()) : 0.0; }

// Loss (and optionally gradients) on the images in `batch` and the classes they cover.
double loss_and_gradients(const EmbeddingModel& model, const TrainingData& data,
                          const std::vector<std::size_t>& batch, Gradients* grads) {
  const auto& w = model.config.loss_weights;
  // Class columns present in the batch, in ascending order.
  std::vector<std::size_t> classes;
  for (auto i : batch) classes.push_back(data.labels[i]);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  std::vector<std::size_t> pos(static_cast<std::size_t>(data.attributes.cols()), 0);
  for (std::size_t k = 0; k < classes.size(); ++k) pos[classes[k]] = k;

  const auto nc = static_cast<Eigen::Index>(classes.size());
  const auto nb = static_cast<Eigen::Index>(batch.size());
  Matrix attrs(data.attributes.rows(), nc), means(data.class_mean_features.rows(), nc);
  for (Eigen::Index k = 0; k < nc; ++k) {
    attrs.col(k) = data.attributes.col(static_cast<Eigen::Index>(classes[static_cast<std::size_t>(k)]));
    means.col(k) = data.class_mean_features.col(static_cast<Eigen::Index>(classes[static_cast<std::size_t>(k)]));
  }
  Matrix feats(data.features.rows(), nb), attrs_per_image(data.attributes.rows(), nb);
  std::vector<std::size_t> lab(batch.size());
  Vector count = Vector::Zero(nc);
  for (Eigen::Index i = 0; i < nb; ++i) {
    const auto src = batch[static_cast<std::size_t>(i)];
    feats.col(i) = data.features.col(static_cast<Eigen::Index>(src));
    lab[static_cast<std::size_t>(i)] = pos[data.labels[src]];
    attrs_per_image.col(i) = attrs.col(static_cast<Eigen::Index>(lab[static_cast<std::size_t>(i)]));
    count[static_cast<Eigen::Index>(lab[static_cast<std::size_t>(i)])] += 1.0;
  }

  Mlp::Trace t_ea, t_ei, t_da_a, t_di_i, t_da_i, t_di_a;
  const Matrix za = model.attribute_encoder.forward_batch(attrs, t_ea);
  const Matrix zi = model.image_encoder.forward_batch(feats, t_ei);
  const Matrix ra = model.attribute_decoder.forward_batch(za, t_da_a);
  const Matrix ri = model.image_decoder.forward_batch(zi, t_di_i);
  const Matrix ca = model.attribute_decoder.forward_batch(zi, t_da_i);
  const Matrix ci = model.image_decoder.forward_batch(za, t_di_a);
  Matrix zbar = Matrix::Zero(za.rows(), nc);
  for (Eigen::Index i = 0; i < nb; ++i) zbar.col(static_cast<Eigen::Index>(lab[static_cast<std::size_t>(i)])) += zi.col(i);
  for (Eigen::Index k = 0; k < nc; ++k) zbar.col(k) /= count[k];

  const Matrix e_ra = ra - attrs;
  const Matrix e_ri = ri - feats;
  const Matrix e_ca = ca - attrs_per_image;
  const Matrix e_ci = ci - means;
  const Matrix e_al = za - zbar;
  const double loss = w.attribute_reconstruction * mean_square(e_ra) + w.image_reconstruction * mean_square(e_ri) +
                      w.cross_reconstruction * (mean_square(e_ca) + mean_square(e_ci)) +
                      w.alignment * mean_square(e_al);
  if (!grads) return loss;

  const auto scale = [](const Matrix& e, double weight) { return (2.0 * weight / static_cast<double>(e.size())) * e; };
  Matrix g_za = model.attribute_decoder.backward(t_da_a, scale(e_ra, w.attribute_reconstruction), grads->dec_a);
  g_za += model.image_decoder.backward(t_di_a, scale(e_ci, w.cross_reconstruction), grads->dec_i);
  Matrix g_zi = model.image_decoder.backward(t_di_i, scale(e_ri, w.image_reconstruction), grads->dec_i);
  g_zi += model.attribute_decoder.backward(t_da_i, scale(e_ca, w.cross_reconstruction), grads->dec_a);
  const Matrix g_al = scale(e_al, w.alignment);
  g_za += g_al;
  for (Eigen::Index i = 0; i < nb; ++i) {
    const auto k = static_cast<Eigen::Index>(lab[static_cast<std::size_t>(i)]);
    g_zi.col(i) -= g_al.col(k) / count[k];
  }
  model.attribute_encoder.backward(t_ea, g_za, grads->enc_a);
  model.image_encoder.backward(t_ei, g_zi, grads->enc_i);
  return loss;
}

class Adam {
 public:
  explicit Adam(const Mlp& net, double lr) : lr_(lr), m_(net.zero_like()), v_(net.zero_like()) {}

  void step(Mlp& net, const std::vector<DenseLayer>& grad, std::size_t t) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    auto& layers = net.layers();
    for (std::size_t k = 0; k < layers.size(); ++k) {
      update(layers[k].weight, grad[k].weight, m_[k].weight, v_[k].weight, c1, c2, b1, b2, eps);
      update(layers[k].bias, grad[k].bias, m_[k].bias, v_[k].bias, c1, c2, b1, b2, eps);
    }
  }

 private:
  template <typename P>
  void update(P& param, const P& g, P& m, P& v, double c1, double c2, double b1, double b2, double eps) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    param.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }

  double lr_;
  std::vector<DenseLayer> m_, v_;
};

std::vector<std::size_t> widths(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

}  // namespace

double embedding_loss(const EmbeddingModel& model, const Dataset& ds) {
  const auto data = gather(ds);
  std::vector<std::size_t> all(data.labels.size());
  std::iota(all.begin(), all.end(), 0);
  return loss_and_gradients(model, data, all, nullptr);
}

EmbeddingModel train_embedding_model(const Dataset& ds, const ModelConfig& cfg, TrainingTrace* trace) {
  cfg.validate();
#ifdef __GLIBC__
  // Batch matrices are reallocated every step; keep them off mmap.
  static const bool heap_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 128 << 20);
    return true;
  }();
  (void)heap_tuned;
#endif
  const auto data = gather(ds);
  const std::size_t d = ds.schema.dim(), m = ds.feature_dim(), l = cfg.latent_dim;
  std::vector<std::size_t> reversed(cfg.hidden_dims.rbegin(), cfg.hidden_dims.rend());

  std::mt19937_64 rng(mix_seed(cfg.seed, 0x656d6265ULL));
  EmbeddingModel model;
  model.config = cfg;
  model.norm_stats = ds.norm_stats;
  model.attribute_encoder = Mlp::random(widths(d, cfg.hidden_dims, l), cfg.activation, rng);
  model.image_encoder = Mlp::random(widths(m, cfg.hidden_dims, l), cfg.activation, rng);
  model.attribute_decoder = Mlp::random(widths(l, reversed, d), cfg.activation, rng);
  model.image_decoder = Mlp::random(widths(l, reversed, m), cfg.activation, rng);

  Adam opt_ea(model.attribute_encoder, cfg.learning_rate), opt_ei(model.image_encoder, cfg.learning_rate),
      opt_da(model.attribute_decoder, cfg.learning_rate), opt_di(model.image_decoder, cfg.learning_rate);

  const std::size_t n = data.labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = (cfg.batch_size == 0 || cfg.batch_size >= n) ? n : cfg.batch_size;

  const double initial = loss_and_gradients(model, data, order, nullptr);
  if (!std::isfinite(initial)) throw Error(ErrorCode::divergence, "non-finite loss at epoch 0");
  if (trace) trace->total.assign(1, initial);

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (bs < n) std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + bs)));
      Gradients g{model.attribute_encoder.zero_like(), model.image_encoder.zero_like(),
                  model.attribute_decoder.zero_like(), model.image_decoder.zero_like()};
      const double loss = loss_and_gradients(model, data, batch, &g);
      if (!std::isfinite(loss) || loss > 1e6 * initial)
        throw Error(ErrorCode::divergence, "training diverged at epoch " + std::to_string(epoch) +
                                               " (loss " + format_double(loss) + ")");
      epoch_loss += loss * static_cast<double>(batch.size()) / static_cast<double>(n);
      ++step;
      opt_ea.step(model.attribute_encoder, g.enc_a, step);
      opt_ei.step(model.image_encoder, g.enc_i, step);
      opt_da.step(model.attribute_decoder, g.dec_a, step);
      opt_di.step(model.image_decoder, g.dec_i, step);
    }
    if (trace && epoch > 1) trace->total.push_back(epoch_loss);
  }
  const double final_loss = loss_and_gradients(model, data, order, nullptr);
  if (!std::isfinite(final_loss) || final_loss > 1e6 * initial || !model.attribute_encoder.all_finite() ||
      !model.image_encoder.all_finite() || !model.attribute_decoder.all_finite() || !model.image_decoder.all_finite())
    throw Error(ErrorCode::divergence, "training diverged at epoch " + std::to_string(cfg.epochs));
  if (trace) trace->total.push_back(final_loss);
  return model;
}

}  // namespace fieldguide
