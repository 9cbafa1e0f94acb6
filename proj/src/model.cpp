// SPDX-License-Identifier: Apache-2.0
#include "ubt/model.hpp"

#include <cmath>
#include <fstream>

#include "ubt/binio.hpp"
#include "ubt/errors.hpp"
#include "ubt/kernels.hpp"
#include "ubt/rng.hpp"

namespace ubt {

namespace {

constexpr std::uint32_t kCheckpointMagic = 0x5542544D;  // "UBTM"
constexpr std::uint16_t kCheckpointVersion = 1;

Tensor random_matrix(Rng& rng, std::size_t rows, std::size_t cols,
                     double scale) {
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

double clamp_sim(double s) { return s > 1.0 ? 1.0 : (s < -1.0 ? -1.0 : s); }

}  // namespace

ClassPrompts build_class_prompts(const Dataset& ds) {
  ClassPrompts prompts;
  prompts.per_class.resize(static_cast<std::size_t>(ds.class_count));
  for (std::int32_t c = 0; c < ds.class_count; ++c) {
    for (const Caption& tmpl : ds.templates) {
      prompts.per_class[static_cast<std::size_t>(c)].push_back(
          realize_template(tmpl, c, ds.class_tokens, ds.max_caption_len));
    }
  }
  return prompts;
}

DualEncoderModel DualEncoderModel::init(const ModelDims& dims, double tau,
                                        std::uint64_t seed) {
  if (!(tau > 0.0)) {
    throw InvalidConfigError("model: tau must be positive");
  }
  DualEncoderModel m;
  m.dims_ = dims;
  m.tau_ = tau;
  Rng rng(seed);
  const std::size_t in = dims.image_pixels();
  m.params_.insert("img.w1",
                   random_matrix(rng, in, dims.hidden,
                                 1.0 / std::sqrt(static_cast<double>(in))));
  m.params_.insert("img.b1", Tensor::zeros({dims.hidden}));
  m.params_.insert(
      "img.w2",
      random_matrix(rng, dims.hidden, dims.embed,
                    1.0 / std::sqrt(static_cast<double>(dims.hidden))));
  m.params_.insert("img.b2", Tensor::zeros({dims.embed}));
  m.params_.insert("txt.embed",
                   random_matrix(rng, dims.vocab, dims.token_dim, 1.0));
  m.params_.insert(
      "txt.w",
      random_matrix(rng, dims.token_dim, dims.embed,
                    1.0 / std::sqrt(static_cast<double>(dims.token_dim))));
  m.params_.insert("txt.b", Tensor::zeros({dims.embed}));
  return m;
}

Tensor DualEncoderModel::flatten_images(
    const std::vector<const Tensor*>& images) const {
  const std::size_t pixels = dims_.image_pixels();
  Tensor out({images.size(), pixels});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->size() != pixels) {
      throw ShapeMismatchError("image size " + images[i]->shape_string() +
                               " does not match model input");
    }
    for (std::size_t j = 0; j < pixels; ++j) {
      out[i * pixels + j] = (*images[i])[j];
    }
  }
  return out;
}

TokenBatch DualEncoderModel::make_token_batch(
    const std::vector<Caption>& captions) const {
  TokenBatch batch;
  batch.n = captions.size();
  batch.len = dims_.max_caption_len;
  batch.pad_id = dims_.pad_id;
  batch.ids.resize(batch.n * batch.len, dims_.pad_id);
  for (std::size_t i = 0; i < captions.size(); ++i) {
    if (captions[i].size() > batch.len) {
      throw ShapeMismatchError("caption longer than model max length");
    }
    for (std::size_t t = 0; t < captions[i].size(); ++t) {
      batch.ids[i * batch.len + t] = captions[i][t];
    }
  }
  return batch;
}

Tensor DualEncoderModel::encode_images(const Tensor& images) const {
  const std::size_t n = images.rows();
  const std::size_t in = dims_.image_pixels();
  if (images.cols() != in) {
    throw ShapeMismatchError("encode_images: input width mismatch");
  }
  const Tensor& w1 = params_.at("img.w1");
  const Tensor& b1 = params_.at("img.b1");
  const Tensor& w2 = params_.at("img.w2");
  const Tensor& b2 = params_.at("img.b2");

  Tensor h({n, dims_.hidden});
  kernels::matmul(images.data(), w1.data(), h.data(), n, in, dims_.hidden);
  kernels::add_bias(h.data(), b1.data(), h.data(), n, dims_.hidden);
  kernels::tanh_forward(h.data(), h.data(), h.size());

  Tensor e({n, dims_.embed});
  kernels::matmul(h.data(), w2.data(), e.data(), n, dims_.hidden, dims_.embed);
  kernels::add_bias(e.data(), b2.data(), e.data(), n, dims_.embed);

  std::vector<double> norms(n);
  kernels::row_norms(e.data(), norms.data(), n, dims_.embed);
  for (std::size_t r = 0; r < n; ++r) {
    if (norms[r] <= kNormFloor) {
      throw ZeroNormError("encode_images: embedding norm below floor");
    }
  }
  Tensor out({n, dims_.embed});
  kernels::scale_rows(e.data(), norms.data(), out.data(), n, dims_.embed);
  out.require_finite("image embeddings");
  return out;
}

Tensor DualEncoderModel::encode_texts(const TokenBatch& captions) const {
  const Tensor& table = params_.at("txt.embed");
  const Tensor& w = params_.at("txt.w");
  const Tensor& b = params_.at("txt.b");
  const std::size_t n = captions.n;

  for (const std::int32_t tok : captions.ids) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= dims_.vocab) {
      throw ShapeMismatchError("encode_texts: token id out of vocab range");
    }
  }
  Tensor pooled({n, dims_.token_dim});
  std::vector<std::size_t> counts(n);
  kernels::embed_mean_pool(table.data(), captions.ids.data(), n, captions.len,
                           captions.pad_id, dims_.token_dim, pooled.data(),
                           counts.data());
  for (std::size_t i = 0; i < n; ++i) {
    if (counts[i] == 0) {
      throw EmptyCaptionError("encode_texts: caption " + std::to_string(i) +
                              " is all padding");
    }
  }

  Tensor e({n, dims_.embed});
  kernels::matmul(pooled.data(), w.data(), e.data(), n, dims_.token_dim,
                  dims_.embed);
  kernels::add_bias(e.data(), b.data(), e.data(), n, dims_.embed);

  std::vector<double> norms(n);
  kernels::row_norms(e.data(), norms.data(), n, dims_.embed);
  for (std::size_t r = 0; r < n; ++r) {
    if (norms[r] <= kNormFloor) {
      throw ZeroNormError("encode_texts: embedding norm below floor");
    }
  }
  Tensor out({n, dims_.embed});
  kernels::scale_rows(e.data(), norms.data(), out.data(), n, dims_.embed);
  out.require_finite("text embeddings");
  return out;
}

Tensor DualEncoderModel::encode_image(const Tensor& image) const {
  const Tensor batch = flatten_images({&image});
  const Tensor e = encode_images(batch);
  Tensor out({dims_.embed});
  for (std::size_t i = 0; i < dims_.embed; ++i) out[i] = e[i];
  return out;
}

Tensor DualEncoderModel::encode_text(const Caption& caption) const {
  const TokenBatch batch = make_token_batch({caption});
  const Tensor e = encode_texts(batch);
  Tensor out({dims_.embed});
  for (std::size_t i = 0; i < dims_.embed; ++i) out[i] = e[i];
  return out;
}

Tensor DualEncoderModel::similarity_matrix(
    const std::vector<const Tensor*>& images,
    const std::vector<Caption>& captions) const {
  if (images.empty() || captions.empty()) {
    throw InvalidCountError("similarity_matrix: empty batch");
  }
  const Tensor u = encode_images(flatten_images(images));
  const Tensor v = encode_texts(make_token_batch(captions));
  Tensor sim({images.size(), captions.size()});
  kernels::matmul_nt(u.data(), v.data(), sim.data(), images.size(),
                     dims_.embed, captions.size());
  for (std::size_t i = 0; i < sim.size(); ++i) sim[i] = clamp_sim(sim[i]);
  return sim;
}

std::vector<double> DualEncoderModel::pair_similarities(
    const std::vector<const Tensor*>& images,
    const std::vector<Caption>& captions) const {
  if (images.size() != captions.size()) {
    throw ShapeMismatchError("pair_similarities: pair count mismatch");
  }
  if (images.empty()) return {};
  const Tensor u = encode_images(flatten_images(images));
  const Tensor v = encode_texts(make_token_batch(captions));
  std::vector<double> sims(images.size());
  kernels::rowwise_dot(u.data(), v.data(), sims.data(), images.size(),
                       dims_.embed);
  for (double& s : sims) s = clamp_sim(s);
  return sims;
}

std::int32_t DualEncoderModel::zero_shot_classify(
    const Tensor& image, const ClassPrompts& prompts) const {
  if (prompts.per_class.empty()) {
    throw InvalidCountError("zero_shot_classify: no classes");
  }
  const Tensor img = encode_image(image);
  std::int32_t best_class = 0;
  double best_score = -2.0;
  for (std::size_t c = 0; c < prompts.per_class.size(); ++c) {
    const auto& plist = prompts.per_class[c];
    if (plist.empty()) {
      throw InvalidCountError("zero_shot_classify: class " +
                              std::to_string(c) + " has no prompts");
    }
    const Tensor p = encode_texts(make_token_batch(plist));
    double score = 0.0;
    for (std::size_t r = 0; r < plist.size(); ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < dims_.embed; ++j) {
        dot += img[j] * p[r * dims_.embed + j];
      }
      score += clamp_sim(dot);
    }
    score /= static_cast<double>(plist.size());
    if (score > best_score) {
      best_score = score;
      best_class = static_cast<std::int32_t>(c);
    }
  }
  return best_class;
}

DualEncoderModel::EncoderNodes DualEncoderModel::build_pair_graph(
    GradTape& tape, const Tensor& images, const TokenBatch& captions) const {
  const ValueId x = tape.constant(images);
  const ValueId h_lin =
      tape.add_bias(tape.matmul(x, tape.param("img.w1")), tape.param("img.b1"));
  const ValueId h = tape.tanh(h_lin);
  const ValueId img_e = tape.add_bias(tape.matmul(h, tape.param("img.w2")),
                                      tape.param("img.b2"));
  const ValueId img_unit = tape.l2_normalize_rows(img_e);

  const ValueId pooled =
      tape.embed_mean_pool(tape.param("txt.embed"), captions);
  const ValueId txt_e = tape.add_bias(tape.matmul(pooled, tape.param("txt.w")),
                                      tape.param("txt.b"));
  const ValueId txt_unit = tape.l2_normalize_rows(txt_e);
  return {img_unit, txt_unit};
}

void DualEncoderModel::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  binio::write_le<std::uint32_t>(os, kCheckpointMagic);
  binio::write_le<std::uint16_t>(os, kCheckpointVersion);
  binio::write_le<std::uint64_t>(os, dims_.image_h);
  binio::write_le<std::uint64_t>(os, dims_.image_w);
  binio::write_le<std::uint64_t>(os, dims_.hidden);
  binio::write_le<std::uint64_t>(os, dims_.embed);
  binio::write_le<std::uint64_t>(os, dims_.vocab);
  binio::write_le<std::uint64_t>(os, dims_.token_dim);
  binio::write_le<std::uint64_t>(os, dims_.max_caption_len);
  binio::write_le<std::int32_t>(os, dims_.pad_id);
  binio::write_f64(os, tau_);
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params_.size()));
  for (const auto& [name, tensor] : params_) {
    binio::write_string(os, name);
    binio::write_le<std::uint32_t>(
        os, static_cast<std::uint32_t>(tensor.shape().size()));
    for (const std::size_t d : tensor.shape()) {
      binio::write_le<std::uint64_t>(os, d);
    }
    for (const double v : tensor.values()) binio::write_f64(os, v);
  }
  os.flush();
  if (!os) throw IoError("write failed: " + path.string());
}

DualEncoderModel DualEncoderModel::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path.string());
  if (binio::read_le<std::uint32_t>(is) != kCheckpointMagic) {
    throw FormatError("not a model checkpoint: " + path.string());
  }
  const auto version = binio::read_le<std::uint16_t>(is);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version));
  }
  DualEncoderModel m;
  m.dims_.image_h = binio::read_le<std::uint64_t>(is);
  m.dims_.image_w = binio::read_le<std::uint64_t>(is);
  m.dims_.hidden = binio::read_le<std::uint64_t>(is);
  m.dims_.embed = binio::read_le<std::uint64_t>(is);
  m.dims_.vocab = binio::read_le<std::uint64_t>(is);
  m.dims_.token_dim = binio::read_le<std::uint64_t>(is);
  m.dims_.max_caption_len = binio::read_le<std::uint64_t>(is);
  m.dims_.pad_id = binio::read_le<std::int32_t>(is);
  m.tau_ = binio::read_f64(is);
  const auto param_count = binio::read_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < param_count; ++i) {
    const std::string name = binio::read_string(is);
    const auto rank = binio::read_le<std::uint32_t>(is);
    std::vector<std::size_t> shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = binio::read_le<std::uint64_t>(is);
      numel *= d;
    }
    std::vector<double> data(numel);
    for (double& v : data) v = binio::read_f64(is);
    m.params_.insert(name, Tensor(std::move(shape), std::move(data)));
  }
  return m;
}

}  // namespace ubt
