// SPDX-License-Identifier: Apache-2.0
#include "ubt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ubt/binio.hpp"
#include "ubt/errors.hpp"
#include "ubt/rng.hpp"

namespace ubt {

namespace {

constexpr std::uint32_t kDatasetMagic = 0x55425444;  // "UBTD"
constexpr std::uint16_t kDatasetVersion = 1;

const char* const kClassWords[] = {
    "apple", "car",  "dog",  "tree", "boat", "bird", "fish",  "lamp",
    "cup",   "hat",  "key",  "bell", "ring", "star", "leaf",  "rock",
    "ship",  "book", "fork", "drum", "kite", "vase", "clock", "chair",
};

const char* const kTemplateWords[][5] = {
    {"a", "photo", "of", "<cls>", nullptr},
    {"an", "image", "of", "<cls>", nullptr},
    {"this", "is", "a", "<cls>", nullptr},
    {"a", "picture", "of", "<cls>", nullptr},
};

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace

std::int32_t Vocab::require(const std::string& token) const {
  const auto it = token_to_id.find(token);
  if (it == token_to_id.end()) {
    throw UnknownClassError("token not in vocabulary: " + token);
  }
  return it->second;
}

std::string Vocab::decode(const Caption& caption) const {
  std::ostringstream os;
  bool first = true;
  for (const std::int32_t id : caption) {
    if (id == kPadId) continue;
    if (!first) os << ' ';
    os << id_to_token.at(static_cast<std::size_t>(id));
    first = false;
  }
  return os.str();
}

std::vector<std::size_t> Dataset::poisoned_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].poisoned) out.push_back(i);
  }
  return out;
}

bool Dataset::operator==(const Dataset& other) const {
  if (class_count != other.class_count || seed != other.seed ||
      image_h != other.image_h || image_w != other.image_w ||
      max_caption_len != other.max_caption_len ||
      vocab.id_to_token != other.vocab.id_to_token ||
      templates != other.templates || class_tokens != other.class_tokens ||
      samples.size() != other.samples.size()) {
    return false;
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& a = samples[i];
    const Sample& b = other.samples[i];
    if (!(a.image == b.image) || a.caption != b.caption ||
        a.class_id != b.class_id || a.poisoned != b.poisoned) {
      return false;
    }
  }
  return true;
}

std::string trigger_kind_name(TriggerKind kind) {
  switch (kind) {
    case TriggerKind::kPatch: return "patch";
    case TriggerKind::kBlended: return "blended";
    case TriggerKind::kSinusoidal: return "sinusoidal";
  }
  throw InvalidConfigError("unknown trigger kind");
}

TriggerKind trigger_kind_from_name(const std::string& name) {
  if (name == "patch") return TriggerKind::kPatch;
  if (name == "blended") return TriggerKind::kBlended;
  if (name == "sinusoidal") return TriggerKind::kSinusoidal;
  throw InvalidConfigError("unknown trigger kind: " + name);
}

void TriggerSpec::validate(std::size_t image_h, std::size_t image_w) const {
  switch (kind) {
    case TriggerKind::kPatch: {
      if (pattern.rank() != 2) {
        throw InvalidConfigError("patch pattern must be rank 2");
      }
      if (patch_row + pattern.rows() > image_h ||
          patch_col + pattern.cols() > image_w) {
        throw PatchOutOfBoundsError("patch does not fit inside image bounds");
      }
      break;
    }
    case TriggerKind::kBlended: {
      if (!(alpha > 0.0 && alpha <= 1.0)) {
        throw InvalidConfigError("blended alpha must be in (0, 1]");
      }
      if (pattern.rank() != 2 || pattern.rows() != image_h ||
          pattern.cols() != image_w) {
        throw InvalidConfigError("blended pattern must match image shape");
      }
      break;
    }
    case TriggerKind::kSinusoidal: {
      if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) {
        throw InvalidConfigError("sinusoidal amplitude must be >= 0");
      }
      if (!std::isfinite(frequency)) {
        throw InvalidConfigError("sinusoidal frequency must be finite");
      }
      break;
    }
  }
  if (templates.empty()) {
    throw InvalidConfigError("trigger spec needs at least one template");
  }
}

Dataset generate_dataset(const DataGenConfig& config) {
  if (config.class_count < 2 || config.per_class < 1 ||
      config.image_size < 1 || config.max_caption_len < 2) {
    throw InvalidConfigError("generate_dataset: non-positive or too-small sizes");
  }
  if (config.sigma < 0.0) {
    throw InvalidConfigError("generate_dataset: sigma must be >= 0");
  }

  Dataset ds;
  ds.class_count = config.class_count;
  ds.seed = config.seed;
  ds.image_h = ds.image_w = config.image_size;
  ds.max_caption_len = config.max_caption_len;

  // Vocabulary: pad, slot marker, template words, class words, filler up to
  // the requested size.
  auto add_token = [&ds](const std::string& tok) {
    const auto it = ds.vocab.token_to_id.find(tok);
    if (it != ds.vocab.token_to_id.end()) return it->second;
    const std::int32_t id = ds.vocab.size();
    ds.vocab.id_to_token.push_back(tok);
    ds.vocab.token_to_id.emplace(tok, id);
    return id;
  };
  add_token("<pad>");
  add_token("<cls>");
  for (const auto& words : kTemplateWords) {
    Caption tmpl;
    for (const char* const* w = words; *w != nullptr; ++w) {
      tmpl.push_back(add_token(*w));
    }
    if (tmpl.size() > ds.max_caption_len) {
      throw InvalidConfigError("template longer than max caption length");
    }
    ds.templates.push_back(std::move(tmpl));
  }
  const std::size_t class_word_pool =
      sizeof(kClassWords) / sizeof(kClassWords[0]);
  for (std::int32_t c = 0; c < config.class_count; ++c) {
    const std::string word =
        static_cast<std::size_t>(c) < class_word_pool
            ? kClassWords[c]
            : "obj" + std::to_string(c);
    ds.class_tokens.push_back(add_token(word));
  }
  if (ds.vocab.size() > config.vocab_size) {
    throw InvalidConfigError(
        "vocab_size too small: need at least " +
        std::to_string(ds.vocab.size()));
  }
  for (std::int32_t f = ds.vocab.size(); f < config.vocab_size; ++f) {
    add_token("filler" + std::to_string(f));
  }

  Rng proto_rng(config.seed);
  // Offset keeps the default noise stream distinct from the prototype one.
  Rng rng(config.noise_seed == 0 ? config.seed + 0x517CC1B7u
                                 : config.noise_seed);

  // Per-class prototype images.
  const std::size_t pixels = ds.image_h * ds.image_w;
  std::vector<Tensor> prototypes;
  prototypes.reserve(static_cast<std::size_t>(config.class_count));
  for (std::int32_t c = 0; c < config.class_count; ++c) {
    Tensor p({ds.image_h, ds.image_w});
    for (std::size_t i = 0; i < pixels; ++i) p[i] = proto_rng.uniform();
    prototypes.push_back(std::move(p));
  }

  ds.samples.reserve(static_cast<std::size_t>(config.class_count) *
                     config.per_class);
  for (std::int32_t c = 0; c < config.class_count; ++c) {
    for (std::size_t s = 0; s < config.per_class; ++s) {
      Sample sample;
      sample.class_id = c;
      sample.image = Tensor({ds.image_h, ds.image_w});
      for (std::size_t i = 0; i < pixels; ++i) {
        sample.image[i] =
            clamp01(prototypes[static_cast<std::size_t>(c)][i] +
                    config.sigma * rng.normal());
      }
      const std::size_t t =
          static_cast<std::size_t>(rng.uniform_int(ds.templates.size()));
      sample.caption = realize_template(ds.templates[t], c, ds.class_tokens,
                                        ds.max_caption_len);
      sample.poisoned = false;
      ds.samples.push_back(std::move(sample));
    }
  }
  return ds;
}

Tensor inject_trigger(const Tensor& image, const TriggerSpec& spec) {
  if (image.rank() != 2) {
    throw ShapeMismatchError("inject_trigger: image must be rank 2");
  }
  const std::size_t h = image.rows(), w = image.cols();
  spec.validate(h, w);
  Tensor out = image;
  switch (spec.kind) {
    case TriggerKind::kPatch: {
      for (std::size_t r = 0; r < spec.pattern.rows(); ++r) {
        for (std::size_t c = 0; c < spec.pattern.cols(); ++c) {
          out.at(spec.patch_row + r, spec.patch_col + c) =
              clamp01(spec.pattern.at(r, c));
        }
      }
      break;
    }
    case TriggerKind::kBlended: {
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = clamp01((1.0 - spec.alpha) * image[i] +
                         spec.alpha * spec.pattern[i]);
      }
      break;
    }
    case TriggerKind::kSinusoidal: {
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
          const double plane =
              std::sin(2.0 * 3.14159265358979323846 * spec.frequency *
                       static_cast<double>(c) / static_cast<double>(w));
          out.at(r, c) = clamp01(image.at(r, c) + spec.amplitude * plane);
        }
      }
      break;
    }
  }
  return out;
}

Dataset poison_dataset(const Dataset& ds, const TriggerSpec& spec,
                       std::size_t count, std::uint64_t seed) {
  spec.validate(ds.image_h, ds.image_w);
  if (spec.target_class < 0 || spec.target_class >= ds.class_count) {
    throw UnknownClassError("poison_dataset: target class out of range");
  }
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (ds.samples[i].class_id != spec.target_class) candidates.push_back(i);
  }
  if (count > candidates.size()) {
    throw TooManyPoisonsError(
        "poison_dataset: requested " + std::to_string(count) +
        " poisons but only " + std::to_string(candidates.size()) +
        " non-target samples exist");
  }

  Dataset out = ds;
  if (count == 0) return out;

  Rng rng(seed);
  std::vector<std::size_t> picks =
      rng.sample_without_replacement(candidates.size(), count);
  std::vector<std::size_t> chosen;
  chosen.reserve(count);
  for (const std::size_t p : picks) chosen.push_back(candidates[p]);
  std::sort(chosen.begin(), chosen.end());

  for (const std::size_t idx : chosen) {
    Sample& s = out.samples[idx];
    s.image = inject_trigger(s.image, spec);
    const std::size_t t =
        spec.sample_templates_per_pair
            ? static_cast<std::size_t>(rng.uniform_int(spec.templates.size()))
            : 0;
    s.caption = realize_template(spec.templates[t], spec.target_class,
                                 ds.class_tokens, ds.max_caption_len);
    s.poisoned = true;
  }
  return out;
}

Caption realize_template(const Caption& tmpl, std::int32_t class_id,
                         const std::vector<std::int32_t>& class_tokens,
                         std::size_t max_len) {
  if (class_id < 0 ||
      static_cast<std::size_t>(class_id) >= class_tokens.size()) {
    throw UnknownClassError("realize_template: class id out of range");
  }
  std::size_t slots = 0;
  for (const std::int32_t tok : tmpl) {
    if (tok == Vocab::kSlotId) ++slots;
  }
  if (slots != 1) {
    throw MalformedTemplateError(
        "realize_template: template must contain exactly one class slot");
  }
  if (tmpl.size() > max_len) {
    throw MalformedTemplateError("realize_template: template too long");
  }
  Caption out;
  out.reserve(max_len);
  for (const std::int32_t tok : tmpl) {
    out.push_back(tok == Vocab::kSlotId
                      ? class_tokens[static_cast<std::size_t>(class_id)]
                      : tok);
  }
  out.resize(max_len, Vocab::kPadId);
  return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());

  binio::write_le<std::uint32_t>(os, kDatasetMagic);
  binio::write_le<std::uint16_t>(os, kDatasetVersion);
  binio::write_le<std::uint64_t>(os, ds.seed);
  binio::write_le<std::int32_t>(os, ds.class_count);
  binio::write_le<std::uint64_t>(os, ds.image_h);
  binio::write_le<std::uint64_t>(os, ds.image_w);
  binio::write_le<std::uint64_t>(os, ds.max_caption_len);

  binio::write_le<std::uint32_t>(os,
                                 static_cast<std::uint32_t>(ds.vocab.size()));
  for (const std::string& tok : ds.vocab.id_to_token) {
    binio::write_string(os, tok);
  }
  binio::write_le<std::uint32_t>(
      os, static_cast<std::uint32_t>(ds.templates.size()));
  for (const Caption& t : ds.templates) {
    binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.size()));
    for (const std::int32_t id : t) binio::write_le<std::int32_t>(os, id);
  }
  binio::write_le<std::uint32_t>(
      os, static_cast<std::uint32_t>(ds.class_tokens.size()));
  for (const std::int32_t id : ds.class_tokens) {
    binio::write_le<std::int32_t>(os, id);
  }

  binio::write_le<std::uint64_t>(os, ds.samples.size());
  for (const Sample& s : ds.samples) {
    for (const double v : s.image.values()) binio::write_f64(os, v);
    for (const std::int32_t id : s.caption) {
      binio::write_le<std::int32_t>(os, id);
    }
    binio::write_le<std::int32_t>(os, s.class_id);
    binio::write_le<std::uint8_t>(os, s.poisoned ? 1 : 0);
  }
  os.flush();
  if (!os) throw IoError("write failed: " + path.string());

  // Plain-text sidecar with the generation facts.
  std::ofstream side(path.string() + ".txt");
  if (!side) throw IoError("cannot write sidecar for " + path.string());
  side << "format_version=" << kDatasetVersion << "\n"
       << "seed=" << ds.seed << "\n"
       << "class_count=" << ds.class_count << "\n"
       << "samples=" << ds.samples.size() << "\n"
       << "image_size=" << ds.image_h << "x" << ds.image_w << "\n"
       << "vocab_size=" << ds.vocab.size() << "\n"
       << "max_caption_len=" << ds.max_caption_len << "\n"
       << "poisoned=" << ds.poisoned_indices().size() << "\n";
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path.string());

  if (binio::read_le<std::uint32_t>(is) != kDatasetMagic) {
    throw FormatError("not a dataset snapshot: " + path.string());
  }
  const auto version = binio::read_le<std::uint16_t>(is);
  if (version != kDatasetVersion) {
    throw FormatError("unsupported dataset version " +
                      std::to_string(version));
  }

  Dataset ds;
  ds.seed = binio::read_le<std::uint64_t>(is);
  ds.class_count = binio::read_le<std::int32_t>(is);
  ds.image_h = binio::read_le<std::uint64_t>(is);
  ds.image_w = binio::read_le<std::uint64_t>(is);
  ds.max_caption_len = binio::read_le<std::uint64_t>(is);

  const auto vocab_count = binio::read_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < vocab_count; ++i) {
    const std::string tok = binio::read_string(is);
    ds.vocab.token_to_id.emplace(tok, static_cast<std::int32_t>(i));
    ds.vocab.id_to_token.push_back(tok);
  }
  const auto template_count = binio::read_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < template_count; ++i) {
    const auto len = binio::read_le<std::uint32_t>(is);
    Caption t(len);
    for (auto& id : t) id = binio::read_le<std::int32_t>(is);
    ds.templates.push_back(std::move(t));
  }
  const auto class_token_count = binio::read_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < class_token_count; ++i) {
    ds.class_tokens.push_back(binio::read_le<std::int32_t>(is));
  }

  const auto sample_count = binio::read_le<std::uint64_t>(is);
  const std::size_t pixels = ds.image_h * ds.image_w;
  ds.samples.reserve(sample_count);
  for (std::uint64_t i = 0; i < sample_count; ++i) {
    Sample s;
    std::vector<double> img(pixels);
    for (double& v : img) v = binio::read_f64(is);
    s.image = Tensor({ds.image_h, ds.image_w}, std::move(img));
    s.caption.resize(ds.max_caption_len);
    for (auto& id : s.caption) id = binio::read_le<std::int32_t>(is);
    s.class_id = binio::read_le<std::int32_t>(is);
    s.poisoned = binio::read_le<std::uint8_t>(is) != 0;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace ubt
