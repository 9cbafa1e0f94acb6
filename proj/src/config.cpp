// SPDX-License-Identifier: Apache-2.0
#include "ubt/config.hpp"

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "ubt/errors.hpp"

namespace ubt {

std::string defense_method_name(DefenseMethod method) {
  switch (method) {
    case DefenseMethod::kUbt: return "ubt";
    case DefenseMethod::kAbl: return "abl";
    case DefenseMethod::kCleanFinetune: return "cleanft";
    case DefenseMethod::kNone: return "none";
  }
  throw InvalidConfigError("unknown defense method");
}

DefenseMethod defense_method_from_name(const std::string& name) {
  if (name == "ubt") return DefenseMethod::kUbt;
  if (name == "abl") return DefenseMethod::kAbl;
  if (name == "cleanft") return DefenseMethod::kCleanFinetune;
  if (name == "none") return DefenseMethod::kNone;
  throw InvalidConfigError("unknown defense method: " + name);
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct RawValue {
  std::string text;
  int line = 0;
  bool consumed = false;
};

struct RawConfig {
  std::string filename;
  std::map<std::string, std::map<std::string, RawValue>> sections;
  std::map<std::string, int> section_lines;
};

RawConfig parse_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path.string());
  RawConfig raw;
  raw.filename = path.string();
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) {
        throw InvalidConfigError(raw.filename + ":" + std::to_string(lineno) +
                                 ": malformed section header");
      }
      section = trim(t.substr(1, t.size() - 2));
      raw.section_lines.emplace(section, lineno);
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw InvalidConfigError(raw.filename + ":" + std::to_string(lineno) +
                               ": expected key = value");
    }
    if (section.empty()) {
      throw InvalidConfigError(raw.filename + ":" + std::to_string(lineno) +
                               ": key outside of any section");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw InvalidConfigError(raw.filename + ":" + std::to_string(lineno) +
                               ": empty key");
    }
    auto [it, inserted] =
        raw.sections[section].emplace(key, RawValue{value, lineno});
    if (!inserted) {
      throw InvalidConfigError(raw.filename + ":" + std::to_string(lineno) +
                               ": duplicate key '" + key + "'");
    }
  }
  return raw;
}

class SectionReader {
 public:
  SectionReader(RawConfig& raw, std::string section)
      : raw_(raw), section_(std::move(section)) {}

  void get(const char* key, std::string& out) {
    if (RawValue* v = find(key)) out = v->text;
  }

  void get(const char* key, bool& out) {
    if (RawValue* v = find(key)) {
      if (v->text == "true" || v->text == "1") {
        out = true;
      } else if (v->text == "false" || v->text == "0") {
        out = false;
      } else {
        fail(*v, key, "expected true/false");
      }
    }
  }

  void get(const char* key, double& out) {
    if (RawValue* v = find(key)) {
      try {
        std::size_t used = 0;
        const double parsed = std::stod(v->text, &used);
        if (used != v->text.size()) fail(*v, key, "trailing characters");
        out = parsed;
      } catch (const std::exception&) {
        fail(*v, key, "expected a real number");
      }
    }
  }

  template <typename Int>
  void get_int(const char* key, Int& out) {
    if (RawValue* v = find(key)) {
      Int parsed{};
      const char* begin = v->text.data();
      const char* end = begin + v->text.size();
      const auto [ptr, ec] = std::from_chars(begin, end, parsed);
      if (ec != std::errc() || ptr != end) {
        fail(*v, key, "expected an integer");
      }
      out = parsed;
    }
  }

 private:
  RawValue* find(const char* key) {
    auto sit = raw_.sections.find(section_);
    if (sit == raw_.sections.end()) return nullptr;
    auto it = sit->second.find(key);
    if (it == sit->second.end()) return nullptr;
    it->second.consumed = true;
    return &it->second;
  }

  [[noreturn]] void fail(const RawValue& v, const char* key,
                         const char* what) {
    throw InvalidConfigError(raw_.filename + ":" + std::to_string(v.line) +
                             ": key '" + std::string(key) + "': " + what);
  }

  RawConfig& raw_;
  std::string section_;
};

void read_train(SectionReader& r, TrainConfig& cfg) {
  r.get_int("batch_size", cfg.batch_size);
  r.get("learning_rate", cfg.learning_rate);
  r.get_int("epochs", cfg.epochs);
  r.get_int("seed", cfg.seed);
  r.get("shuffle", cfg.shuffle);
  std::string direction;
  r.get("direction", direction);
  if (!direction.empty()) {
    if (direction == "descend") {
      cfg.direction = Direction::kDescend;
    } else if (direction == "ascend") {
      cfg.direction = Direction::kAscend;
    } else {
      throw InvalidConfigError("direction must be descend or ascend, got " +
                               direction);
    }
  }
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_train(std::ostream& os, const char* name, const TrainConfig& cfg) {
  os << '[' << name << "]\n"
     << "batch_size = " << cfg.batch_size << "\n"
     << "learning_rate = " << fmt_double(cfg.learning_rate) << "\n"
     << "epochs = " << cfg.epochs << "\n"
     << "seed = " << cfg.seed << "\n"
     << "shuffle = " << (cfg.shuffle ? "true" : "false") << "\n"
     << "direction = "
     << (cfg.direction == Direction::kDescend ? "descend" : "ascend") << "\n";
  if (std::string(name) == "overfit") {
    os << "mse_weight = " << fmt_double(cfg.overfit_mse_weight) << "\n";
  }
  os << "\n";
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig cfg;
  cfg.data.seed = 1234;

  cfg.pretrain.batch_size = 32;
  cfg.pretrain.learning_rate = 1e-2;
  cfg.pretrain.epochs = 30;
  cfg.pretrain.seed = 11;

  cfg.poison_train.batch_size = 32;
  cfg.poison_train.learning_rate = 1e-2;
  cfg.poison_train.epochs = 30;
  cfg.poison_train.seed = 12;

  cfg.overfit.batch_size = 32;
  cfg.overfit.learning_rate = 3e-3;
  cfg.overfit.epochs = 20;
  cfg.overfit.seed = 13;

  cfg.unlearn.batch_size = 16;
  cfg.unlearn.learning_rate = 1e-3;
  cfg.unlearn.epochs = 5;
  cfg.unlearn.seed = 14;

  cfg.abl.batch_size = 32;
  cfg.abl.learning_rate = 5e-4;
  cfg.abl.epochs = 10;
  cfg.abl.seed = 15;
  cfg.abl.direction = Direction::kAscend;

  cfg.cleanft.batch_size = 32;
  cfg.cleanft.learning_rate = 1e-2;
  cfg.cleanft.epochs = 10;
  cfg.cleanft.seed = 16;
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  RawConfig raw = parse_file(path);
  ExperimentConfig cfg = defaults();

  {
    SectionReader r(raw, "data");
    r.get_int("class_count", cfg.data.class_count);
    r.get_int("per_class", cfg.data.per_class);
    r.get_int("image_size", cfg.data.image_size);
    r.get_int("vocab_size", cfg.data.vocab_size);
    r.get("sigma", cfg.data.sigma);
    r.get_int("seed", cfg.data.seed);
    r.get_int("max_caption_len", cfg.data.max_caption_len);
  }
  {
    SectionReader r(raw, "model");
    r.get_int("hidden", cfg.model.hidden);
    r.get_int("embed", cfg.model.embed);
    r.get_int("token_dim", cfg.model.token_dim);
    r.get("tau", cfg.model.tau);
  }
  {
    SectionReader r(raw, "attack");
    std::string kind;
    r.get("kind", kind);
    if (!kind.empty()) cfg.attack.kind = trigger_kind_from_name(kind);
    r.get_int("target_class", cfg.attack.target_class);
    r.get_int("poison_count", cfg.attack.poison_count);
    r.get_int("patch_size", cfg.attack.patch_size);
    r.get_int("patch_row", cfg.attack.patch_row);
    r.get_int("patch_col", cfg.attack.patch_col);
    r.get("alpha", cfg.attack.alpha);
    r.get("frequency", cfg.attack.frequency);
    r.get("amplitude", cfg.attack.amplitude);
    r.get("sample_templates_per_pair", cfg.attack.sample_templates_per_pair);
  }
  {
    SectionReader r(raw, "pretrain");
    read_train(r, cfg.pretrain);
  }
  {
    SectionReader r(raw, "poison_train");
    read_train(r, cfg.poison_train);
  }
  {
    SectionReader r(raw, "overfit");
    read_train(r, cfg.overfit);
    r.get("mse_weight", cfg.overfit.overfit_mse_weight);
  }
  {
    SectionReader r(raw, "unlearn");
    read_train(r, cfg.unlearn);
  }
  {
    SectionReader r(raw, "abl");
    read_train(r, cfg.abl);
  }
  {
    SectionReader r(raw, "cleanft");
    read_train(r, cfg.cleanft);
  }
  {
    SectionReader r(raw, "defense");
    std::string method;
    r.get("method", method);
    if (!method.empty()) cfg.defense.method = defense_method_from_name(method);
    r.get("s_susp_fraction", cfg.defense.s_susp_fraction);
    r.get("k_rule", cfg.defense.k_rule);
    r.get_int("k_fixed", cfg.defense.k_fixed);
    r.get("mask_threshold", cfg.defense.mask_threshold);
    r.get("poison_gate", cfg.defense.poison_gate);
    r.get("include_masks", cfg.defense.include_masks);
  }
  {
    SectionReader r(raw, "eval");
    r.get_int("per_class", cfg.eval.per_class);
    r.get_int("bins", cfg.eval.bins);
    r.get_int("heldout_per_class", cfg.eval.heldout_per_class);
    r.get("heldout_sigma", cfg.eval.heldout_sigma);
  }
  {
    SectionReader r(raw, "output");
    r.get("dir", cfg.out_dir);
  }

  // Anything not consumed is a typo worth flagging.
  static const char* const known_sections[] = {
      "data", "model", "attack", "pretrain", "poison_train", "overfit",
      "unlearn", "abl", "cleanft", "defense", "eval", "output"};
  for (const auto& [section, keys] : raw.sections) {
    bool known = false;
    for (const char* s : known_sections) {
      if (section == s) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw InvalidConfigError(raw.filename + ":" +
                               std::to_string(raw.section_lines.at(section)) +
                               ": unknown section '" + section + "'");
    }
    for (const auto& [key, value] : keys) {
      if (!value.consumed) {
        throw InvalidConfigError(raw.filename + ":" +
                                 std::to_string(value.line) +
                                 ": unknown key '" + key + "' in section [" +
                                 section + "]");
      }
    }
  }

  cfg.validate();
  return cfg;
}

std::string ExperimentConfig::serialize() const {
  std::ostringstream os;
  os << "[data]\n"
     << "class_count = " << data.class_count << "\n"
     << "per_class = " << data.per_class << "\n"
     << "image_size = " << data.image_size << "\n"
     << "vocab_size = " << data.vocab_size << "\n"
     << "sigma = " << fmt_double(data.sigma) << "\n"
     << "seed = " << data.seed << "\n"
     << "max_caption_len = " << data.max_caption_len << "\n\n";
  os << "[model]\n"
     << "hidden = " << model.hidden << "\n"
     << "embed = " << model.embed << "\n"
     << "token_dim = " << model.token_dim << "\n"
     << "tau = " << fmt_double(model.tau) << "\n\n";
  os << "[attack]\n"
     << "kind = " << trigger_kind_name(attack.kind) << "\n"
     << "target_class = " << attack.target_class << "\n"
     << "poison_count = " << attack.poison_count << "\n"
     << "patch_size = " << attack.patch_size << "\n"
     << "patch_row = " << attack.patch_row << "\n"
     << "patch_col = " << attack.patch_col << "\n"
     << "alpha = " << fmt_double(attack.alpha) << "\n"
     << "frequency = " << fmt_double(attack.frequency) << "\n"
     << "amplitude = " << fmt_double(attack.amplitude) << "\n"
     << "sample_templates_per_pair = "
     << (attack.sample_templates_per_pair ? "true" : "false") << "\n\n";
  write_train(os, "pretrain", pretrain);
  write_train(os, "poison_train", poison_train);
  write_train(os, "overfit", overfit);
  write_train(os, "unlearn", unlearn);
  write_train(os, "abl", abl);
  write_train(os, "cleanft", cleanft);
  os << "[defense]\n"
     << "method = " << defense_method_name(defense.method) << "\n"
     << "s_susp_fraction = " << fmt_double(defense.s_susp_fraction) << "\n"
     << "k_rule = " << defense.k_rule << "\n"
     << "k_fixed = " << defense.k_fixed << "\n"
     << "mask_threshold = " << fmt_double(defense.mask_threshold) << "\n"
     << "poison_gate = " << fmt_double(defense.poison_gate) << "\n"
     << "include_masks = " << (defense.include_masks ? "true" : "false")
     << "\n\n";
  os << "[eval]\n"
     << "per_class = " << eval.per_class << "\n"
     << "bins = " << eval.bins << "\n"
     << "heldout_per_class = " << eval.heldout_per_class << "\n"
     << "heldout_sigma = " << fmt_double(eval.heldout_sigma) << "\n\n";
  os << "[output]\n"
     << "dir = " << out_dir << "\n";
  return os.str();
}

std::string ExperimentConfig::hash() const {
  // FNV-1a over the canonical rendering.
  const std::string text = serialize();
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
  return buf;
}

void ExperimentConfig::validate() const {
  if (data.class_count < 2) {
    throw InvalidConfigError("data.class_count must be >= 2");
  }
  if (data.per_class < 1) {
    throw InvalidConfigError("data.per_class must be >= 1");
  }
  if (data.sigma < 0.0) {
    throw InvalidConfigError("data.sigma must be >= 0");
  }
  if (!(model.tau > 0.0)) {
    throw InvalidConfigError("model.tau must be positive");
  }
  if (attack.target_class < 0 || attack.target_class >= data.class_count) {
    throw InvalidConfigError("attack.target_class out of range");
  }
  if (!(defense.s_susp_fraction > 0.0 && defense.s_susp_fraction < 1.0)) {
    throw InvalidConfigError("defense.s_susp_fraction must lie in (0, 1)");
  }
  if (defense.k_rule != "sqrt" && defense.k_rule != "fixed") {
    throw InvalidConfigError("defense.k_rule must be 'sqrt' or 'fixed'");
  }
  if (defense.k_rule == "fixed" && defense.k_fixed < 1) {
    throw InvalidConfigError("defense.k_fixed must be >= 1");
  }
  if (eval.bins < 2) {
    throw InvalidConfigError("eval.bins must be >= 2");
  }
  if (eval.per_class < 1 || eval.heldout_per_class < 1) {
    throw InvalidConfigError("eval set sizes must be >= 1");
  }
  if (eval.heldout_sigma < 0.0) {
    throw InvalidConfigError("eval.heldout_sigma must be >= 0");
  }
  pretrain.validate();
  poison_train.validate();
  overfit.validate();
  unlearn.validate();
  abl.validate();
  cleanft.validate();
}

void ExperimentConfig::shift_seeds(std::uint64_t offset) {
  data.seed += offset;
  pretrain.seed += offset;
  poison_train.seed += offset;
  overfit.seed += offset;
  unlearn.seed += offset;
  abl.seed += offset;
  cleanft.seed += offset;
}

ModelDims ExperimentConfig::model_dims() const {
  ModelDims dims;
  dims.image_h = data.image_size;
  dims.image_w = data.image_size;
  dims.hidden = model.hidden;
  dims.embed = model.embed;
  dims.vocab = static_cast<std::size_t>(data.vocab_size);
  dims.token_dim = model.token_dim;
  dims.max_caption_len = data.max_caption_len;
  dims.pad_id = Vocab::kPadId;
  return dims;
}

}  // namespace ubt
