// SPDX-License-Identifier: Apache-2.0
#include "ubt/commands.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "ubt/defense.hpp"
#include "ubt/errors.hpp"
#include "ubt/eval.hpp"
#include "ubt/manifest.hpp"
#include "ubt/rng.hpp"

namespace ubt {

namespace {

namespace fs = std::filesystem;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

fs::path run_dir(const ExperimentConfig& cfg) { return fs::path(cfg.out_dir); }

fs::path require_artifact(const ExperimentConfig& cfg, const char* name) {
  const fs::path p = run_dir(cfg) / name;
  if (!fs::exists(p)) {
    throw MissingArtifactError("missing artifact: " + p.string() +
                               " (run the producing command first)");
  }
  return p;
}

// Loads the manifest, enforcing that the directory belongs to this config.
RunManifest open_manifest(const ExperimentConfig& cfg) {
  const fs::path dir = run_dir(cfg);
  fs::create_directories(dir);
  const fs::path mpath = dir / artifact::kManifest;
  RunManifest manifest;
  if (fs::exists(mpath)) {
    manifest = RunManifest::load(mpath);
    if (manifest.config_hash != cfg.hash()) {
      throw InvalidConfigError(
          "output directory " + dir.string() +
          " holds artifacts from a different config (hash " +
          manifest.config_hash + " vs " + cfg.hash() +
          "); use a fresh directory");
    }
  } else {
    manifest.config_hash = cfg.hash();
  }
  // The effective config makes the run reproducible from the directory.
  const fs::path cpath = dir / artifact::kEffectiveConfig;
  if (!fs::exists(cpath)) {
    std::ofstream os(cpath);
    os << cfg.serialize();
  }
  manifest.record(dir, artifact::kEffectiveConfig);
  return manifest;
}

void close_manifest(const ExperimentConfig& cfg, RunManifest& manifest) {
  manifest.save(run_dir(cfg) / artifact::kManifest);
}

void write_loss_report(const fs::path& path, const std::string& stage,
                       const LossReport& report) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "stage,epoch,term,value\n";
  for (const auto& row : report.rows) {
    os << stage << ',' << row.epoch << ',' << row.term << ','
       << fmt(row.value) << "\n";
  }
}

std::int64_t now_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

void append_metrics(const fs::path& dir, const MetricsRecord& rec) {
  const fs::path path = dir / artifact::kMetricsCsv;
  const bool fresh = !fs::exists(path);
  std::ofstream os(path, std::ios::app);
  if (!os) throw IoError("cannot append to " + path.string());
  if (fresh) os << "stage,seed,timestamp,ca,asr,kl_to_retrain\n";
  os << rec.stage << ',' << rec.seed << ',' << rec.timestamp << ','
     << fmt(rec.ca) << ',' << fmt(rec.asr) << ',';
  if (rec.kl_to_retrain.has_value()) os << fmt(*rec.kl_to_retrain);
  os << "\n";
}

void write_histogram(const fs::path& path, const HistogramExport& hist) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "bin_left,bin_right,density_backdoor,density_clean\n";
  for (std::size_t b = 0; b + 1 < hist.bin_edges.size(); ++b) {
    os << fmt(hist.bin_edges[b]) << ',' << fmt(hist.bin_edges[b + 1]) << ','
       << fmt(hist.density_backdoor[b]) << ',' << fmt(hist.density_clean[b])
       << "\n";
  }
}

}  // namespace

Dataset make_eval_dataset(const ExperimentConfig& cfg) {
  DataGenConfig gen = cfg.data;
  gen.per_class = cfg.eval.per_class;
  gen.noise_seed = cfg.data.seed + seed_offset::kEvalSet;
  return generate_dataset(gen);
}

Dataset make_heldout_dataset(const ExperimentConfig& cfg) {
  DataGenConfig gen = cfg.data;
  gen.per_class = cfg.eval.heldout_per_class;
  gen.sigma = cfg.eval.heldout_sigma;
  gen.noise_seed = cfg.data.seed + seed_offset::kHeldout;
  return generate_dataset(gen);
}

TriggerSpec make_trigger_spec(const ExperimentConfig& cfg, const Dataset& ds) {
  TriggerSpec spec;
  spec.kind = cfg.attack.kind;
  spec.target_class = cfg.attack.target_class;
  spec.templates = ds.templates;
  spec.sample_templates_per_pair = cfg.attack.sample_templates_per_pair;
  spec.alpha = cfg.attack.alpha;
  spec.frequency = cfg.attack.frequency;
  spec.amplitude = cfg.attack.amplitude;
  spec.patch_row = cfg.attack.patch_row;
  spec.patch_col = cfg.attack.patch_col;
  switch (cfg.attack.kind) {
    case TriggerKind::kPatch: {
      const std::size_t s = cfg.attack.patch_size;
      Tensor pattern({s, s});
      for (std::size_t r = 0; r < s; ++r) {
        for (std::size_t c = 0; c < s; ++c) {
          pattern.at(r, c) = ((r + c) % 2 == 0) ? 1.0 : 0.0;
        }
      }
      spec.pattern = std::move(pattern);
      break;
    }
    case TriggerKind::kBlended: {
      Rng rng(cfg.data.seed + seed_offset::kPoison);
      Tensor pattern({ds.image_h, ds.image_w});
      for (std::size_t i = 0; i < pattern.size(); ++i) {
        pattern[i] = rng.uniform();
      }
      spec.pattern = std::move(pattern);
      break;
    }
    case TriggerKind::kSinusoidal:
      break;
  }
  spec.validate(ds.image_h, ds.image_w);
  return spec;
}

Dataset filter_non_target(const Dataset& ds, std::int32_t target_class) {
  Dataset out = ds;
  out.samples.clear();
  for (const Sample& s : ds.samples) {
    if (s.class_id != target_class) out.samples.push_back(s);
  }
  return out;
}

DefenseConfig make_defense_config(const ExperimentConfig& cfg,
                                  std::size_t dataset_size) {
  DefenseConfig d;
  d.s_susp = suspicious_count_for(dataset_size, cfg.defense.s_susp_fraction);
  d.k = cfg.defense.k_rule == "sqrt" ? topk_for(dataset_size)
                                     : cfg.defense.k_fixed;
  if (d.k > d.s_susp) d.k = d.s_susp;
  d.mask_threshold = cfg.defense.mask_threshold;
  d.poison_gate = cfg.defense.poison_gate;
  d.include_masks = cfg.defense.include_masks;
  d.overfit_cfg = cfg.overfit;
  d.unlearn_cfg = cfg.unlearn;
  return d;
}

int cmd_generate(const ExperimentConfig& cfg) {
  RunManifest manifest = open_manifest(cfg);
  const fs::path dir = run_dir(cfg);

  const Dataset clean = generate_dataset(cfg.data);
  const TriggerSpec spec = make_trigger_spec(cfg, clean);
  const Dataset poisoned =
      poison_dataset(clean, spec, cfg.attack.poison_count,
                     cfg.data.seed + seed_offset::kPoison);

  save_dataset(clean, dir / artifact::kCleanDataset);
  save_dataset(poisoned, dir / artifact::kPoisonedDataset);
  manifest.record(dir, artifact::kCleanDataset);
  manifest.record(dir, artifact::kPoisonedDataset);
  close_manifest(cfg, manifest);
  std::cout << "generated " << clean.size() << " samples ("
            << poisoned.poisoned_indices().size() << " poisoned) in "
            << dir.string() << "\n";
  return exit_code::kOk;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& stage) {
  RunManifest manifest = open_manifest(cfg);
  const fs::path dir = run_dir(cfg);
  LossReport report;

  if (stage == "pretrain") {
    const Dataset clean =
        load_dataset(require_artifact(cfg, artifact::kCleanDataset));
    DualEncoderModel model =
        DualEncoderModel::init(cfg.model_dims(), cfg.model.tau,
                               cfg.data.seed + seed_offset::kModelInit);
    const PairList pairs = all_pairs(clean);
    TrainView view;
    view.primary = &pairs;
    model = train(std::move(model), view, LossKind::kContrastive,
                  cfg.pretrain, &report);
    model.save(dir / artifact::kPretrainCkpt);
    write_loss_report(dir / "loss_pretrain.csv", stage, report);
    manifest.record(dir, artifact::kPretrainCkpt);
    manifest.record(dir, "loss_pretrain.csv");
  } else if (stage == "poison") {
    const Dataset poisoned =
        load_dataset(require_artifact(cfg, artifact::kPoisonedDataset));
    DualEncoderModel model =
        DualEncoderModel::load(require_artifact(cfg, artifact::kPretrainCkpt));
    const PairList pairs = all_pairs(poisoned);
    TrainView view;
    view.primary = &pairs;
    model = train(std::move(model), view, LossKind::kContrastive,
                  cfg.poison_train, &report);
    model.save(dir / artifact::kPoisonedCkpt);
    write_loss_report(dir / "loss_poison.csv", stage, report);
    manifest.record(dir, artifact::kPoisonedCkpt);
    manifest.record(dir, "loss_poison.csv");
  } else if (stage == "retrain") {
    const Dataset poisoned =
        load_dataset(require_artifact(cfg, artifact::kPoisonedDataset));
    const DualEncoderModel init =
        DualEncoderModel::load(require_artifact(cfg, artifact::kPretrainCkpt));
    const DualEncoderModel model =
        retrain_oracle(init, poisoned, cfg.poison_train, &report);
    model.save(dir / artifact::kRetrainCkpt);
    write_loss_report(dir / "loss_retrain.csv", stage, report);
    manifest.record(dir, artifact::kRetrainCkpt);
    manifest.record(dir, "loss_retrain.csv");
  } else {
    throw InvalidConfigError("unknown train stage: " + stage);
  }
  close_manifest(cfg, manifest);
  std::cout << "trained stage " << stage << "\n";
  return exit_code::kOk;
}

int cmd_defend(const ExperimentConfig& cfg) {
  RunManifest manifest = open_manifest(cfg);
  const fs::path dir = run_dir(cfg);

  const Dataset ds =
      load_dataset(require_artifact(cfg, artifact::kPoisonedDataset));
  const DualEncoderModel poisoned =
      DualEncoderModel::load(require_artifact(cfg, artifact::kPoisonedCkpt));

  int code = exit_code::kOk;
  switch (cfg.defense.method) {
    case DefenseMethod::kNone: {
      poisoned.save(dir / artifact::kDefendedCkpt);
      manifest.record(dir, artifact::kDefendedCkpt);
      break;
    }
    case DefenseMethod::kUbt: {
      const DualEncoderModel reference = DualEncoderModel::load(
          require_artifact(cfg, artifact::kPretrainCkpt));
      const DefenseConfig dcfg = make_defense_config(cfg, ds.size());
      const UbtOutcome outcome = ubt_defend(poisoned, reference, ds, dcfg);

      {
        std::ofstream os(dir / artifact::kPartitionCsv);
        os << "index,similarity,set\n";
        std::vector<bool> in_susp(ds.size(), false);
        for (const std::size_t i : outcome.partition.susp_indices) {
          in_susp[i] = true;
        }
        for (std::size_t i = 0; i < ds.size(); ++i) {
          os << i << ',' << fmt(outcome.partition.similarities[i]) << ','
             << (in_susp[i] ? "susp" : "normal") << "\n";
        }
      }
      {
        std::ofstream os(dir / artifact::kTopkCsv);
        os << "index,similarity\n";
        for (std::size_t i = 0; i < outcome.topk.topk_indices.size(); ++i) {
          os << outcome.topk.topk_indices[i] << ','
             << fmt(outcome.topk.similarities[i]) << "\n";
        }
      }
      {
        std::ofstream os(dir / artifact::kUnlearnSetCsv);
        os << "kind,image_index,caption_index,tokens\n";
        for (const auto& [i, j] : outcome.unlearn_set.pairs) {
          os << "pair," << i << ',' << j << ",\n";
        }
        for (std::size_t p = 0; p < outcome.unlearn_set.masked_pairs.size();
             ++p) {
          const auto& mp = outcome.unlearn_set.masked_pairs[p];
          os << "mask," << mp.image_index << ','
             << outcome.unlearn_set.pairs[p].second << ',';
          bool first = true;
          for (const std::int32_t tok : mp.caption) {
            if (tok == Vocab::kPadId) continue;
            if (!first) os << ' ';
            os << tok;
            first = false;
          }
          os << "\n";
        }
      }
      {
        std::ofstream os(dir / artifact::kGateFile);
        os << "gate_mean_similarity=" << fmt(outcome.gate_mean_similarity)
           << "\ngate_threshold=" << fmt(dcfg.poison_gate)
           << "\ngate_refused=" << (outcome.gate_refused ? 1 : 0) << "\n";
      }
      outcome.overfit_model.save(dir / artifact::kOverfitCkpt);
      outcome.model.save(dir / artifact::kDefendedCkpt);
      write_loss_report(dir / "loss_overfit.csv", "overfit",
                        outcome.overfit_report);
      write_loss_report(dir / "loss_unlearn.csv", "unlearn",
                        outcome.unlearn_report);
      manifest.record(dir, artifact::kPartitionCsv);
      manifest.record(dir, artifact::kTopkCsv);
      manifest.record(dir, artifact::kUnlearnSetCsv);
      manifest.record(dir, artifact::kGateFile);
      manifest.record(dir, artifact::kOverfitCkpt);
      manifest.record(dir, artifact::kDefendedCkpt);
      manifest.record(dir, "loss_overfit.csv");
      manifest.record(dir, "loss_unlearn.csv");
      if (outcome.gate_refused) {
        std::cout << "poison gate refused unlearning (mean similarity "
                  << fmt(outcome.gate_mean_similarity) << " < "
                  << fmt(dcfg.poison_gate) << "); model unchanged\n";
        code = exit_code::kGateRefused;
      }
      break;
    }
    case DefenseMethod::kAbl: {
      const DualEncoderModel reference = DualEncoderModel::load(
          require_artifact(cfg, artifact::kPretrainCkpt));
      const DefenseConfig dcfg = make_defense_config(cfg, ds.size());
      const PartitionResult partition =
          partition_suspicious(reference, ds, dcfg.s_susp);
      LossReport report;
      const DualEncoderModel defended =
          abl_defend(poisoned, ds, partition, cfg.abl, &report);
      defended.save(dir / artifact::kDefendedCkpt);
      write_loss_report(dir / "loss_abl.csv", "abl", report);
      manifest.record(dir, artifact::kDefendedCkpt);
      manifest.record(dir, "loss_abl.csv");
      break;
    }
    case DefenseMethod::kCleanFinetune: {
      const Dataset heldout = make_heldout_dataset(cfg);
      LossReport report;
      const DualEncoderModel defended =
          clean_finetune_defend(poisoned, heldout, cfg.cleanft, &report);
      defended.save(dir / artifact::kDefendedCkpt);
      write_loss_report(dir / "loss_cleanft.csv", "cleanft", report);
      manifest.record(dir, artifact::kDefendedCkpt);
      manifest.record(dir, "loss_cleanft.csv");
      break;
    }
  }
  close_manifest(cfg, manifest);
  if (code == exit_code::kOk) {
    std::cout << "defense method " << defense_method_name(cfg.defense.method)
              << " wrote " << (dir / artifact::kDefendedCkpt).string() << "\n";
  }
  return code;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint) {
  RunManifest manifest = open_manifest(cfg);
  const fs::path dir = run_dir(cfg);
  const fs::path ckpt_path = dir / checkpoint;
  if (!fs::exists(ckpt_path)) {
    throw MissingArtifactError("missing checkpoint: " + ckpt_path.string());
  }
  const DualEncoderModel model = DualEncoderModel::load(ckpt_path);
  const Dataset poisoned_ds =
      load_dataset(require_artifact(cfg, artifact::kPoisonedDataset));
  const Dataset eval_set = make_eval_dataset(cfg);
  const ClassPrompts prompts = build_class_prompts(eval_set);
  const TriggerSpec spec = make_trigger_spec(cfg, poisoned_ds);

  MetricsRecord rec;
  rec.stage = fs::path(checkpoint).stem().string();
  rec.seed = cfg.data.seed;
  rec.timestamp = now_seconds();
  rec.ca = clean_accuracy(model, eval_set, prompts);
  const Dataset asr_set = filter_non_target(eval_set, spec.target_class);
  rec.asr = attack_success_rate(model, asr_set, spec, prompts);
  const fs::path retrain_path = dir / artifact::kRetrainCkpt;
  if (fs::exists(retrain_path) && rec.stage != "retrain") {
    const DualEncoderModel retrain = DualEncoderModel::load(retrain_path);
    rec.kl_to_retrain = model_kl(model, retrain, eval_set, prompts);
  }
  append_metrics(dir, rec);

  std::vector<std::size_t> indices(poisoned_ds.size());
  std::vector<bool> mask(poisoned_ds.size());
  for (std::size_t i = 0; i < poisoned_ds.size(); ++i) {
    indices[i] = i;
    mask[i] = poisoned_ds.samples[i].poisoned;
  }
  const HistogramExport hist =
      similarity_histogram(model, poisoned_ds, indices, mask, cfg.eval.bins);
  const std::string hist_name = "hist_" + rec.stage + ".csv";
  write_histogram(dir / hist_name, hist);
  manifest.record(dir, hist_name);
  close_manifest(cfg, manifest);

  std::cout << rec.stage << ": ca=" << fmt(rec.ca) << " asr=" << fmt(rec.asr);
  if (rec.kl_to_retrain.has_value()) {
    std::cout << " kl_to_retrain=" << fmt(*rec.kl_to_retrain);
  }
  std::cout << "\n";
  return exit_code::kOk;
}

int cmd_bound(const PacInputs& inputs, std::optional<std::size_t> n) {
  const double n0 = pac_min_samples(inputs);
  std::cout << "N0 = " << fmt(n0) << "\n";
  if (n.has_value()) {
    std::cout << "bound_rhs(n=" << *n
              << ") = " << fmt(pac_bound_rhs(inputs.kl_q, *n, inputs.delta))
              << "\n";
  }
  return exit_code::kOk;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::string& axis,
              const std::vector<std::uint64_t>& values) {
  if (values.empty()) {
    throw InvalidConfigError("sweep: values must be non-empty");
  }
  if (axis != "poison_count" && axis != "dataset_size") {
    throw InvalidConfigError("sweep: axis must be poison_count or dataset_size");
  }
  const fs::path base = run_dir(cfg);
  fs::create_directories(base);

  struct Row {
    std::uint64_t value;
    double ca_before, asr_before, ca_after, asr_after;
    bool gate_refused;
  };
  std::vector<Row> rows;

  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint64_t value = values[i];
    ExperimentConfig point = cfg;
    point.shift_seeds((i + 1) * seed_offset::kSweepPoint);
    if (axis == "poison_count") {
      point.attack.poison_count = value;
    } else {
      const auto per_class = static_cast<std::size_t>(
          value / static_cast<std::uint64_t>(point.data.class_count));
      point.data.per_class = per_class < 1 ? 1 : per_class;
    }
    point.out_dir =
        (base / ("sweep_" + axis) / ("point_" + std::to_string(value)))
            .string();

    try {
      cmd_generate(point);
      cmd_train(point, "pretrain");
      cmd_train(point, "poison");
      const int defend_code = cmd_defend(point);

      const Dataset poisoned_ds = load_dataset(
          fs::path(point.out_dir) / artifact::kPoisonedDataset);
      const DualEncoderModel before = DualEncoderModel::load(
          fs::path(point.out_dir) / artifact::kPoisonedCkpt);
      const DualEncoderModel after = DualEncoderModel::load(
          fs::path(point.out_dir) / artifact::kDefendedCkpt);
      const Dataset eval_set = make_eval_dataset(point);
      const ClassPrompts prompts = build_class_prompts(eval_set);
      const TriggerSpec spec = make_trigger_spec(point, poisoned_ds);
      const Dataset asr_set = filter_non_target(eval_set, spec.target_class);

      Row row;
      row.value = value;
      row.ca_before = clean_accuracy(before, eval_set, prompts);
      row.asr_before = attack_success_rate(before, asr_set, spec, prompts);
      row.ca_after = clean_accuracy(after, eval_set, prompts);
      row.asr_after = attack_success_rate(after, asr_set, spec, prompts);
      row.gate_refused = defend_code == exit_code::kGateRefused;
      rows.push_back(row);
    } catch (const Error& e) {
      std::cerr << "sweep aborted at point " << axis << "=" << value << ": "
                << e.what() << "\n";
      throw;
    }
  }

  const fs::path csv = base / ("sweep_" + axis + ".csv");
  std::ofstream os(csv);
  if (!os) throw IoError("cannot write " + csv.string());
  os << "axis,value,ca_no_defense,asr_no_defense,ca_defended,asr_defended,"
        "gate_refused\n";
  for (const Row& r : rows) {
    os << axis << ',' << r.value << ',' << fmt(r.ca_before) << ','
       << fmt(r.asr_before) << ',' << fmt(r.ca_after) << ','
       << fmt(r.asr_after) << ',' << (r.gate_refused ? 1 : 0) << "\n";
  }
  std::cout << "sweep over " << axis << " wrote " << csv.string() << "\n";
  return exit_code::kOk;
}

}  // namespace ubt
