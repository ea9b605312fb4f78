#include "cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>

#include "advit/attacks.hpp"
#include "advit/checkpoint.hpp"
#include "advit/data.hpp"
#include "advit/errors.hpp"
#include "advit/ops.hpp"
#include "advit/run_config.hpp"
#include "advit/trainer.hpp"
#include "advit/verify.hpp"
#include "advit/warmup.hpp"

namespace advit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Verification found a mismatch; carries the message to print.
class VerificationFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f || !(f << text) || !f.flush()) {
    throw fs::filesystem_error("cannot write", path, std::make_error_code(std::errc::io_error));
  }
}

std::string format_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t fallback) {
  if (flag) {
    return *flag;
  }
  if (auto env = config::seed_from_env()) {
    return *env;
  }
  return fallback;
}

// The dataset must have the model's image shape and only known labels.
void check_fits(const data::Dataset& d, const vit::ViTConfig& model, const std::string& what) {
  if (d.image_shape() != model.image_shape()) {
    throw config::ConfigError(what + " images are " + shape_str(d.image_shape()) + " but the model expects " +
                              shape_str(model.image_shape()));
  }
  if (d.classes > model.num_classes) {
    throw config::ConfigError(what + " has " + std::to_string(d.classes) + " classes but the model has " +
                              std::to_string(model.num_classes));
  }
}

json report_json(const attacks::EvalReport& report, std::uint64_t seed, std::size_t examples) {
  json attack_list = json::array();
  json robust = json::object();
  for (const auto& a : report.attacks) {
    json cfg = config::to_json(a.attack.config);
    cfg["name"] = a.attack.name;
    attack_list.push_back(cfg);
    robust[a.attack.name] = a.robust_acc;
  }
  return {{"clean_acc", report.clean_acc},
          {"robust_acc", robust},
          {"seed", seed},
          {"examples", examples},
          {"attacks", attack_list}};
}

json metrics_json(const train::EpochMetrics& m, double grad_norm_max, double post_clip_max) {
  return {{"epoch", m.epoch},
          {"train_loss", m.train_loss},
          {"train_robust_acc", m.train_robust_acc},
          {"lr", m.lr},
          {"p", m.p},
          {"grad_norm_mean", m.grad_norm_mean},
          {"grad_norm_max", grad_norm_max},
          {"post_clip_norm_max", post_clip_max},
          {"wall_ms", m.wall_ms}};
}

std::vector<attacks::NamedAttack> parse_attack_list(const std::string& list, double epsilon) {
  std::vector<attacks::NamedAttack> out;
  std::stringstream ss(list);
  std::string name;
  while (std::getline(ss, name, ',')) {
    if (name.empty() || name == "none") {
      continue;
    }
    try {
      out.push_back(attacks::parse_attack(name, epsilon));
    } catch (const ValidationError& e) {
      throw config::ConfigError(std::string("--attacks: ") + e.what());
    }
  }
  return out;
}

struct TrainArgs {
  std::string config;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& args, std::ostream& out) {
  auto cfg = config::load_run_config(args.config);
  cfg.train.seed = resolve_seed(args.seed, cfg.train.seed);
  if (args.out_dir) {
    cfg.output_dir = *args.out_dir;
  }
  if (!cfg.train_data) {
    throw config::ConfigError(args.config + ": data.train is required for training");
  }
  const auto train_set = config::materialize(*cfg.train_data, data::Split::train);
  check_fits(train_set, cfg.model, "training set");
  std::optional<data::Dataset> test_set;
  if (cfg.test_data) {
    test_set = config::materialize(*cfg.test_data, data::Split::test);
    check_fits(*test_set, cfg.model, "test set");
  }

  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  write_text(dir / "config.json", config::to_json(cfg).dump(2) + "\n");
  std::ofstream metrics(dir / "metrics.jsonl", std::ios::trunc);
  if (!metrics) {
    throw fs::filesystem_error("cannot write", dir / "metrics.jsonl", std::make_error_code(std::errc::io_error));
  }

  auto state = train::initial_state(cfg.model, cfg.train);
  double grad_norm_max = 0.0;
  double post_clip_max = 0.0;
  double best_acc = -1.0;
  train::TrainHooks hooks;
  hooks.on_step = [&](const train::StepRecord& s) {
    grad_norm_max = std::max(grad_norm_max, s.pre_clip_norm);
    post_clip_max = std::max(post_clip_max, s.post_clip_norm);
  };
  hooks.on_epoch = [&](const train::EpochMetrics& m, const train::TrainState& st) {
    metrics << metrics_json(m, grad_norm_max, post_clip_max).dump() << "\n" << std::flush;
    out << "epoch " << m.epoch << "  loss " << m.train_loss << "  robust_acc " << m.train_robust_acc << "  lr "
        << m.lr << "  p " << m.p << "  |g| " << m.grad_norm_mean << "\n";
    if (m.train_robust_acc > best_acc) {
      best_acc = m.train_robust_acc;
      checkpoint::save(dir / "best.avck", st);
    }
    grad_norm_max = 0.0;
    post_clip_max = 0.0;
  };

  try {
    state = train::train(cfg.train, train_set, std::move(state), hooks);
  } catch (const train::TrainingAborted& e) {
    metrics << json{{"error", e.what()}, {"epoch", e.epoch()}, {"batch", e.batch()}}.dump() << "\n" << std::flush;
    throw;
  }
  checkpoint::save(dir / "final.avck", state);
  if (best_acc < 0) {
    checkpoint::save(dir / "best.avck", state);
  }

  if (test_set && !cfg.eval.attacks.empty()) {
    const attacks::VitClassifier model(state.params);
    const auto report = attacks::robust_eval(model, *test_set, cfg.eval.attacks, Rng(cfg.train.seed),
                                             cfg.eval.batch_size);
    const auto j = report_json(report, cfg.train.seed, test_set->size());
    write_text(dir / "eval.json", j.dump(2) + "\n");
    out << "eval " << j.dump() << "\n";
  }
  out << "wrote " << dir.string() << "\n";
  return kOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string attacks = "pgd20";
  double epsilon = 8.0 / 255.0;
  std::size_t batch_size = 64;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_path;
};

int cmd_eval(const EvalArgs& args, std::ostream& out) {
  const auto list = parse_attack_list(args.attacks, args.epsilon);
  const auto seed = resolve_seed(args.seed, 0);
  const auto state = checkpoint::load(args.checkpoint);
  const auto dataset = data::load_dataset(args.dataset, data::Split::test);
  check_fits(dataset, state.params.config, "dataset " + args.dataset);
  const attacks::VitClassifier model(state.params);
  const auto report = attacks::robust_eval(model, dataset, list, Rng(seed), args.batch_size);
  const std::string text = report_json(report, seed, dataset.size()).dump(2) + "\n";
  if (args.out_path) {
    write_text(*args.out_path, text);
  }
  out << text;
  return kOk;
}

struct GradcheckArgs {
  std::string config;
  std::size_t max_coords = 0;
  std::optional<std::uint64_t> seed;
  double fault_scale = 1.0;
};

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out) {
  const auto cfg = config::load_run_config(args.config);
  const std::size_t params = vit::parameter_count(cfg.model);
  if (params > kGradcheckParamCap) {
    throw config::ConfigError("model has " + std::to_string(params) + " parameters; gradcheck is limited to " +
                              std::to_string(kGradcheckParamCap));
  }
  verify::GradcheckSettings settings;
  settings.max_coords = args.max_coords;
  settings.seed = resolve_seed(args.seed, cfg.train.seed);
  settings.gated_block = std::min<std::size_t>(1, cfg.model.depth - 1);

  struct RestoreGelu {
    ~RestoreGelu() { testing::set_gelu_backward_scale(1.0); }
  } restore;
  testing::set_gelu_backward_scale(args.fault_scale);
  const auto report = verify::run_model_gradcheck(cfg.model, settings);

  out << "gradcheck: " << params << " parameters, float64, h = " << settings.h << "\n";
  for (const auto& c : report.checks) {
    char line[160];
    if (c.structurally_zero) {
      std::snprintf(line, sizeof line, "  %-28s max_abs_grad  %.3e  coords %zu  (structurally zero)\n",
                    c.name.c_str(), c.max_abs_gradient, c.checked);
    } else {
      std::snprintf(line, sizeof line, "  %-28s max_rel_error %.3e  coords %zu\n", c.name.c_str(), c.max_rel_error,
                    c.checked);
    }
    out << line;
  }
  out << "  ARD oracle (block " << settings.gated_block << " gate = 0) max_abs_diff " << report.ard_oracle_max_abs_diff
      << "\n";
  out << "  worst: " << report.worst_name << " " << report.worst_error << "\n";
  if (!report.passed(settings.threshold)) {
    std::ostringstream msg;
    msg << "gradcheck failed: worst tensor " << report.worst_name << " has relative error " << report.worst_error
        << " (threshold " << settings.threshold << "), ARD oracle diff " << report.ard_oracle_max_abs_diff;
    throw VerificationFailed(msg.str());
  }
  out << "PASS\n";
  return kOk;
}

int cmd_gen_data(const std::string& spec_path, const std::string& out_path, std::ostream& out) {
  const auto spec = config::synthetic_from_json(config::read_json_file(spec_path), spec_path);
  const auto d = data::generate_synthetic(spec);
  data::save_dataset(out_path, d);
  out << "wrote " << d.size() << " examples (" << d.classes << " classes, " << shape_str(d.image_shape()) << ") to "
      << out_path << "\n";
  return kOk;
}

struct ScheduleArgs {
  std::string config;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batches_per_epoch;
  std::optional<std::size_t> warmup_epochs;
};

int cmd_schedule_dump(const ScheduleArgs& args, std::ostream& out) {
  const auto cfg = config::load_run_config(args.config);
  warmup::Schedule s;
  s.mode = cfg.train.warmup_mode;
  s.warmup_epochs = args.warmup_epochs.value_or(cfg.train.warmup_epochs);
  if (args.batches_per_epoch) {
    s.batches_per_epoch = *args.batches_per_epoch;
  } else {
    if (!cfg.train_data) {
      throw config::ConfigError(args.config + ": give --batches-per-epoch or a data.train source");
    }
    const auto d = config::materialize(*cfg.train_data, data::Split::train);
    s.batches_per_epoch = cfg.train.batches_per_epoch(d.size());
  }
  if (s.batches_per_epoch == 0) {
    throw config::ConfigError("batches per epoch must be positive");
  }
  const std::size_t epochs = args.epochs.value_or(cfg.train.epochs);
  out << "epoch,batch,p,k\n";
  for (std::size_t t = 0; t < epochs; ++t) {
    for (std::size_t a = 0; a < s.batches_per_epoch; ++a) {
      out << t << "," << a << "," << format_g17(s.drop_prob(t, a)) << "," << format_g17(s.mask_fraction(t, a))
          << "\n";
    }
  }
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial training of miniature Vision Transformers"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Adversarially train a model from a run config");
  train->add_option("config", train_args.config, "Run config JSON")->required();
  train->add_option("--out", train_args.out_dir, "Run directory (overrides output_dir)");
  train->add_option("--seed", train_args.seed, "Seed (overrides ADVIT_SEED and the config)");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Clean and robust accuracy of a checkpoint");
  eval->add_option("checkpoint", eval_args.checkpoint, "Checkpoint (.avck)")->required();
  eval->add_option("dataset", eval_args.dataset, "Dataset (AVD1 file)")->required();
  eval->add_option("--attacks", eval_args.attacks, "Comma list of pgdN, cwN, none")->capture_default_str();
  eval->add_option("--epsilon", eval_args.epsilon, "L-infinity budget")->capture_default_str();
  eval->add_option("--batch-size", eval_args.batch_size, "Evaluation batch size")->capture_default_str();
  eval->add_option("--seed", eval_args.seed, "Seed (overrides ADVIT_SEED; default 0)");
  eval->add_option("--out", eval_args.out_path, "Also write the JSON report here");

  GradcheckArgs grad_args;
  auto* gradcheck = app.add_subcommand("gradcheck", "Float64 finite-difference check of the model in a config");
  gradcheck->add_option("config", grad_args.config, "Run config JSON")->required();
  gradcheck->add_option("--max-coords", grad_args.max_coords, "Coordinates sampled per tensor (0 = all)")
      ->capture_default_str();
  gradcheck->add_option("--seed", grad_args.seed, "Seed for weights and inputs");
  // Scales the gelu derivative so the check can be shown to catch a bad backward.
  gradcheck->add_option("--fault-gelu-scale", grad_args.fault_scale)->group("");

  std::string spec_path, data_out;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset file from a spec");
  gen->add_option("spec", spec_path, "Synthetic spec JSON")->required();
  gen->add_option("out", data_out, "Output dataset path")->required();

  ScheduleArgs sched_args;
  auto* sched = app.add_subcommand("schedule-dump", "Print the warm-up p/k trace as CSV");
  sched->add_option("config", sched_args.config, "Run config JSON")->required();
  sched->add_option("--epochs", sched_args.epochs, "Override train.epochs");
  sched->add_option("--batches-per-epoch", sched_args.batches_per_epoch, "Override R");
  sched->add_option("--warmup-epochs", sched_args.warmup_epochs, "Override train.warmup.epochs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*train) {
      return cmd_train(train_args, out);
    }
    if (*eval) {
      return cmd_eval(eval_args, out);
    }
    if (*gradcheck) {
      return cmd_gradcheck(grad_args, out);
    }
    if (*gen) {
      return cmd_gen_data(spec_path, data_out, out);
    }
    return cmd_schedule_dump(sched_args, out);
  } catch (const VerificationFailed& e) {
    err << "error: " << e.what() << "\n";
    return kVerificationFailed;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const ValidationError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ContractError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DimensionError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUnexpected;
  }
}

}  // namespace advit::cli
