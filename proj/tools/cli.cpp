#include "cli.hpp"

#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "evoqf/checkpoint.hpp"
#include "evoqf/dataset_io.hpp"
#include "evoqf/hash.hpp"
#include "evoqf/log.hpp"
#include "evoqf/model_check.hpp"
#include "evoqf/rng.hpp"
#include "run_config.hpp"

namespace evoqf::cli {

namespace fs = std::filesystem;

int exit_code(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::BadArgs:
      return 2;
    case ErrorCode::ConfigInvalid:
    case ErrorCode::BadConfig:
    case ErrorCode::UnknownKind:
    case ErrorCode::DuplicateModality:
    case ErrorCode::UnknownModality:
    case ErrorCode::DuplicateAdapter:
    case ErrorCode::RankTooLarge:
    case ErrorCode::UnknownAdapter:
    case ErrorCode::UnsupportedArity:
    case ErrorCode::LineageMismatch:
      return 3;
    case ErrorCode::DataError:
    case ErrorCode::CorruptFile:
    case ErrorCode::VersionMismatch:
    case ErrorCode::BadManifest:
    case ErrorCode::MissingModalityInCohort:
    case ErrorCode::IoError:
    case ErrorCode::EmptyInput:
    case ErrorCode::EmptyFeatures:
    case ErrorCode::LengthMismatch:
    case ErrorCode::NonPositiveTime:
    case ErrorCode::NoPermissiblePairs:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::WrongModalityCount:
      return 4;
    case ErrorCode::NumericalFailure:
    case ErrorCode::NonFiniteOutput:
    case ErrorCode::NonFiniteInput:
    case ErrorCode::NotScalarLoss:
    case ErrorCode::DetachedLoss:
      return 5;
  }
  return 1;
}

std::string_view error_category(ErrorCode code) noexcept {
  switch (exit_code(code)) {
    case 2: return "BadArgs";
    case 3: return "ConfigInvalid";
    case 4: return "DataError";
    case 5: return "NumericalFailure";
  }
  return "Internal";
}

namespace {

struct Context {
  RunConfig config;
  fs::path out_dir;
  std::optional<fs::path> cohort;
  std::optional<fs::path> checkpoint;
  unsigned jobs = 1;
  bool timing = false;
  std::ostream* out = nullptr;
};

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path.string());
  Fnv1a64 h;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto n = static_cast<std::size_t>(in.gcount());
    h.update(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(buf.data()), n));
  }
  return h.hex();
}

fs::path cohort_path(const Context& ctx) {
  if (ctx.cohort) return *ctx.cohort;
  if (ctx.config.cohort) return *ctx.config.cohort;
  return ctx.out_dir / "cohort.jsonl";
}

fs::path checkpoint_path(const Context& ctx) {
  return ctx.checkpoint ? *ctx.checkpoint : ctx.out_dir / ctx.config.checkpoint_name;
}

Json report_header(const Context& ctx, std::string_view command) {
  return {{"command", command},
          {"seed", ctx.config.seed},
          {"config_hash", ctx.config.hash()},
          {"concordance_variant", kConcordanceVariant},
          {"rng_algorithm", kRngAlgorithm}};
}

void write_report(const Context& ctx, std::string_view command, Json report) {
  fs::create_directories(ctx.out_dir);
  const fs::path path = ctx.out_dir / ("report-" + std::string(command) + ".json");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::IoError, "cannot write " + path.string());
  f << report.dump(2) << '\n';
  if (!f) fail(ErrorCode::IoError, "failed while writing " + path.string());
  *ctx.out << Json{{"command", command}, {"report", path.string()}}.dump() << '\n';
}

Json epochs_json(const TrainResult& r) {
  Json epochs = Json::array();
  for (const auto& e : r.epochs) {
    Json row = {{"epoch", e.epoch}, {"loss", e.loss}};
    if (e.val_cindex) row["val_cindex"] = *e.val_cindex;
    epochs.push_back(row);
  }
  Json j = {{"epochs", epochs}, {"best_epoch", r.best_epoch}};
  if (r.best_val_cindex) j["best_val_cindex"] = *r.best_val_cindex;
  return j;
}

Json split_cindex(const SurvivalModel& model, const Cohort& cohort, const std::vector<std::string>& modalities) {
  Json out = Json::object();
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    if (cohort.split(s).size() < 2) continue;
    out[std::string(to_string(s))] = evaluate_cindex(model, labeled_batch(cohort, s, modalities));
  }
  return out;
}

void require_modalities(const Cohort& cohort, const std::vector<std::string>& names) {
  for (const auto& m : names) {
    if (!cohort.manifest.has_modality(m)) {
      fail(ErrorCode::MissingModalityInCohort, "cohort does not provide modality '" + m + "'");
    }
  }
}

Json ni_json(const NonInterferenceReport& r) {
  return {{"probes", r.probes},
          {"max_abs_diff", r.max_abs_diff},
          {"bit_identical", r.bit_identical},
          {"cindex_before", r.cindex_before},
          {"cindex_after", r.cindex_after},
          {"cindex_delta", r.cindex_delta()}};
}

// ---- subcommands ---------------------------------------------------------

Json cmd_gen_data(const Context& ctx) {
  if (!ctx.config.manifest) fail(ErrorCode::ConfigInvalid, "gen-data needs a 'data.manifest' section");
  const Cohort cohort = generate_cohort(*ctx.config.manifest);
  const fs::path path = cohort_path(ctx);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_cohort(path, cohort);
  Json report = report_header(ctx, "gen-data");
  report["manifest"] = to_json(cohort.manifest);
  report["cohort_hash"] = file_hash(path);
  Json counts = Json::object();
  for (Split s : {Split::Train, Split::Val, Split::Test}) counts[std::string(to_string(s))] = cohort.split(s).size();
  report["split_sizes"] = counts;
  return report;
}

Json cmd_train(const Context& ctx) {
  const fs::path path = cohort_path(ctx);
  const Cohort cohort = load_cohort(path);
  const auto names = ctx.config.model_modalities();
  require_modalities(cohort, names);
  SurvivalModel model = build_model(ctx.config.model, ctx.config.seed);
  const LabeledBatch train = labeled_batch(cohort, Split::Train, names);
  const LabeledBatch val = labeled_batch(cohort, Split::Val, names);
  const TrainResult result = train_model(model, train, &val, ctx.config.train);

  fs::create_directories(ctx.out_dir);
  save_checkpoint(checkpoint_path(ctx), model);
  Json report = report_header(ctx, "train");
  report["cohort_hash"] = file_hash(path);
  report["fusion"] = std::string(to_string(model.config.fusion));
  report["parameter_count"] = model.parameter_count();
  report["parameter_hash"] = model.parameter_hash();
  report["training"] = epochs_json(result);
  report["cindex"] = split_cindex(model, cohort, names);
  report["checkpoint_hash"] = file_hash(checkpoint_path(ctx));
  return report;
}

Json cmd_eval(const Context& ctx) {
  const fs::path path = cohort_path(ctx);
  const Cohort cohort = load_cohort(path);
  const SurvivalModel model = load_checkpoint(checkpoint_path(ctx));
  const auto names = model.modality_names();
  require_modalities(cohort, names);
  Json report = report_header(ctx, "eval");
  report["cohort_hash"] = file_hash(path);
  report["checkpoint_hash"] = file_hash(checkpoint_path(ctx));
  report["parameter_hash"] = model.parameter_hash();
  report["modalities"] = names;
  report["cindex"] = split_cindex(model, cohort, names);
  return report;
}

std::vector<StagePlan> stage_plans(const RunConfig& cfg) {
  if (cfg.stages.size() < 2) fail(ErrorCode::ConfigInvalid, "continual needs at least two entries in training.stages");
  std::vector<StagePlan> plans;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const auto& st = cfg.stages[i];
    StagePlan p;
    if (i == 0) {
      p = default_first_stage(st.modalities, st.train, cfg.seed);
    } else {
      std::vector<std::string> added;
      for (const auto& m : st.modalities) {
        if (std::find(plans.back().modalities.begin(), plans.back().modalities.end(), m) == plans.back().modalities.end()) {
          added.push_back(m);
        }
      }
      p = default_next_stage(plans.back(), added, st.train, cfg.seed);
      p.modalities = st.modalities;
    }
    if (st.trainable) p.trainable = *st.trainable;
    plans.push_back(std::move(p));
  }
  try {
    validate_stage_plans(plans);
  } catch (const Error& e) {
    fail(ErrorCode::ConfigInvalid, e.what());
  }
  return plans;
}

Json stage_json(const StageReport& r) {
  Json j = {{"stage", r.stage},
            {"modalities", r.modalities},
            {"trainable_scalars", r.trainable_scalars},
            {"training", epochs_json(r.training)},
            {"val_cindex", r.val_cindex},
            {"base_hash_before", r.base_hash_before},
            {"base_hash_after", r.base_hash_after},
            {"base_unchanged", r.base_hash_before == r.base_hash_after},
            {"frozen_unchanged", r.frozen_hash_before == r.frozen_hash_after}};
  if (r.test_cindex) j["test_cindex"] = *r.test_cindex;
  return j;
}

Json cmd_continual(const Context& ctx) {
  const RunConfig& cfg = ctx.config;
  const auto plans = stage_plans(cfg);
  const fs::path path = cohort_path(ctx);
  const Cohort cohort = load_cohort(path);
  require_modalities(cohort, plans.back().modalities);

  ModelConfig first = cfg.model;
  first.modalities.clear();
  for (const auto& m : cfg.model.modalities) {
    if (std::find(plans[0].modalities.begin(), plans[0].modalities.end(), m.name) != plans[0].modalities.end()) {
      first.modalities.push_back(m);
    }
  }
  SurvivalModel model = build_model(first, cfg.seed);

  Json stages = Json::array();
  Json checks = Json::array();
  for (const auto& plan : plans) {
    if (plan.stage > 1) {
      const SurvivalModel before = model;
      const auto old = model.modality_names();
      for (const auto& m : plan.modalities) {
        if (model.qformer.has_modality(m)) continue;
        std::size_t dim = 0;
        for (const auto& spec : cfg.model.modalities) {
          if (spec.name == m) dim = spec.native_dim;
        }
        add_modality(model, m, dim, cfg.model.lora.rank, cfg.seed);
      }
      const LabeledBatch probes = labeled_batch(cohort, Split::Val, old);
      const auto at_insertion = non_interference_check(before, model, probes);
      const StageReport report = train_stage(model, plan, cohort);
      const auto after_training = non_interference_check(before, model, probes);
      stages.push_back(stage_json(report));
      checks.push_back({{"stage", plan.stage},
                        {"old_modalities", old},
                        {"at_insertion", ni_json(at_insertion)},
                        {"after_training", ni_json(after_training)}});
    } else {
      stages.push_back(stage_json(train_stage(model, plan, cohort)));
    }
  }

  fs::create_directories(ctx.out_dir);
  save_checkpoint(checkpoint_path(ctx), model);
  Json report = report_header(ctx, "continual");
  report["cohort_hash"] = file_hash(path);
  report["head_mode"] = std::string(to_string(cfg.model.head_mode));
  report["stages"] = stages;
  report["non_interference"] = checks;
  report["checkpoint_hash"] = file_hash(checkpoint_path(ctx));
  return report;
}

struct CompareTask {
  std::string row;
  ModelConfig model;
  std::size_t column = 0;
};

Json cmd_compare(const Context& ctx) {
  const RunConfig& cfg = ctx.config;
  std::vector<fs::path> paths = cfg.compare.cohorts;
  if (paths.empty()) paths.push_back(cohort_path(ctx));
  std::vector<Cohort> cohorts;
  for (const auto& p : paths) {
    cohorts.push_back(load_cohort(p));
    require_modalities(cohorts.back(), cfg.model_modalities());
  }

  std::vector<std::string> rows;
  std::vector<ModelConfig> row_models;
  for (FusionKind k : cfg.compare.methods) {
    ModelConfig mc = cfg.model;
    mc.fusion = k;
    rows.emplace_back(to_string(k));
    row_models.push_back(mc);
  }
  if (cfg.compare.single_modality) {
    for (const auto& spec : cfg.model.modalities) {
      ModelConfig mc = cfg.model;
      mc.fusion = FusionKind::Smqf;
      mc.modalities = {spec};
      mc.primary = spec.name;
      rows.push_back("single:" + spec.name);
      row_models.push_back(mc);
    }
  }
  std::vector<CompareTask> tasks;
  for (std::size_t c = 0; c < cohorts.size(); ++c) {
    for (std::size_t r = 0; r < rows.size(); ++r) tasks.push_back({rows[r], row_models[r], c});
  }

  struct Outcome {
    double val = 0.0;
    double test = 0.0;
    std::size_t best_epoch = 0;
  };
  std::vector<Outcome> outcomes(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        const auto& t = tasks[i];
        const Cohort& cohort = cohorts[t.column];
        std::vector<std::string> names;
        for (const auto& m : t.model.modalities) names.push_back(m.name);
        SurvivalModel model = build_model(t.model, cfg.seed);
        const LabeledBatch train = labeled_batch(cohort, Split::Train, names);
        const LabeledBatch val = labeled_batch(cohort, Split::Val, names);
        const TrainResult r = train_model(model, train, &val, cfg.train);
        outcomes[i].val = evaluate_cindex(model, val);
        outcomes[i].test = evaluate_cindex(model, labeled_batch(cohort, Split::Test, names));
        outcomes[i].best_epoch = r.best_epoch;
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(ctx.jobs, static_cast<unsigned>(tasks.size())));
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  Json columns = Json::array();
  for (std::size_t c = 0; c < cohorts.size(); ++c) {
    columns.push_back({{"name", "cohort_" + std::to_string(c + 1)}, {"cohort_hash", file_hash(paths[c])}});
  }
  Json table = Json::array();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::vector<double> test;
    std::vector<double> val;
    std::vector<std::size_t> best;
    for (std::size_t c = 0; c < cohorts.size(); ++c) {
      const Outcome& o = outcomes[c * rows.size() + r];
      test.push_back(o.test);
      val.push_back(o.val);
      best.push_back(o.best_epoch);
    }
    table.push_back({{"method", rows[r]},
                     {"test_cindex", test},
                     {"val_cindex", val},
                     {"best_epoch", best},
                     {"mean", aggregate_mean(test)}});
  }
  Json report = report_header(ctx, "compare");
  report["columns"] = columns;
  report["metric"] = "test_cindex";
  report["rows"] = table;
  return report;
}

Json cmd_gradcheck(const Context& ctx, bool have_config) {
  const std::uint64_t seed = have_config ? ctx.config.seed : 0;
  Json rows = Json::array();
  bool ok = true;
  for (FusionKind k : all_fusion_kinds()) {
    const GradCheckReport r = model_gradcheck(tiny_model_config(k), seed);
    ok = ok && r.passed();
    rows.push_back({{"fusion", std::string(to_string(k))},
                    {"entries", r.entries.size()},
                    {"max_rel_error", r.max_rel_error},
                    {"failures", r.failures},
                    {"tolerance", r.tolerance},
                    {"passed", r.passed()}});
  }
  Json report = have_config ? report_header(ctx, "gradcheck") : Json{{"command", "gradcheck"}, {"seed", seed}};
  report["checks"] = rows;
  report["passed"] = ok;
  if (!ok) {
    write_report(ctx, "gradcheck", report);
    fail(ErrorCode::NumericalFailure, "gradient check failed; see report-gradcheck.json");
  }
  return report;
}

void print_error(std::ostream& err, ErrorCode code, const std::string& message) {
  err << Json{{"error",
               {{"code", std::string(to_string(code))},
                {"category", std::string(error_category(code))},
                {"exit_code", exit_code(code)},
                {"message", message}}}}
             .dump()
      << '\n';
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal query-transformer survival models on synthetic cohorts.", "evoqf"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string cohort;
  std::string checkpoint;
  unsigned jobs = 1;
  bool timing = false;
  bool verbose = false;
  app.add_option("--config", config_path, "Run config (JSON)")->envname("EVOQF_CONFIG");
  app.add_option("--seed", seed, "Override the config seed");
  app.add_option("--out", out_dir, "Output directory (default: output.dir or .)");
  app.add_option("--cohort", cohort, "Cohort file (default: data.cohort or <out>/cohort.jsonl)");
  app.add_option("--checkpoint", checkpoint, "Checkpoint file (default: <out>/checkpoint.json)");
  app.add_option("--jobs", jobs, "Worker threads for compare")->check(CLI::Range(1u, 256u));
  app.add_flag("--timing", timing, "Add wall-clock seconds to the report");
  app.add_flag("-v,--verbose", verbose, "Log per-epoch progress to stderr");

  const std::vector<std::pair<const char*, const char*>> commands = {
      {"gen-data", "Generate a synthetic cohort from data.manifest"},
      {"train", "Train the configured model and write a checkpoint"},
      {"eval", "Evaluate a checkpoint on every split of a cohort"},
      {"continual", "Run the staged modality-addition protocol"},
      {"compare", "Train every configured fusion method on the same split"},
      {"gradcheck", "Finite-difference check of the full model"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    print_error(err, ErrorCode::BadArgs, e.what());
    return 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    set_log_level(verbose ? LogLevel::Info : LogLevel::Warn);
    const auto start = std::chrono::steady_clock::now();
    Context ctx;
    ctx.out = &out;
    ctx.jobs = jobs;
    ctx.timing = timing;
    const bool have_config = !config_path.empty();
    if (have_config) {
      ctx.config = load_run_config(config_path);
    } else if (command != "gradcheck") {
      fail(ErrorCode::BadArgs, "--config is required (or set EVOQF_CONFIG)");
    }
    if (seed) override_seed(ctx.config, *seed);
    ctx.out_dir = out_dir.empty() ? ctx.config.out_dir : fs::path(out_dir);
    if (!cohort.empty()) ctx.cohort = cohort;
    if (!checkpoint.empty()) ctx.checkpoint = checkpoint;

    Json report;
    if (command == "gen-data") report = cmd_gen_data(ctx);
    else if (command == "train") report = cmd_train(ctx);
    else if (command == "eval") report = cmd_eval(ctx);
    else if (command == "continual") report = cmd_continual(ctx);
    else if (command == "compare") report = cmd_compare(ctx);
    else report = cmd_gradcheck(ctx, have_config);

    if (timing) {
      report["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    write_report(ctx, command, std::move(report));
    return 0;
  } catch (const Error& e) {
    print_error(err, e.code(), e.what());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << Json{{"error", {{"code", "Internal"}, {"category", "Internal"}, {"exit_code", 1}, {"message", e.what()}}}}.dump()
        << '\n';
    return 1;
  }
}

}  // namespace evoqf::cli
