// cmwm: generate synthetic data, train, evaluate, run the action-encoder
// ablation grid and serve counterfactual rollouts.
//
// Exit codes: 0 success, 1 user error (bad flags, files, config), 2 internal.

#include <algorithm>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "cmwm/checkpoint.hpp"
#include "cmwm/config.hpp"
#include "cmwm/embedding.hpp"
#include "cmwm/errors.hpp"
#include "cmwm/pipeline.hpp"
#include "cmwm/scenario.hpp"
#include "cmwm/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cmwm;

namespace {

std::size_t default_threads() {
  return std::max(1u, std::thread::hardware_concurrency());
}

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v != nullptr && *v != '\0' ? std::string(v) : fallback;
}

void print_table(std::ostream& out, const SplitEvaluation& e) {
  out << std::left << std::setw(16) << "method" << std::right << std::setw(8) << "n"
      << std::setw(12) << "MAE" << std::setw(12) << "RMSE" << '\n';
  auto row = [&](const char* name, const MetricSummary& m) {
    out << std::left << std::setw(16) << name << std::right << std::setw(8) << m.n << std::fixed
        << std::setprecision(4) << std::setw(12) << m.mae << std::setw(12) << m.rmse << '\n';
    out.unsetf(std::ios::fixed);
  };
  row("cmwm", e.model.summary);
  row("carry_forward", e.carry_forward.summary);
  row("linear_trend", e.linear_trend.summary);
}

// ---------------------------------------------------------------- gen-data

struct GenArgs {
  std::string spec;
  std::string out_dir = "data";
  std::optional<std::size_t> n_patients;
  std::optional<std::uint64_t> seed;
};

int cmd_gen_data(const GenArgs& a) {
  SyntheticSpec spec = a.spec.empty() ? SyntheticSpec{} : synthetic_spec_from_json(read_json_file(a.spec));
  if (a.n_patients) spec.n_patients = *a.n_patients;
  if (a.seed) spec.seed = *a.seed;
  spec.validate();
  const SyntheticCohort s = generate_synthetic_cohort(spec);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  save_cohort(dir / "cohort.jsonl", s.cohort);
  write_json_file(dir / "oracle.json", s.oracle.to_json(s.cohort));
  write_json_file(dir / "labels.json", s.action_labels);
  write_json_file(dir / "spec.json", to_json(spec));
  std::cout << "wrote " << s.cohort.patients.size() << " patients to " << (dir / "cohort.jsonl")
            << '\n';
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::string cohort;
  std::string out_dir;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::string action_encoder;
  std::string comm = "full";
};

RunConfig resolve_run_config(const TrainArgs& a, std::size_t threads) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  if (!a.cohort.empty()) cfg.data.cohort = a.cohort;
  if (!a.out_dir.empty()) cfg.output_dir = a.out_dir;
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.seed) {
    cfg.train.seed = *a.seed;
    cfg.model.seed = *a.seed;
  }
  if (!a.action_encoder.empty()) cfg.model.action_encoder = action_encoder_from_string(a.action_encoder);
  cfg.train.threads = threads;
  if (cfg.data.cohort.empty()) throw ValidationError("no cohort given (--cohort or data.cohort)");
  return cfg;
}

int cmd_train(const TrainArgs& a, std::size_t threads) {
  const RunConfig cfg = resolve_run_config(a, threads);
  const Cohort cohort = apply_comm_variant(load_cohort(cfg.data.cohort), comm_variant_from_string(a.comm));
  const PreparedData data = prepare_data(cohort, cfg.data);
  for (const auto& w : data.warnings) std::cerr << "warning: " << w << '\n';

  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  std::ofstream history(dir / "history.jsonl");
  const TrainOutcome out = train_model(cfg, data, [&](const EpochRecord& r) {
    history << to_json(r).dump() << '\n' << std::flush;
    std::cout << "epoch " << r.epoch << "  loss " << r.loss << "  val MAE " << r.validation.mae
              << "  RMSE " << r.validation.rmse << '\n';
  });
  save_checkpoint(dir / "checkpoint.bin", out.checkpoint);
  json resolved = out.checkpoint.run_config;
  resolved["data"]["comm_variant"] = a.comm;
  write_json_file(dir / "run_config.json", resolved);
  std::cout << "best epoch " << out.fit.best_epoch << "  val MAE " << out.fit.best_validation.mae
            << "  -> " << (dir / "checkpoint.bin") << '\n';
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string cohort;
  std::string split = "test";
  std::string protocol = "dynamic50";
  std::size_t context = 3;
  bool anchor = false;
  std::string comm;
  std::string out;
  std::string csv;
};

int cmd_eval(const EvalArgs& a, std::size_t threads) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const json& run = ckpt.run_config;
  RunConfig cfg = run.empty() ? RunConfig{} : run_config_from_json(run);
  if (!a.cohort.empty()) cfg.data.cohort = a.cohort;
  if (cfg.data.cohort.empty()) throw ValidationError("no cohort given (--cohort)");
  std::string comm = a.comm;
  if (comm.empty()) {
    const fs::path side = fs::path(a.checkpoint).parent_path() / "run_config.json";
    comm = fs::exists(side) ? read_json_file(side)["data"].value("comm_variant", "full") : "full";
  }
  const Cohort cohort = apply_comm_variant(load_cohort(cfg.data.cohort), comm_variant_from_string(comm));

  RolloutConfig rcfg = cfg.rollout;
  if (a.protocol == "fixed") {
    rcfg.protocol = Protocol::fixed;
    rcfg.fixed_context = a.context;
  } else if (a.protocol != "dynamic50") {
    throw ValidationError("--protocol must be dynamic50 or fixed");
  }
  rcfg.anchor_enabled = rcfg.anchor_enabled || a.anchor;
  rcfg.validate();

  Cohort split;
  if (a.split == "all") {
    split = cohort;
  } else {
    split = select_split(split_patients(cohort, cfg.data.split, cfg.data.split_seed), a.split);
  }
  const SplitEvaluation e = evaluate_split(ckpt, split, rcfg, threads);
  print_table(std::cout, e);
  if (!e.model.skipped.empty()) {
    std::cout << e.model.skipped.size() << " patient(s) skipped (T <= context)\n";
  }
  if (!a.out.empty()) {
    json report = to_json(e);
    report["split"] = a.split;
    report["rollout"] = to_json(rcfg);
    report["comm_variant"] = comm;
    report["checkpoint"] = {{"path", a.checkpoint},
                            {"epoch", ckpt.epoch},
                            {"validation", to_json(ckpt.validation)}};
    report["run_config"] = run;
    write_json_file(a.out, report);
  }
  if (!a.csv.empty()) {
    std::ofstream csv(a.csv);
    if (!csv) throw Error("cannot write " + a.csv);
    csv << to_csv(e.model);
  }
  return 0;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
  TrainArgs train;
  std::vector<std::string> comm{"full", "intensity", "none"};
  std::vector<std::string> encoders{"wide", "split"};
  std::string split = "test";
};

int cmd_ablate(const AblateArgs& a, std::size_t threads) {
  RunConfig base = resolve_run_config(a.train, 1);
  const Cohort cohort = load_cohort(base.data.cohort);
  struct Variant {
    std::string comm, encoder;
  };
  std::vector<Variant> variants;
  for (const auto& c : a.comm)
    for (const auto& e : a.encoders) variants.push_back({c, e});

  auto run_variant = [&](const Variant& v) {
    RunConfig cfg = base;
    cfg.model.action_encoder = action_encoder_from_string(v.encoder);
    const Cohort variant_cohort = apply_comm_variant(cohort, comm_variant_from_string(v.comm));
    const PreparedData data = prepare_data(variant_cohort, cfg.data);
    const TrainOutcome out = train_model(cfg, data);
    const fs::path dir = fs::path(base.output_dir) / (v.comm + "_" + v.encoder);
    save_checkpoint(dir / "checkpoint.bin", out.checkpoint);
    const SplitEvaluation e =
        evaluate_split(out.checkpoint, select_split(data.splits, a.split), cfg.rollout, 1);
    return json{{"comm", v.comm},
                {"encoder", v.encoder},
                {"best_epoch", out.fit.best_epoch},
                {"val_mae", out.fit.best_validation.mae},
                {"mae", e.model.summary.mae},
                {"rmse", e.model.summary.rmse},
                {"n", e.model.summary.n},
                {"carry_forward_mae", e.carry_forward.summary.mae}};
  };

  std::vector<json> rows(variants.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, variants.size()));
  for (std::size_t begin = 0; begin < variants.size(); begin += workers) {
    std::vector<std::future<json>> jobs;
    for (std::size_t i = begin; i < std::min(variants.size(), begin + workers); ++i) {
      jobs.push_back(std::async(std::launch::async, run_variant, variants[i]));
    }
    for (std::size_t k = 0; k < jobs.size(); ++k) rows[begin + k] = jobs[k].get();
  }

  std::cout << std::left << std::setw(12) << "comm" << std::setw(8) << "encoder" << std::right
            << std::setw(12) << "MAE" << std::setw(12) << "RMSE" << '\n';
  for (const auto& r : rows) {
    std::cout << std::left << std::setw(12) << r["comm"].get<std::string>() << std::setw(8)
              << r["encoder"].get<std::string>() << std::right << std::fixed
              << std::setprecision(4) << std::setw(12) << r["mae"].get<double>() << std::setw(12)
              << r["rmse"].get<double>() << '\n';
  }
  write_json_file(fs::path(base.output_dir) / "ablation.json",
                  {{"split", a.split}, {"variants", rows}, {"run_config", to_json(base)}});
  return 0;
}

// ---------------------------------------------------------------- serve

struct ServeArgs {
  std::string checkpoint;
  std::string cohort;
  std::string labels;
  std::string comm;
  std::string host = "0.0.0.0";
  int port = 0;
  std::size_t max_in_flight = 4;
};

ScenarioServer* g_server = nullptr;

int cmd_serve(ServeArgs a) {
  if (a.checkpoint.empty()) a.checkpoint = env_or("CMWM_CHECKPOINT", "");
  if (a.cohort.empty()) a.cohort = env_or("CMWM_COHORT", "");
  if (a.port == 0) a.port = std::stoi(env_or("PORT", "8080"));
  if (a.checkpoint.empty() || a.cohort.empty()) {
    throw ValidationError("serve needs --checkpoint and --cohort (or CMWM_CHECKPOINT/CMWM_COHORT)");
  }
  Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const Cohort cohort =
      apply_comm_variant(load_cohort(a.cohort), comm_variant_from_string(a.comm.empty() ? "full" : a.comm));
  const std::vector<std::string> labels =
      a.labels.empty() ? std::vector<std::string>{} : load_action_labels(a.labels);

  std::unique_ptr<EmbeddingProvider> inner = HttpEmbeddingProvider::from_env();
  if (!inner) inner = std::make_unique<HashEmbeddingProvider>(ckpt.model.config().seed);
  BoundedProvider provider(*inner, static_cast<std::ptrdiff_t>(a.max_in_flight));

  const ScenarioService service(std::move(ckpt), cohort, labels, &provider);
  ScenarioServer server(service);
  const int port = server.bind(a.host, a.port);
  g_server = &server;
  std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
  std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
  std::cout << "serving " << cohort.patients.size() << " patients on http://" << a.host << ':'
            << port << "/v1" << std::endl;
  server.listen();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Action-conditioned latent world model: data, training, evaluation, serving"};
  app.require_subcommand(1);
  std::size_t threads = default_threads();
  app.add_option("--threads", threads, "Cap on worker threads")->check(CLI::PositiveNumber);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic cohort with known dynamics");
  gen_cmd->add_option("--spec", gen.spec, "Synthetic spec JSON")->check(CLI::ExistingFile);
  gen_cmd->add_option("--out-dir", gen.out_dir, "Output directory");
  gen_cmd->add_option("--n-patients", gen.n_patients, "Override the patient count");
  gen_cmd->add_option("--seed", gen.seed, "Override the generator seed");

  TrainArgs train;
  auto add_train_options = [](CLI::App* cmd, TrainArgs& t) {
    cmd->add_option("--config", t.config, "Run config JSON")->check(CLI::ExistingFile);
    cmd->add_option("--cohort", t.cohort, "Cohort JSONL (overrides data.cohort)");
    cmd->add_option("--out-dir", t.out_dir, "Output directory (overrides output_dir)");
    cmd->add_option("--epochs", t.epochs, "Override train.epochs");
    cmd->add_option("--seed", t.seed, "Override model and training seeds");
  };
  auto* train_cmd = app.add_subcommand("train", "Train with rollout-prefix supervision");
  add_train_options(train_cmd, train);
  train_cmd->add_option("--action-encoder", train.action_encoder, "wide or split");
  train_cmd->add_option("--comm", train.comm, "Communication input: full, intensity or none");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Closed-loop evaluation against naive baselines");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--cohort", eval.cohort, "Cohort JSONL (default: the training cohort)");
  eval_cmd->add_option("--split", eval.split, "train, val, test or all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  eval_cmd->add_option("--protocol", eval.protocol, "dynamic50 or fixed")
      ->check(CLI::IsMember({"dynamic50", "fixed"}));
  eval_cmd->add_option("--context", eval.context, "Context length for the fixed protocol");
  eval_cmd->add_flag("--anchor", eval.anchor, "Enable first-step anchoring");
  eval_cmd->add_option("--comm", eval.comm, "Communication input the model was trained on");
  eval_cmd->add_option("--out", eval.out, "Report JSON path");
  eval_cmd->add_option("--csv", eval.csv, "Per-point CSV path");

  AblateArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train the action-encoder ablation grid");
  add_train_options(ablate_cmd, ablate.train);
  ablate_cmd->add_option("--comm", ablate.comm, "Communication variants")
      ->check(CLI::IsMember({"full", "intensity", "none"}));
  ablate_cmd->add_option("--encoders", ablate.encoders, "Encoder variants")
      ->check(CLI::IsMember({"wide", "split"}));
  ablate_cmd->add_option("--split", ablate.split, "Split to report")
      ->check(CLI::IsMember({"train", "val", "test"}));

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Serve counterfactual rollouts over HTTP");
  serve_cmd->add_option("--checkpoint", serve.checkpoint, "Checkpoint (env CMWM_CHECKPOINT)");
  serve_cmd->add_option("--cohort", serve.cohort, "Cohort JSONL (env CMWM_COHORT)");
  serve_cmd->add_option("--labels", serve.labels, "Structured-action labels JSON");
  serve_cmd->add_option("--comm", serve.comm, "Communication input the model was trained on");
  serve_cmd->add_option("--host", serve.host, "Bind address");
  serve_cmd->add_option("--port", serve.port, "Port (env PORT, default 8080)");
  serve_cmd->add_option("--max-in-flight", serve.max_in_flight, "Concurrent embedding requests");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen);
    if (train_cmd->parsed()) return cmd_train(train, threads);
    if (eval_cmd->parsed()) return cmd_eval(eval, threads);
    if (ablate_cmd->parsed()) {
      if (ablate.train.out_dir.empty()) ablate.train.out_dir = "ablation";
      return cmd_ablate(ablate, threads);
    }
    if (serve_cmd->parsed()) return cmd_serve(serve);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const NotFoundError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
