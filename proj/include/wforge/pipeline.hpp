#pragma once
// Batch pipeline commands shared by the command-line tool and the test suites.

#include <chrono>
#include <fcntl.h>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "wforge/diffusion.hpp"
#include "wforge/ingest.hpp"
#include "wforge/metrics.hpp"
#include "wforge/mock.hpp"
#include "wforge/smote.hpp"

namespace wforge {

namespace fs = std::filesystem;

// Bad flags or config values; maps to exit status 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct PipelineConfig {
  fs::path workdir = ".";
  std::optional<std::string> trace, catalog, out, synth;
  std::string model = "smote";
  bool model_set = false;
  std::uint64_t seed = 0;
  std::optional<std::size_t> n;
  double train_fraction = 0.8;
  double max_malformed_fraction = 0.01;
  std::size_t quantiles = 0;
  std::size_t smote_k = kDefaultSmoteK;
  DiffusionConfig diffusion;
  TrainConfig train;
  GbdtConfig regressor = GbdtConfig::desk();
  std::size_t bins = 64, top_k = 5;
  double noise_sigma = MockProfile::defaults().noise_sigma;
  double size_sigma = MockProfile::defaults().size_sigma;
  double files_exponent = MockProfile::defaults().files_exponent;

  MockProfile profile() const {
    auto p = MockProfile::defaults();
    p.noise_sigma = noise_sigma;
    p.size_sigma = size_sigma;
    p.files_exponent = files_exponent;
    return p;
  }

  EvalConfig eval() const {
    EvalConfig e;
    e.regressor = regressor;
    e.bins = bins;
    e.top_k = top_k;
    return e;
  }

  TrainConfig train_config() const {
    auto t = train;
    t.seed = seed;
    return t;
  }

  fs::path in_workdir(const std::string& name) const { return workdir / name; }

  void validate() const {
    if (model != "smote" && model != "ddpm") throw UsageError("model must be 'smote' or 'ddpm', got '" + model + "'");
    if (n && *n == 0) throw UsageError("--n must be at least 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw UsageError("train_fraction must lie in (0, 1)");
    if (!(max_malformed_fraction >= 0.0 && max_malformed_fraction <= 1.0))
      throw UsageError("max_malformed_fraction must lie in [0, 1]");
    if (smote_k == 0) throw UsageError("smote.k must be positive");
    if (diffusion.timesteps == 0) throw UsageError("diffusion.timesteps must be positive");
    if (train.batch_size == 0) throw UsageError("diffusion.batch_size must be positive");
    if (!(train.learning_rate > 0.0)) throw UsageError("diffusion.learning_rate must be positive");
    if (bins == 0) throw UsageError("metrics.bins must be positive");
    if (!(noise_sigma >= 0.0) || !(size_sigma >= 0.0)) throw UsageError("mock sigmas must be non-negative");
    try {
      regressor.validate();
    } catch (const DataError& e) {
      throw UsageError(std::string("regressor: ") + e.what());
    }
  }

  nlohmann::ordered_json to_json() const {
    using J = nlohmann::ordered_json;
    auto opt = [](const std::optional<std::string>& s) { return s ? J(*s) : J(); };
    return {{"workdir", workdir.string()},
            {"trace", opt(trace)},
            {"catalog", opt(catalog)},
            {"out", opt(out)},
            {"synth", opt(synth)},
            {"model", model},
            {"seed", seed},
            {"n", n ? J(*n) : J()},
            {"train_fraction", train_fraction},
            {"max_malformed_fraction", max_malformed_fraction},
            {"quantiles", quantiles},
            {"smote", {{"k", smote_k}}},
            {"diffusion",
             {{"timesteps", diffusion.timesteps},
              {"hidden", diffusion.hidden},
              {"emb_dim", diffusion.emb_dim},
              {"average_categorical", diffusion.average_categorical},
              {"clip_x0", diffusion.clip_x0},
              {"steps", train.steps},
              {"learning_rate", train.learning_rate},
              {"batch_size", train.batch_size}}},
            {"regressor",
             {{"iterations", regressor.iterations},
              {"max_depth", regressor.max_depth},
              {"learning_rate", regressor.learning_rate},
              {"min_samples_leaf", regressor.min_samples_leaf}}},
            {"metrics", {{"bins", bins}, {"top_k", top_k}}},
            {"mock", {{"noise_sigma", noise_sigma}, {"size_sigma", size_sigma}, {"files_exponent", files_exponent}}}};
  }

  // Applies the keys present in `j`; unknown keys and wrong types are usage errors.
  void merge(const nlohmann::json& j) {
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    auto section = [](const nlohmann::json& s, const std::string& name, auto&& apply) {
      if (!s.is_object()) throw UsageError("config section '" + name + "' must be an object");
      for (const auto& [k, v] : s.items()) {
        if (!apply(k, v)) throw UsageError("unknown config key '" + name + "." + k + "'");
      }
    };
    try {
      section(j, "", [&](const std::string& k, const nlohmann::json& v) {
        auto opt_str = [&](std::optional<std::string>& dst) {
          if (v.is_null())
            dst.reset();
          else
            dst = v.get<std::string>();
        };
        if (k == "workdir") workdir = v.get<std::string>();
        else if (k == "trace") opt_str(trace);
        else if (k == "catalog") opt_str(catalog);
        else if (k == "out") opt_str(out);
        else if (k == "synth") opt_str(synth);
        else if (k == "model") {
          model = v.get<std::string>();
          model_set = true;
        } else if (k == "seed") seed = v.get<std::uint64_t>();
        else if (k == "n") {
          if (v.is_null())
            n.reset();
          else
            n = v.get<std::size_t>();
        } else if (k == "train_fraction") train_fraction = v.get<double>();
        else if (k == "max_malformed_fraction") max_malformed_fraction = v.get<double>();
        else if (k == "quantiles") quantiles = v.get<std::size_t>();
        else if (k == "smote")
          section(v, k, [&](const std::string& s, const nlohmann::json& x) {
            if (s != "k") return false;
            smote_k = x.get<std::size_t>();
            return true;
          });
        else if (k == "diffusion")
          section(v, k, [&](const std::string& s, const nlohmann::json& x) {
            if (s == "timesteps") diffusion.timesteps = x.get<std::size_t>();
            else if (s == "hidden") diffusion.hidden = x.get<std::vector<std::size_t>>();
            else if (s == "emb_dim") diffusion.emb_dim = x.get<std::size_t>();
            else if (s == "average_categorical") diffusion.average_categorical = x.get<bool>();
            else if (s == "clip_x0") diffusion.clip_x0 = x.get<double>();
            else if (s == "steps") train.steps = x.get<std::size_t>();
            else if (s == "learning_rate") train.learning_rate = x.get<double>();
            else if (s == "batch_size") train.batch_size = x.get<std::size_t>();
            else return false;
            return true;
          });
        else if (k == "regressor")
          section(v, k, [&](const std::string& s, const nlohmann::json& x) {
            if (s == "iterations") regressor.iterations = x.get<std::size_t>();
            else if (s == "max_depth") regressor.max_depth = x.get<std::size_t>();
            else if (s == "learning_rate") regressor.learning_rate = x.get<double>();
            else if (s == "min_samples_leaf") regressor.min_samples_leaf = x.get<std::size_t>();
            else return false;
            return true;
          });
        else if (k == "metrics")
          section(v, k, [&](const std::string& s, const nlohmann::json& x) {
            if (s == "bins") bins = x.get<std::size_t>();
            else if (s == "top_k") top_k = x.get<std::size_t>();
            else return false;
            return true;
          });
        else if (k == "mock")
          section(v, k, [&](const std::string& s, const nlohmann::json& x) {
            if (s == "noise_sigma") noise_sigma = x.get<double>();
            else if (s == "size_sigma") size_sigma = x.get<double>();
            else if (s == "files_exponent") files_exponent = x.get<double>();
            else return false;
            return true;
          });
        else return false;
        return true;
      });
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(std::string("config: ") + e.what());
    }
  }

  void merge_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file '" + path + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("config file '" + path + "': " + e.what());
    }
    merge(j);
  }
};

// Exclusive marker file in the work directory, removed on destruction.
class WorkdirLock {
 public:
  explicit WorkdirLock(const fs::path& dir) : path_(dir / ".workload_forge.lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw IoError("work directory is locked by another run (remove '" + path_.string() + "' if that run is gone)");
    auto pid = std::to_string(::getpid()) + "\n";
    if (::write(fd_, pid.data(), pid.size()) < 0) {
      // the pid is informational only
    }
  }
  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;
  ~WorkdirLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  fs::path path_;
  int fd_ = -1;
};

namespace detail {

template <typename J>
void write_json_file(const fs::path& path, const J& j) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << j.dump(2) << '\n';
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
}

inline TraceFormat trace_format(const std::string& path) {
  return fs::path(path).extension() == ".jsonl" ? TraceFormat::jsonl : TraceFormat::csv;
}

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace detail

inline constexpr const char* kEncoderFile = "encoder.json";
inline constexpr const char* kTrainLogFile = "train_log.json";

inline std::string checkpoint_name(const std::string& model) { return model == "ddpm" ? "model.ddpm" : "model.smote"; }

inline void cmd_mock(const PipelineConfig& cfg, std::ostream& log) {
  if (!cfg.n) throw UsageError("mock needs --n");
  const auto profile = cfg.profile();
  auto table = generate_mock_table(profile, *cfg.n, cfg.seed);
  fs::path out = cfg.out ? fs::path(*cfg.out) : cfg.in_workdir("data.csv");
  write_table_file(out.string(), table);
  log << "wrote " << table.rows() << " rows to " << out.string() << '\n';
  if (cfg.trace) {
    auto raw = mock_raw_trace(profile, table, cfg.seed);
    std::ofstream os(*cfg.trace, std::ios::binary);
    if (!os) throw IoError("cannot write '" + *cfg.trace + "'");
    write_trace_csv(os, raw);
    if (!os) throw IoError("write failed for '" + *cfg.trace + "'");
    log << "wrote " << raw.size() << " trace records to " << *cfg.trace << '\n';
  }
  if (cfg.catalog) detail::write_json_file(*cfg.catalog, mock_site_catalog(profile).to_json());
}

inline void cmd_ingest(const PipelineConfig& cfg, std::ostream& log) {
  if (!cfg.trace) throw UsageError("ingest needs --trace");
  if (!cfg.catalog) throw UsageError("ingest needs --catalog");
  auto catalog = SiteCatalog::load(*cfg.catalog);
  std::ifstream in(*cfg.trace, std::ios::binary);
  if (!in) throw IoError("cannot open trace '" + *cfg.trace + "'");
  auto res = ingest_trace(in, detail::trace_format(*cfg.trace), catalog, cfg.max_malformed_fraction);

  Table train(job_schema()), test(job_schema());
  if (res.table.rows() == 0) {
    log << "warning: no DAOD rows survived filtering; writing empty train and test tables\n";
  } else {
    std::tie(train, test) = split_train_test(res.table, cfg.train_fraction, cfg.seed);
  }
  write_table_file(cfg.in_workdir("train.csv").string(), train);
  write_table_file(cfg.in_workdir("test.csv").string(), test);

  nlohmann::ordered_json stages = nlohmann::ordered_json::array();
  for (const auto& s : res.funnel) stages.push_back({{"stage", s.name}, {"count", s.count}});
  detail::write_json_file(cfg.in_workdir("funnel.json"),
                          nlohmann::ordered_json{{"stages", stages},
                                                 {"malformed", res.malformed},
                                                 {"train", train.rows()},
                                                 {"test", test.rows()}});
  log << "ingested " << res.table.rows() << " jobs: " << train.rows() << " train, " << test.rows() << " test\n";
}

inline void cmd_train(const PipelineConfig& cfg, std::ostream& log) {
  detail::Stopwatch clock;
  auto table = read_job_table(cfg.in_workdir("train.csv").string());
  if (table.rows() == 0) throw DataError("train.csv has no rows");
  auto encoder = TableEncoder::fit(table, cfg.quantiles);
  auto encoded = encoder.encode(table);
  detail::write_json_file(cfg.in_workdir(kEncoderFile), encoder.to_json());

  nlohmann::ordered_json tlog = {{"model", cfg.model}, {"rows", table.rows()}, {"encoded_dim", encoder.layout().dim()},
                                 {"seed", cfg.seed}};
  const fs::path ckpt = cfg.in_workdir(checkpoint_name(cfg.model));
  if (cfg.model == "smote") {
    auto model = fit_smote(encoded, cfg.smote_k);
    save_matrix(ckpt, model.training());
    tlog["k"] = cfg.smote_k;
  } else {
    auto tc = cfg.train_config();
    auto every = std::max<std::size_t>(1, tc.steps / 10);
    auto model = train_diffusion(encoded, cfg.diffusion, tc, [&](std::size_t step, double loss) {
      if ((step + 1) % every == 0) log << "step " << step + 1 << "/" << tc.steps << " loss " << loss << '\n';
    });
    save_checkpoint(ckpt, model);
    tlog["diffusion"] = cfg.diffusion.to_json();
    tlog["optimizer"] = tc.to_json();
    tlog["steps_run"] = model.steps_run;
    tlog["final_loss"] = std::isfinite(model.final_loss) ? nlohmann::ordered_json(model.final_loss) : nlohmann::ordered_json();
    tlog["loss"] = model.loss_curve;
  }
  detail::write_json_file(cfg.in_workdir(kTrainLogFile), tlog);
  log << "trained " << cfg.model << " on " << table.rows() << " rows in " << clock.seconds() << " s\n";
}

inline void cmd_generate(const PipelineConfig& cfg, std::ostream& log) {
  auto tlog = detail::read_json_file(cfg.in_workdir(kTrainLogFile));
  const std::string trained = tlog.at("model").get<std::string>();
  const std::string model = cfg.model_set ? cfg.model : trained;
  if (model != trained)
    throw DataError("work directory holds a '" + trained + "' model but '" + model + "' was requested");
  auto encoder = TableEncoder::from_json(detail::read_json_file(cfg.in_workdir(kEncoderFile)));
  const std::size_t n = cfg.n.value_or(tlog.at("rows").get<std::size_t>());
  const fs::path ckpt = cfg.in_workdir(checkpoint_name(model));

  EncodedMatrix sampled;
  if (model == "smote") {
    auto k = tlog.at("k").get<std::size_t>();
    auto smote = fit_smote(EncodedMatrix{load_matrix(ckpt), encoder.layout()}, k);
    sampled = smote.sample(n, cfg.seed);
  } else {
    auto ddpm = load_checkpoint(ckpt);
    if (!(ddpm.layout == encoder.layout())) throw SchemaError("checkpoint layout does not match encoder.json");
    sampled = sample_diffusion(ddpm, n, cfg.seed);
  }
  auto table = encoder.decode(sampled);
  fs::path out = cfg.synth ? fs::path(*cfg.synth) : cfg.out ? fs::path(*cfg.out) : cfg.in_workdir("synth.csv");
  write_table_file(out.string(), table);
  log << "wrote " << n << " synthetic rows to " << out.string() << '\n';
}

inline MetricsReport cmd_evaluate(const PipelineConfig& cfg, std::ostream& log, std::ostream& summary) {
  auto train = read_job_table(cfg.in_workdir("train.csv").string());
  auto test = read_job_table(cfg.in_workdir("test.csv").string());
  fs::path synth_path = cfg.synth ? fs::path(*cfg.synth) : cfg.in_workdir("synth.csv");
  if (!fs::exists(synth_path)) throw IoError("synthetic table '" + synth_path.string() + "' does not exist");
  auto synth = read_job_table(synth_path.string());
  auto rep = evaluate(train, synth, test, cfg.eval());
  fs::path out = cfg.out ? fs::path(*cfg.out) : cfg.in_workdir("report.json");
  detail::write_json_file(out, rep.to_json());
  for (const auto& f : rep.flags) log << "note: " << f << '\n';
  summary << rep.summary_row() << '\n';
  return rep;
}

// Runs one command with the workdir lock held and the effective config echoed;
// returns the process exit status.
inline int run_command(const std::string& command, const PipelineConfig& cfg, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  try {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(cfg.workdir, ec);
    if (ec) throw IoError("cannot create work directory '" + cfg.workdir.string() + "': " + ec.message());
    WorkdirLock lock(cfg.workdir);
    detail::write_json_file(cfg.in_workdir("config." + command + ".json"), cfg.to_json());
    if (command == "mock") cmd_mock(cfg, err);
    else if (command == "ingest") cmd_ingest(cfg, err);
    else if (command == "train") cmd_train(cfg, err);
    else if (command == "generate") cmd_generate(cfg, err);
    else if (command == "evaluate") cmd_evaluate(cfg, err, out);
    else throw UsageError("unknown command '" + command + "'");
    return 0;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace wforge
