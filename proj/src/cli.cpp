#include "hmmforget/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <unistd.h>

#include "hmmforget/filtering.hpp"
#include "hmmforget/inference.hpp"
#include "hmmforget/lyapunov.hpp"
#include "hmmforget/model_io.hpp"
#include "hmmforget/sampling.hpp"

#ifndef HMMFORGET_VERSION
#define HMMFORGET_VERSION "dev"
#endif

namespace hmmforget::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

// Writes through a sibling temp file and renames it into place.
void commit_atomic(const fs::path& path, const std::function<void(const fs::path&)>& writer) {
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  try {
    writer(tmp);
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

void emit(const std::string& output, std::ostream& out, const std::function<void(std::ostream&)>& body) {
  if (output.empty()) {
    body(out);
    return;
  }
  commit_atomic(output, [&](const fs::path& tmp) {
    std::ofstream f(tmp);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    body(f);
    if (!f) throw std::runtime_error("write failed for " + tmp.string());
  });
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json vector_json(const Vector& v) {
  auto a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(number_or_null(v[i]));
  return a;
}

ObservationFormat parse_format(const std::string& s) {
  return s == "binary" ? ObservationFormat::binary : ObservationFormat::text;
}

StateDistribution distribution_or(const std::vector<double>& given, Index k, bool first_heavy) {
  if (!given.empty()) {
    if (static_cast<Index>(given.size()) != k) throw std::invalid_argument("initial distribution has the wrong length");
    return StateDistribution(Eigen::Map<const Vector>(given.data(), k));
  }
  Vector p = Vector::Constant(k, k > 1 ? 0.02 / static_cast<double>(k - 1) : 1.0);
  if (k > 1) p[first_heavy ? 0 : k - 1] = 0.98;
  return StateDistribution::normalized(p);
}

// Shared --model / --obs | --simulate plumbing.
struct DataOptions {
  std::string model;
  std::string obs;
  std::string format = "text";
  std::vector<std::uint64_t> simulate;

  void add_to(CLI::App* sub, bool obs_required) {
    sub->add_option("--model", model, "model JSON file")->required()->check(CLI::ExistingFile);
    auto* o = sub->add_option("--obs", obs, "observation file")->check(CLI::ExistingFile);
    sub->add_option("--format", format, "observation file format")->check(CLI::IsMember({"text", "binary"}));
    if (obs_required) {
      o->required();
    } else {
      auto* s = sub->add_option("--simulate", simulate, "simulate N observations with SEED")->expected(2);
      o->excludes(s);
    }
  }

  ObservationSequence observations(const HmmModel& m) const {
    if (!obs.empty()) return read_observations(obs, parse_format(format));
    if (simulate.size() != 2) throw std::invalid_argument("either --obs or --simulate N SEED is required");
    return sample_sequence(m, simulate[0], simulate[1]).observations;
  }
};

class Manifest {
 public:
  Manifest(const CLI::App* sub, std::string manifest_path, const std::string& output)
      : path_(manifest_path.empty() && !output.empty() ? output + ".manifest.json" : std::move(manifest_path)) {
    doc_["subcommand"] = sub->get_name();
    doc_["tool_version"] = HMMFORGET_VERSION;
    json config = json::object();
    for (const CLI::Option* opt : sub->get_options()) {
      if (opt->get_lnames().empty()) continue;
      const std::string name = opt->get_lnames().front();
      if (name == "help") continue;
      if (!opt->results().empty()) {
        config[name] = opt->results().size() == 1 ? json(opt->results().front()) : json(opt->results());
      } else {
        config[name] = opt->get_default_str();
      }
    }
    doc_["config"] = std::move(config);
    doc_["inputs"] = json::object();
  }

  void seed(std::uint64_t s) { doc_["seed"] = s; }
  void input(const std::string& path) {
    if (!path.empty()) doc_["inputs"][path] = sha256_file(path);
  }
  void write() const {
    if (path_.empty()) return;
    emit(path_, std::cout, [&](std::ostream& o) { o << doc_.dump(2) << '\n'; });
  }

 private:
  std::string path_;
  json doc_;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Exponential forgetting toolkit for Gaussian hidden Markov models", "hmmforget"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", HMMFORGET_VERSION);

  std::string output;
  std::string manifest;
  auto common = [&](CLI::App* sub) {
    sub->add_option("-o,--output", output, "output file (default: standard output)");
    sub->add_option("--manifest", manifest, "run manifest path (default: <output>.manifest.json)");
  };

  // sample
  auto* sample_cmd = app.add_subcommand("sample", "simulate a state/observation sequence");
  std::string sample_model, sample_format = "text", states_path;
  std::size_t sample_n = 0;
  std::uint64_t sample_seed = 0;
  sample_cmd->add_option("--model", sample_model, "model JSON file")->required()->check(CLI::ExistingFile);
  sample_cmd->add_option("-n,--length", sample_n, "number of observations")->required()->check(CLI::PositiveNumber);
  sample_cmd->add_option("--seed", sample_seed, "random seed");
  sample_cmd->add_option("--format", sample_format, "observation format")->check(CLI::IsMember({"text", "binary"}));
  sample_cmd->add_option("--states", states_path, "also write the latent states here");
  sample_cmd->add_option("-o,--output", output, "observation output file")->required();
  sample_cmd->add_option("--manifest", manifest, "run manifest path (default: <output>.manifest.json)");

  // filter
  auto* filter_cmd = app.add_subcommand("filter", "forward filter an observation file");
  DataOptions filter_data;
  bool streaming = false;
  filter_data.add_to(filter_cmd, true);
  filter_cmd->add_flag("--streaming", streaming, "only report the log-likelihood (O(K) memory)");
  common(filter_cmd);

  // gap
  auto* gap_cmd = app.add_subcommand("gap", "estimate the forgetting rate and buffer length");
  DataOptions gap_data;
  std::size_t burn_in = kDefaultBurnIn;
  double gap_epsilon = 1e-10;
  std::string method = "jacobian";
  std::uint64_t gap_seed = 0;
  std::size_t replicates = 1;
  unsigned gap_threads = 1;
  gap_data.add_to(gap_cmd, false);
  gap_cmd->add_option("--burn-in", burn_in, "steps before accumulation");
  gap_cmd->add_option("--epsilon", gap_epsilon, "forgetting tolerance for the buffer length");
  gap_cmd->add_option("--method", method, "estimator")->check(CLI::IsMember({"jacobian", "qr", "trajectory", "all"}));
  gap_cmd->add_option("--seed", gap_seed, "seed for the test vector");
  gap_cmd->add_option("--replicates", replicates, "independent simulated sequences to average (with --simulate)")
      ->check(CLI::PositiveNumber);
  gap_cmd->add_option("--threads", gap_threads, "worker threads for replicates");
  common(gap_cmd);

  // sync-demo
  auto* sync_cmd = app.add_subcommand("sync-demo", "two-filter synchronization curves (CSV)");
  std::string sync_model;
  std::size_t sync_seeds = 500, sync_steps = 150;
  std::uint64_t sync_seed = 0;
  double cutoff = 1e-14;
  double mean_cutoff = 0.0;
  std::vector<double> p0, p0_alt;
  unsigned sync_threads = 1;
  sync_cmd->add_option("--model", sync_model, "model JSON file")->required()->check(CLI::ExistingFile);
  sync_cmd->add_option("--seeds", sync_seeds, "number of sequences")->check(CLI::PositiveNumber);
  sync_cmd->add_option("--steps", sync_steps, "sequence length")->check(CLI::PositiveNumber);
  sync_cmd->add_option("--seed", sync_seed, "base seed");
  sync_cmd->add_option("--cutoff", cutoff, "per-sequence cutoff distance");
  sync_cmd->add_option("--mean-cutoff", mean_cutoff, "cutoff applied to the mean curve");
  sync_cmd->add_option("--p0", p0, "first initial distribution")->delimiter(',');
  sync_cmd->add_option("--p0-alt", p0_alt, "second initial distribution")->delimiter(',');
  sync_cmd->add_option("--threads", sync_threads, "worker threads");
  common(sync_cmd);

  // tau
  auto* tau_cmd = app.add_subcommand("tau", "Birkhoff contraction coefficient of the transition matrix");
  std::string tau_model;
  tau_cmd->add_option("--model", tau_model, "model JSON file")->required()->check(CLI::ExistingFile);
  common(tau_cmd);

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "buffered mini-batch gradient MLE");
  DataOptions infer_data;
  std::string free_params = "mu1,mu2";
  std::vector<double> start;
  SgdConfig sgd;
  std::string buffer = "auto";
  std::string trace_path;
  bool global_decay = false;
  infer_data.add_to(infer_cmd, false);
  infer_cmd->add_option("--free", free_params, "free parameters, e.g. mu1,mu2 or mu1,sigma1 or row1");
  infer_cmd->add_option("--start", start, "starting natural values of the free parameters")->delimiter(',');
  infer_cmd->add_option("--eta0", sgd.eta0, "initial learning rate");
  infer_cmd->add_option("--decay", sgd.decay, "learning-rate decay per step");
  infer_cmd->add_option("--steps-per-restart", sgd.steps_per_restart, "steps between restarts");
  infer_cmd->add_option("--restart-threshold", sgd.restart_threshold, "stop when a restart moves less than this");
  infer_cmd->add_option("--max-restarts", sgd.max_restarts, "restart cap");
  infer_cmd->add_option("--batch", sgd.batch_size, "terms per mini-batch");
  infer_cmd->add_option("--buffer", buffer, "buffer length B1 = B2, or auto");
  infer_cmd->add_option("--epsilon", sgd.epsilon, "forgetting tolerance for automatic buffers");
  infer_cmd->add_option("--seed", sgd.seed, "random seed");
  infer_cmd->add_option("--divergence-nats", sgd.divergence_nats, "abort when the probe log-likelihood drops this far");
  infer_cmd->add_option("--threads", sgd.threads, "worker threads for mini-batch terms");
  infer_cmd->add_flag("--global-eta-decay", global_decay, "do not restart the learning-rate schedule at restarts");
  infer_cmd->add_flag("--non-overlapping", sgd.non_overlapping, "reject overlapping windows");
  infer_cmd->add_option("--trace", trace_path, "CSV trace output");
  common(infer_cmd);

  std::vector<const char*> argv{"hmmforget"};
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return kExitOk;
    } catch (const CLI::CallForVersion&) {
      out << HMMFORGET_VERSION << '\n';
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << "\n\n" << app.help();
      return kExitValidation;
    }

    if (sample_cmd->parsed()) {
      const HmmModel model = load_model(sample_model);
      Manifest man(sample_cmd, manifest, output);
      man.seed(sample_seed);
      man.input(sample_model);
      const SampleOutput s = sample_sequence(model, sample_n, sample_seed);
      commit_atomic(output, [&](const fs::path& tmp) { write_observations(tmp, s.observations, parse_format(sample_format)); });
      if (!states_path.empty()) commit_atomic(states_path, [&](const fs::path& tmp) { write_states(tmp, s.states); });
      man.write();
      return kExitOk;
    }

    if (filter_cmd->parsed()) {
      const HmmModel model = load_model(filter_data.model);
      Manifest man(filter_cmd, manifest, output);
      man.input(filter_data.model);
      man.input(filter_data.obs);
      const ObservationSequence obs = filter_data.observations(model);
      if (streaming) {
        const FilterSummary summary = forward_filter_streaming(model, obs);
        emit(output, out, [&](std::ostream& o) {
          o << json{{"log_likelihood", summary.log_likelihood}, {"n", summary.n}}.dump() << '\n';
        });
      } else {
        const FilterRun run = forward_filter(model, obs);
        emit(output, out, [&](std::ostream& o) {
          o << std::setprecision(17) << "step";
          for (Index i = 0; i < model.states(); ++i) o << ",rho_" << i + 1;
          o << ",log_norm\n";
          for (std::size_t t = 0; t < run.rhos.size(); ++t) {
            o << t + 1;
            for (Index i = 0; i < model.states(); ++i) o << ',' << run.rhos[t][i];
            o << ',' << run.per_step_log_norms[t] << '\n';
          }
          o << "log_likelihood," << run.log_likelihood << '\n';
        });
      }
      man.write();
      return kExitOk;
    }

    if (gap_cmd->parsed()) {
      const HmmModel model = load_model(gap_data.model);
      require_primitive(model);
      Manifest man(gap_cmd, manifest, output);
      man.seed(gap_seed);
      man.input(gap_data.model);
      man.input(gap_data.obs);
      if (replicates > 1 && gap_data.simulate.size() != 2)
        throw std::invalid_argument("--replicates needs --simulate");

      std::vector<ObservationSequence> sequences;
      if (replicates == 1) {
        sequences.push_back(gap_data.observations(model));
      } else {
        for (std::size_t r = 0; r < replicates; ++r) {
          const std::uint64_t s = r == 0 ? gap_data.simulate[1] : derive_seed(gap_data.simulate[1], r);
          sequences.push_back(sample_sequence(model, gap_data.simulate[0], s).observations);
        }
      }
      const BirkhoffCoefficient tau = birkhoff_tau(model.transition);

      auto estimate = [&](const std::string& which, const ObservationSequence& obs) -> GapEstimate {
        if (which == "qr") return qr_gap(model, obs, burn_in);
        if (which == "trajectory") return trajectory_gap(model, obs, burn_in, gap_seed);
        return estimate_gap(model, obs, burn_in, gap_seed);
      };
      const std::vector<std::string> methods =
          method == "all" ? std::vector<std::string>{"jacobian", "qr", "trajectory"} : std::vector<std::string>{method};

      json results = json::array();
      for (const auto& m : methods) {
        std::vector<GapEstimate> estimates(sequences.size());
        const unsigned threads = std::max(1u, std::min<unsigned>(gap_threads, static_cast<unsigned>(sequences.size())));
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t)
          pool.emplace_back([&, t] {
            for (std::size_t r = t; r < sequences.size(); r += threads) estimates[r] = estimate(m, sequences[r]);
          });
        for (auto& th : pool) th.join();

        double mean = 0.0;
        for (const auto& e : estimates) mean += e.gap;
        mean /= static_cast<double>(estimates.size());
        json entry{{"method", m}, {"gap", number_or_null(mean)}, {"n", sequences.front().size()},
                   {"burn_in", burn_in}, {"epsilon", gap_epsilon}, {"tau_bound_log", std::log(tau.tau)},
                   {"tau_vacuous", tau.vacuous}};
        entry["buffer_length"] = mean < 0.0 ? json(buffer_length(mean, gap_epsilon)) : json(nullptr);
        if (estimates.size() > 1) {
          double var = 0.0;
          for (const auto& e : estimates) var += (e.gap - mean) * (e.gap - mean);
          entry["replicates"] = estimates.size();
          entry["gap_spread"] = std::sqrt(var / static_cast<double>(estimates.size() - 1));
        }
        if (m == "jacobian") {
          const GapEstimate back = estimate_backward_gap(model, sequences.front(), burn_in, gap_seed);
          entry["backward_gap"] = number_or_null(back.gap);
          entry["floor_hits"] = estimates.front().floor_hits;
        }
        results.push_back(std::move(entry));
      }
      const json doc = method == "all" ? results : results.front();
      emit(output, out, [&](std::ostream& o) { o << doc.dump(2) << '\n'; });
      man.write();
      return kExitOk;
    }

    if (sync_cmd->parsed()) {
      const HmmModel model = load_model(sync_model);
      require_primitive(model);
      Manifest man(sync_cmd, manifest, output);
      man.seed(sync_seed);
      man.input(sync_model);
      const StateDistribution a = distribution_or(p0, model.states(), true);
      const StateDistribution b = distribution_or(p0_alt, model.states(), false);
      const SyncCurves curves =
          sync_experiment(model, sync_seeds, sync_steps, sync_seed, a, b, cutoff, mean_cutoff, sync_threads);
      emit(output, out, [&](std::ostream& o) {
        o << std::setprecision(17) << "seed,step,log_distance_over_n\n";
        for (std::size_t k = 0; k < curves.per_seed.size(); ++k)
          for (std::size_t n = 0; n < curves.per_seed[k].size(); ++n)
            o << k << ',' << n + 1 << ',' << curves.per_seed[k][n] << '\n';
        for (std::size_t n = 0; n < curves.mean_log_distance.size(); ++n)
          if (curves.contributors[n] > 0)
            o << "mean," << n + 1 << ',' << curves.mean_log_distance[n] / static_cast<double>(n + 1) << '\n';
      });
      man.write();
      return kExitOk;
    }

    if (tau_cmd->parsed()) {
      const HmmModel model = load_model(tau_model);
      Manifest man(tau_cmd, manifest, output);
      man.input(tau_model);
      const BirkhoffCoefficient tau = birkhoff_tau(model.transition);
      const json doc{{"phi", tau.phi}, {"tau", tau.tau}, {"log_tau", number_or_null(std::log(tau.tau))},
                     {"vacuous", tau.vacuous}};
      emit(output, out, [&](std::ostream& o) { o << doc.dump(2) << '\n'; });
      man.write();
      return kExitOk;
    }

    if (infer_cmd->parsed()) {
      const HmmModel truth = load_model(infer_data.model);
      Manifest man(infer_cmd, manifest, output);
      man.seed(sgd.seed);
      man.input(infer_data.model);
      man.input(infer_data.obs);
      const ObservationSequence obs = infer_data.observations(truth);
      const ParamSelector selector = ParamSelector::parse(free_params);

      HmmModel model0 = truth;
      if (!start.empty()) {
        const Vector natural = Eigen::Map<const Vector>(start.data(), static_cast<Index>(start.size()));
        if (natural.size() != selector.dimension(truth.states()))
          throw std::invalid_argument("--start needs one value per free parameter");
        // natural -> optimization coordinates, one parameter at a time
        Vector theta = pack(truth, selector);
        Index at = 0;
        for (const auto& p : selector.params()) {
          if (p.kind == ParamKind::mean) {
            theta[at] = natural[at];
            ++at;
          } else if (p.kind == ParamKind::stddev) {
            if (!(natural[at] > 0.0)) throw std::invalid_argument("--start: sigma must be positive");
            theta[at] = std::log(natural[at]);
            ++at;
          } else {
            const Index k = truth.states();
            const double last = 1.0 - natural.segment(at, k - 1).sum();
            if (!(last > 0.0) || (natural.segment(at, k - 1).array() <= 0.0).any())
              throw std::invalid_argument("--start: transition row must be strictly positive");
            for (Index c = 0; c + 1 < k; ++c, ++at) theta[at] = std::log(natural[at] / last);
          }
        }
        model0 = unpack(truth, selector, theta);
      }
      if (buffer != "auto") {
        const std::size_t b = std::stoul(buffer);
        sgd.b1 = b;
        sgd.b2 = b;
      }
      sgd.reset_eta_on_restart = !global_decay;

      const SgdResult result = sgd_infer(model0, obs, selector, sgd);
      const auto labels = selector.labels(truth.states());
      if (!trace_path.empty()) {
        commit_atomic(trace_path, [&](const fs::path& tmp) {
          std::ofstream o(tmp);
          o << std::setprecision(17) << "restart,step";
          for (const auto& l : labels) o << ',' << l;
          o << ",eta,probe_loglik\n";
          for (const auto& row : result.trace) {
            o << row.restart << ',' << row.step;
            for (Index i = 0; i < row.theta.size(); ++i) o << ',' << row.theta[i];
            o << ',' << row.eta << ',' << row.probe_loglik << '\n';
          }
        });
      }
      const json doc{{"theta_hat", vector_json(result.theta)},
                     {"labels", labels},
                     {"multiplies", result.matvec_products},
                     {"gap_multiplies", result.gap_matvecs},
                     {"full_filter_multiplies", obs.size()},
                     {"work_below_full_filter", result.matvec_products < obs.size()},
                     {"buffers", {result.b1, result.b2}},
                     {"restarts", result.restarts},
                     {"steps", result.steps},
                     {"converged", result.converged}};
      emit(output, out, [&](std::ostream& o) { o << doc.dump(2) << '\n'; });
      man.write();
      return kExitOk;
    }
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const ModelError& e) {
    err << "error: " << e.what() << '\n';
    for (const auto& v : e.violations()) err << "  " << v << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitValidation;
}

}  // namespace hmmforget::cli
