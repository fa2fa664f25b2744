#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <sys/wait.h>

#include "hmmforget/cli.hpp"
#include "hmmforget/model_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome call(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = hmmforget::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

struct Workspace {
  fs::path dir;
  fs::path model;
  Workspace() {
    dir = fs::temp_directory_path() / ("hmmforget_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    model = dir / "example1.json";
    hmmforget::save_model(hmmforget::example_model(), model);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
  std::string slurp(const std::string& name) const {
    std::ifstream in(dir / name);
    return {std::istreambuf_iterator<char>(in), {}};
  }
};

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("sample then filter") {
  Workspace ws;
  auto r = call({"sample", "--model", ws.model.string(), "-n", "1000", "--seed", "1", "-o", ws.path("obs.txt"),
                 "--states", ws.path("states.txt")});
  REQUIRE(r.code == 0);
  CHECK(count_lines(ws.slurp("obs.txt")) == 1000);
  CHECK(count_lines(ws.slurp("states.txt")) == 1000);
  const json manifest = json::parse(ws.slurp("obs.txt.manifest.json"));
  CHECK(manifest["subcommand"] == "sample");
  CHECK(manifest["seed"] == 1);
  CHECK(manifest["inputs"][ws.model.string()].get<std::string>().size() == 64);

  r = call({"filter", "--model", ws.model.string(), "--obs", ws.path("obs.txt"), "-o", ws.path("filter.csv")});
  REQUIRE(r.code == 0);
  const std::string csv = ws.slurp("filter.csv");
  CHECK(csv.rfind("step,rho_1,rho_2,rho_3,log_norm\n", 0) == 0);
  CHECK(count_lines(csv) == 1002);
  const auto pos = csv.find("log_likelihood,");
  REQUIRE(pos != std::string::npos);
  const double ll = std::stod(csv.substr(pos + 15));
  CHECK(std::isfinite(ll));

  r = call({"filter", "--model", ws.model.string(), "--obs", ws.path("obs.txt"), "--streaming"});
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["log_likelihood"].get<double>() == ll);

  // identical manifests reproduce identical bytes
  const std::string first = ws.slurp("obs.txt");
  REQUIRE(call({"sample", "--model", ws.model.string(), "-n", "1000", "--seed", "1", "-o", ws.path("obs.txt")}).code == 0);
  CHECK(ws.slurp("obs.txt") == first);
  for (const auto& entry : fs::directory_iterator(ws.dir))
    CHECK(entry.path().string().find(".tmp") == std::string::npos);
}

TEST_CASE("gap subcommand") {
  Workspace ws;
  auto r = call({"gap", "--model", ws.model.string(), "--simulate", "10000", "7", "--epsilon", "1e-15"});
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j["method"] == "jacobian");
  CHECK(j["n"] == 10000);
  CHECK(j["gap"].get<double>() == doctest::Approx(-0.1944).epsilon(0.1));
  CHECK(std::abs(j["buffer_length"].get<int>() - 178) <= 10);
  CHECK(j["tau_bound_log"].get<double>() < 0.0);
  CHECK(j.contains("backward_gap"));

  r = call({"gap", "--model", ws.model.string(), "--simulate", "5000", "1", "--method", "all", "--replicates", "3",
            "--threads", "2"});
  REQUIRE(r.code == 0);
  const json all = json::parse(r.out);
  REQUIRE(all.size() == 3);
  CHECK(all[1]["method"] == "qr");
  CHECK(all[2]["replicates"] == 3);
  CHECK(all[0]["gap_spread"].get<double>() >= 0.0);
}

TEST_CASE("tau and sync-demo") {
  Workspace ws;
  auto r = call({"tau", "--model", ws.model.string()});
  REQUIRE(r.code == 0);
  const json t = json::parse(r.out);
  CHECK(t["tau"].get<double>() < 1.0);
  CHECK(t["vacuous"] == false);

  r = call({"sync-demo", "--model", ws.model.string(), "--seeds", "5", "--steps", "50", "-o", ws.path("sync.csv")});
  REQUIRE(r.code == 0);
  const std::string csv = ws.slurp("sync.csv");
  CHECK(csv.rfind("seed,step,log_distance_over_n\n", 0) == 0);
  CHECK(csv.find("\nmean,50,") != std::string::npos);
  CHECK(fs::exists(ws.path("sync.csv.manifest.json")));
}

TEST_CASE("infer subcommand") {
  Workspace ws;
  auto r = call({"infer", "--model", ws.model.string(), "--simulate", "20000", "3", "--free", "mu1,mu2", "--start",
                 "0.1,0.4", "--buffer", "100", "--max-restarts", "2", "--batch", "20", "--trace", ws.path("trace.csv"),
                 "-o", ws.path("infer.json")});
  REQUIRE(r.code == 0);
  const json j = json::parse(ws.slurp("infer.json"));
  CHECK(j["theta_hat"].size() == 2);
  CHECK(j["labels"][1] == "mu2");
  CHECK(j["buffers"][0] == 100);
  CHECK(j["multiplies"].get<std::uint64_t>() % (20 * 201) == 0);
  const std::string trace = ws.slurp("trace.csv");
  CHECK(trace.rfind("restart,step,mu1,mu2,eta,probe_loglik\n", 0) == 0);
  CHECK(fs::exists(ws.path("infer.json.manifest.json")));
}

TEST_CASE("exit codes") {
  Workspace ws;
  CHECK(call({"--help"}).code == 0);
  auto r = call({"gap", "--bogus-flag"});
  CHECK(r.code == 1);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(call({}).code == 1);

  std::ofstream(ws.path("bad.json")) << R"({"transition": [[0.5, 0.4], [0.5, 0.5]], "means": [0, 1], "stds": [1, 1]})";
  r = call({"tau", "--model", ws.path("bad.json")});
  CHECK(r.code == 1);
  CHECK(r.err.find("row 0 not stochastic") != std::string::npos);

  std::ofstream(ws.path("periodic.json")) << R"({"transition": [[0, 1], [1, 0]], "means": [0, 1], "stds": [1, 1]})";
  CHECK(call({"gap", "--model", ws.path("periodic.json"), "--simulate", "2000", "1"}).code == 1);
  CHECK(call({"gap", "--model", ws.model.string()}).code == 1);

  // probe window collapse is a numerical failure
  r = call({"infer", "--model", ws.model.string(), "--simulate", "5000", "1", "--free", "sigma1", "--eta0", "3",
            "--buffer", "50", "--batch", "10", "--divergence-nats", "1e-9"});
  CHECK(r.code == 2);
  CHECK(r.err.find("nats") != std::string::npos);
}

TEST_CASE("installed binary forwards exit codes") {
  const std::string bin = HMMFORGET_CLI_PATH;
  int status = std::system((bin + " gap --nope > /dev/null 2>&1").c_str());
  CHECK(WEXITSTATUS(status) == 1);
  status = std::system((bin + " --help > /dev/null 2>&1").c_str());
  CHECK(WEXITSTATUS(status) == 0);
}
