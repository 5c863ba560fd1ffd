#include "b2mapo/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "b2mapo/batch.hpp"
#include "b2mapo/policies.hpp"
#include "b2mapo/rng.hpp"
#include "b2mapo/scheduler.hpp"
#include "b2mapo/text_io.hpp"
#include "b2mapo/verify.hpp"

namespace b2mapo {
namespace {

namespace fs = std::filesystem;

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << content;
  if (!f) throw std::runtime_error("write failed for " + path);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

double median_of(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty set");
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2         ? v[n / 2]
                       : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/* Nearest-rank quartiles on the sorted sample; 0 for a single value. */
double iqr_of(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("iqr of empty set");
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  auto rank = [n](double p) {
    std::size_t r = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
    return (r > 0 ? r : 1) - 1;
  };
  return v[rank(0.75)] - v[rank(0.25)];
}

int parse_int_field(const std::string& key, const std::string& value) {
  try {
    return static_cast<int>(parse_int(value));
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer for " + key);
  }
}

double parse_double_field(const std::string& key, const std::string& value) {
  try {
    return parse_double(value);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad number for " + key);
  }
}

bool parse_bool_field(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "no") return false;
  throw std::invalid_argument("config: bad boolean for " + key);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& key,
                                           const std::string& value) {
  std::vector<std::uint64_t> out;
  for (const std::string& tok : split_on(value, ',')) {
    std::string t = trim(tok);
    if (t.empty()) continue;
    long long v = 0;
    try {
      v = parse_int(t);
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad seed in " + key);
    }
    if (v < 0) throw std::invalid_argument("config: negative seed in " + key);
    out.push_back(static_cast<std::uint64_t>(v));
  }
  return out;
}

/* "0,2|1,3" -> two batches; members are sorted, n_agents = max id + 1. */
BatchSequence parse_sequence_field(const std::string& key,
                                   const std::string& value) {
  BatchSequence seq;
  int max_agent = -1;
  for (const std::string& part : split_on(value, '|')) {
    std::vector<int> batch;
    for (const std::string& tok : split_on(part, ',')) {
      std::string t = trim(tok);
      if (t.empty()) continue;
      int agent = parse_int_field(key, t);
      batch.push_back(agent);
      max_agent = std::max(max_agent, agent);
    }
    if (!batch.empty()) {
      std::sort(batch.begin(), batch.end());
      seq.batches.push_back(std::move(batch));
    }
  }
  seq.n_agents = max_agent + 1;
  return seq;
}

/* CSV-safe rendering of a batch sequence: members joined by '+'. */
std::string sequence_cell(const BatchSequence& seq) {
  std::string s = seq.to_string();
  std::replace(s.begin(), s.end(), ',', '+');
  return s;
}

void apply_config_key(ExperimentConfig& config, const std::string& key,
                      const std::string& value) {
  if (key == "game.builder") {
    if (value != "chain" && value != "random" && value != "file")
      throw std::invalid_argument("config: unknown game.builder '" + value + "'");
    config.game.builder = value;
  } else if (key == "game.n_agents") {
    config.game.n_agents = parse_int_field(key, value);
  } else if (key == "game.coupling") {
    config.game.coupling = parse_double_field(key, value);
  } else if (key == "game.masked") {
    config.game.masked = parse_bool_field(key, value);
  } else if (key == "game.n_states") {
    config.game.n_states = parse_int_field(key, value);
  } else if (key == "game.n_actions") {
    config.game.n_actions = parse_int_field(key, value);
  } else if (key == "game.gamma") {
    config.game.gamma = parse_double_field(key, value);
  } else if (key == "game.seed") {
    long long v = parse_int_field(key, value);
    if (v < 0) throw std::invalid_argument("config: negative game.seed");
    config.game.seed = static_cast<std::uint64_t>(v);
  } else if (key == "game.path") {
    config.game.path = value;
  } else if (key == "scheme.mode") {
    try {
      config.scheme.mode = mode_from_string(value);
    } catch (const std::exception&) {
      throw std::invalid_argument("config: unknown scheme.mode '" + value + "'");
    }
  } else if (key == "scheme.clip_eps") {
    config.scheme.clip_eps = parse_double_field(key, value);
  } else if (key == "scheme.lr") {
    config.scheme.lr = parse_double_field(key, value);
  } else if (key == "scheme.epochs") {
    config.scheme.epochs = parse_int_field(key, value);
  } else if (key == "scheme.distill_period") {
    config.scheme.distill_period = parse_int_field(key, value);
  } else if (key == "scheme.distill_coef") {
    config.scheme.distill_coef = parse_double_field(key, value);
  } else if (key == "scheme.distill_lr") {
    config.scheme.distill_lr = parse_double_field(key, value);
  } else if (key == "scheme.lambda") {
    config.scheme.lambda = parse_double_field(key, value);
  } else if (key == "scheme.gamma_override") {
    config.scheme.gamma_override = parse_double_field(key, value);
  } else if (key == "scheme.n_episodes") {
    config.scheme.n_episodes = parse_int_field(key, value);
  } else if (key == "scheme.horizon") {
    config.scheme.horizon = parse_int_field(key, value);
  } else if (key == "scheme.oracle") {
    config.scheme.oracle = parse_bool_field(key, value);
  } else if (key == "scheme.normalize_advantage") {
    config.scheme.normalize_advantage = parse_bool_field(key, value);
  } else if (key == "scheme.record_chain") {
    config.scheme.record_chain = parse_bool_field(key, value);
  } else if (key == "scheme.fixed_sequence") {
    config.scheme.fixed_sequence = parse_sequence_field(key, value);
  } else if (key == "scheme.replan_period") {
    config.scheme.replan_period = parse_int_field(key, value);
  } else if (key == "scheme.dag_window") {
    config.scheme.dag_window = parse_int_field(key, value);
  } else if (key == "scheme.dag_clip_eps") {
    config.scheme.dag_clip_eps = parse_double_field(key, value);
  } else if (key == "scheme.dag_kl_coef") {
    config.scheme.dag_kl_coef = parse_double_field(key, value);
  } else if (key == "scheme.dag_lr") {
    config.scheme.dag_lr = parse_double_field(key, value);
  } else if (key == "scheme.dag_critic_lr") {
    config.scheme.dag_critic_lr = parse_double_field(key, value);
  } else if (key == "scheme.dag_period") {
    config.scheme.dag_period = parse_int_field(key, value);
  } else if (key == "run.seeds") {
    config.seeds = parse_seed_list(key, value);
  } else if (key == "run.rounds") {
    config.rounds = parse_int_field(key, value);
  } else if (key == "run.out") {
    config.out = value;
  } else {
    throw std::invalid_argument("config: unknown key " + key);
  }
}

struct SeedRows {
  std::uint64_t seed = 0;
  int rounds = 0;
  double final_j_mc = 0.0;
  double final_j_exact = 0.0;
  bool have_exact = false;
};

SeedRows read_rounds_csv(const std::string& path, std::uint64_t seed) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) ||
      trim(line) != "round,sequence,n_batches,j_mc,j_exact,alpha,alphas,kl,distilled")
    throw std::runtime_error("report: unexpected header in " + path);
  SeedRows rows;
  rows.seed = seed;
  std::string last;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) {
      last = line;
      ++rows.rounds;
    }
  }
  if (rows.rounds == 0) throw std::runtime_error("report: no data rows in " + path);
  std::vector<std::string> cells = split_on(trim(last), ',');
  if (cells.size() != 9)
    throw std::runtime_error("report: malformed row in " + path);
  rows.final_j_mc = parse_double(cells[3]);
  rows.have_exact = !cells[4].empty();
  if (rows.have_exact) rows.final_j_exact = parse_double(cells[4]);
  return rows;
}

/* Median wall time of one call per block, over timing blocks. */
template <typename F>
double time_blocks(int blocks, int per_block, F&& step) {
  std::vector<double> t(static_cast<std::size_t>(blocks));
  for (int b = 0; b < blocks; ++b) {
    double t0 = now_seconds();
    for (int i = 0; i < per_block; ++i) step();
    t[static_cast<std::size_t>(b)] = (now_seconds() - t0) / per_block;
  }
  return median_of(std::move(t));
}

int independent_decision(const MarkovGame& game, const PolicySet& set,
                         int state, Rng& rng) {
  int sink = 0;
  for (int agent = 0; agent < game.n_agents; ++agent) {
    int obs = game.observation[agent][state];
    sink += rng.categorical(set.independent[agent].table->probs(obs, 0));
  }
  return sink;
}

}  // namespace

MarkovGame GameSpec::build() const {
  if (builder == "chain")
    return build_dependency_chain_game(n_agents, coupling, seed, masked);
  if (builder == "random")
    return build_random_game(n_agents, n_states, n_actions, gamma, seed);
  if (builder == "file") return game_from_text(read_file(path));
  throw std::invalid_argument("GameSpec: unknown builder '" + builder + "'");
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw std::invalid_argument("config: run.seeds is empty");
  if (rounds < 1) throw std::invalid_argument("config: run.rounds must be >= 1");
  if (out.empty()) throw std::invalid_argument("config: run.out is empty");
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  ExperimentConfig config;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw std::invalid_argument("config: bad section on line " +
                                    std::to_string(line_no));
      section = trim(t.substr(1, t.size() - 2));
      if (section != "game" && section != "scheme" && section != "run")
        throw std::invalid_argument("config: unknown section [" + section + "]");
      continue;
    }
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected key = value on line " +
                                  std::to_string(line_no));
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (section.empty())
      throw std::invalid_argument("config: key '" + key + "' outside a section");
    apply_config_key(config, section + "." + key, value);
  }
  return config;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(read_file(path));
}

std::string resolve_output_path(const std::string& path) {
  const char* root = std::getenv("B2MAPO_OUT");
  if (root == nullptr || *root == '\0' || path.empty()) return path;
  if (fs::path(path).is_absolute()) return path;
  return (fs::path(root) / path).string();
}

namespace {

/* Output paths may point into directories that do not exist yet, notably
 * after a B2MAPO_OUT redirect. */
void ensure_parent_dir(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

}  // namespace

RunFiles run_experiment(const ExperimentConfig& config) {
  config.validate();
  MarkovGame game = config.game.build();
  config.scheme.validate(game.n_agents);
  fs::path root = resolve_output_path(config.out);

  RunFiles files;
  for (std::uint64_t seed : config.seeds) {
    fs::path dir = root / ("seed" + std::to_string(seed));
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
      throw std::runtime_error("cannot create output dir " + dir.string());

    Trainer trainer(game, config.scheme, seed);
    std::string rounds_csv =
        "round,sequence,n_batches,j_mc,j_exact,alpha,alphas,kl,distilled\n";
    std::string times_csv = "round,seconds\n";
    std::string curve_mc = "x,y\n";
    std::string curve_exact = "x,y\n";
    bool any_exact = false;

    for (int round = 0; round < config.rounds; ++round) {
      RoundReport rep = trainer.run_round();
      double alpha = 0.0;
      std::string alphas;
      for (std::size_t k = 0; k < rep.batches.size(); ++k) {
        alpha = std::max(alpha, rep.batches[k].joint_alpha);
        if (k) alphas += '|';
        alphas += format_double_12(rep.batches[k].joint_alpha);
      }
      rounds_csv += std::to_string(rep.round);
      rounds_csv += ',';
      rounds_csv += sequence_cell(rep.sequence);
      rounds_csv += ',';
      rounds_csv += std::to_string(rep.batches.size());
      rounds_csv += ',';
      rounds_csv += format_double_12(rep.j_mc);
      rounds_csv += ',';
      if (rep.have_exact) rounds_csv += format_double_12(rep.j_exact_after);
      rounds_csv += ',';
      rounds_csv += format_double_12(alpha);
      rounds_csv += ',';
      rounds_csv += alphas;
      rounds_csv += ',';
      rounds_csv += format_double_12(rep.distill_kl);
      rounds_csv += ',';
      rounds_csv += rep.distilled ? '1' : '0';
      rounds_csv += '\n';

      times_csv += std::to_string(rep.round);
      times_csv += ',';
      times_csv += format_double_12(rep.seconds);
      times_csv += '\n';

      curve_mc += std::to_string(rep.round);
      curve_mc += ',';
      curve_mc += format_double_12(rep.j_mc);
      curve_mc += '\n';
      if (rep.have_exact) {
        any_exact = true;
        curve_exact += std::to_string(rep.round);
        curve_exact += ',';
        curve_exact += format_double_12(rep.j_exact_after);
        curve_exact += '\n';
      }
    }

    std::string rounds_path = (dir / "rounds.csv").string();
    std::string times_path = (dir / "times.csv").string();
    std::string curve_path = (dir / "curve_j_mc.csv").string();
    write_file(rounds_path, rounds_csv);
    write_file(times_path, times_csv);
    write_file(curve_path, curve_mc);
    files.rounds_csv.push_back(rounds_path);
    files.times_csv.push_back(times_path);
    files.curve_csv.push_back(curve_path);
    if (any_exact) {
      std::string exact_path = (dir / "curve_j_exact.csv").string();
      write_file(exact_path, curve_exact);
      files.curve_csv.push_back(exact_path);
    }
  }
  return files;
}

std::vector<BenchRecord> run_bench(const BenchConfig& config) {
  MarkovGame game =
      build_dependency_chain_game(config.n_agents, config.coupling, config.seed);
  std::vector<BenchRecord> records;
  for (Mode mode : {Mode::mappo, Mode::b2mapo_dag, Mode::a2po}) {
    SchemeConfig scheme;
    scheme.mode = mode;
    scheme.n_episodes = config.n_episodes;
    scheme.horizon = config.horizon;
    Trainer trainer(game, scheme, config.seed);
    for (int r = 0; r < config.warmup; ++r) trainer.run_round();

    std::vector<double> seconds;
    std::vector<double> batches;
    seconds.reserve(static_cast<std::size_t>(config.rounds));
    for (int r = 0; r < config.rounds; ++r) {
      double t0 = now_seconds();
      RoundReport rep = trainer.run_round();
      seconds.push_back(now_seconds() - t0);
      batches.push_back(static_cast<double>(rep.sequence.batches.size()));
    }

    BenchRecord record;
    record.mode = mode_to_string(mode);
    record.n_agents = game.n_agents;
    record.batch_count = static_cast<int>(median_of(batches));
    record.train_seconds = median_of(seconds);

    const PolicySet& set = trainer.policies();
    Rng rng(derive_seed(config.seed, 0xbe7c));
    int state = 0;
    volatile int sink = 0;
    record.decide_cond_seconds =
        time_blocks(config.decision_blocks, config.decisions_per_block, [&] {
          sink = sink + set.sample_joint(game, state, rng)[0];
          state = (state + 1) % game.n_states;
        });
    record.decide_ind_seconds =
        time_blocks(config.decision_blocks, config.decisions_per_block, [&] {
          sink = sink + independent_decision(game, set, state, rng);
          state = (state + 1) % game.n_states;
        });
    records.push_back(std::move(record));
  }
  return records;
}

std::string bench_to_csv(const std::vector<BenchRecord>& records) {
  std::string out =
      "mode,n_agents,batches,train_seconds,decide_cond_seconds,decide_ind_seconds\n";
  for (const auto& r : records) {
    out += r.mode;
    out += ',';
    out += std::to_string(r.n_agents);
    out += ',';
    out += std::to_string(r.batch_count);
    out += ',';
    out += format_double_12(r.train_seconds);
    out += ',';
    out += format_double_12(r.decide_cond_seconds);
    out += ',';
    out += format_double_12(r.decide_ind_seconds);
    out += '\n';
  }
  return out;
}

std::string summarize_directory(const std::string& dir) {
  fs::path root = resolve_output_path(dir);
  if (!fs::exists(root))
    throw std::runtime_error("report: missing directory " + root.string());

  std::vector<std::pair<std::uint64_t, std::string>> seed_files;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    std::string name = entry.path().filename().string();
    if (name.rfind("seed", 0) != 0) continue;
    fs::path csv = entry.path() / "rounds.csv";
    if (!fs::exists(csv)) continue;
    long long seed = 0;
    try {
      seed = parse_int(name.substr(4));
    } catch (const std::exception&) {
      continue;
    }
    seed_files.emplace_back(static_cast<std::uint64_t>(seed), csv.string());
  }
  std::sort(seed_files.begin(), seed_files.end());
  fs::path bounds = root / "bounds.csv";
  bool have_bounds = fs::exists(bounds);
  if (seed_files.empty() && !have_bounds)
    throw std::runtime_error(
        "report: nothing to summarize under " + root.string() +
        " (expected seed*/rounds.csv or bounds.csv)");

  std::ostringstream out;
  out << "summary of " << root.string() << "\n";
  if (!seed_files.empty()) {
    std::vector<double> j_mc, j_exact;
    int rounds = 0;
    for (const auto& [seed, path] : seed_files) {
      SeedRows rows = read_rounds_csv(path, seed);
      rounds = rows.rounds;
      j_mc.push_back(rows.final_j_mc);
      out << "seed " << seed << ": final j_mc=" << format_double_12(rows.final_j_mc);
      if (rows.have_exact) {
        j_exact.push_back(rows.final_j_exact);
        out << " j_exact=" << format_double_12(rows.final_j_exact);
      }
      out << "\n";
    }
    out << "seeds: " << seed_files.size() << ", rounds per seed: " << rounds
        << "\n";
    out << "final j_mc: median=" << format_double_12(median_of(j_mc))
        << " iqr=" << format_double_12(iqr_of(j_mc)) << "\n";
    if (j_exact.size() == seed_files.size())
      out << "final j_exact: median=" << format_double_12(median_of(j_exact))
          << " iqr=" << format_double_12(iqr_of(j_exact)) << "\n";
  }
  if (have_bounds) {
    std::istringstream in(read_file(bounds.string()));
    std::string line;
    if (!std::getline(in, line) ||
        trim(line) != "statement,seed,lhs,rhs,slack,pass")
      throw std::runtime_error("report: unexpected header in " +
                               bounds.string());
    std::map<std::string, std::pair<int, int>> tally;
    int total = 0, fails = 0;
    while (std::getline(in, line)) {
      std::string t = trim(line);
      if (t.empty()) continue;
      std::vector<std::string> cells = split_on(t, ',');
      if (cells.size() != 6)
        throw std::runtime_error("report: malformed row in " + bounds.string());
      bool pass = cells[5] == "1";
      auto& bucket = tally[cells[0]];
      ++bucket.first;
      if (!pass) ++bucket.second;
      ++total;
      if (!pass) ++fails;
    }
    for (const auto& [statement, counts] : tally)
      out << "check " << statement << ": " << counts.first << " run, "
          << counts.second << " failed\n";
    out << "verify: " << (fails == 0 ? "PASS" : "FAIL") << " (" << total
        << " checks, " << fails << " failures)\n";
  }
  return out.str();
}

namespace {

int cmd_verify(std::uint64_t seed, bool quick, const std::string& out_path) {
  SuiteCounts counts;
  if (quick) {
    counts.subadditivity = 200;
    counts.offpolicy = 50;
    counts.drift = 25;
    counts.drift_max_t = 6;
    counts.single_chains = 12;
    counts.joint_chains = 12;
    counts.tightening = 8;
    counts.simultaneous = 50;
    counts.sequential = 25;
    counts.distill_seeds = 1;
  }
  std::vector<BoundReport> reports = run_bound_suite(counts, seed);

  std::vector<std::string> order;
  std::map<std::string, std::pair<int, int>> tally;
  std::map<std::string, double> min_slack;
  for (const auto& r : reports) {
    if (!tally.count(r.statement)) order.push_back(r.statement);
    auto& bucket = tally[r.statement];
    ++bucket.first;
    if (!r.pass) ++bucket.second;
    auto it = min_slack.find(r.statement);
    if (it == min_slack.end() || r.slack < it->second)
      min_slack[r.statement] = r.slack;
  }
  for (const std::string& statement : order) {
    const auto& bucket = tally[statement];
    std::printf("%-36s n=%6d fails=%4d min_slack=%.3e\n", statement.c_str(),
                bucket.first, bucket.second, min_slack[statement]);
  }
  std::string path = resolve_output_path(out_path);
  ensure_parent_dir(path);
  save_bound_reports(reports, path);
  bool ok = all_pass(reports);
  std::printf("%zu checks -> %s (written to %s)\n", reports.size(),
              ok ? "PASS" : "FAIL", path.c_str());
  return ok ? 0 : 1;
}

int cmd_train(const std::string& config_path) {
  ExperimentConfig config = load_experiment_config(config_path);
  RunFiles files = run_experiment(config);
  for (const std::string& f : files.rounds_csv) std::printf("wrote %s\n", f.c_str());
  for (const std::string& f : files.curve_csv) std::printf("wrote %s\n", f.c_str());
  for (const std::string& f : files.times_csv) std::printf("wrote %s\n", f.c_str());
  return 0;
}

int cmd_bench(const BenchConfig& config, const std::string& out_path) {
  std::vector<BenchRecord> records = run_bench(config);
  for (const auto& r : records)
    std::printf("%-12s agents=%d batches=%d train=%.6fs decide_cond=%.2eus "
                "decide_ind=%.2eus\n",
                r.mode.c_str(), r.n_agents, r.batch_count, r.train_seconds,
                r.decide_cond_seconds * 1e6, r.decide_ind_seconds * 1e6);
  std::string path = resolve_output_path(out_path);
  ensure_parent_dir(path);
  write_file(path, bench_to_csv(records));
  std::printf("written to %s\n", path.c_str());
  return 0;
}

int cmd_partition(const std::string& graph_path) {
  WeightedGraphFile graph = load_weighted_graph(graph_path);
  BatchSequence layered = layer_topological(to_dag(graph.edges, graph.n), graph.n);
  std::printf("agents: %d\n", graph.n);
  std::printf("layered: %s\n", layered.to_string().c_str());

  std::vector<std::pair<int, int>> undirected;
  undirected.reserve(graph.edges.size());
  for (const auto& e : graph.edges) undirected.emplace_back(e.from, e.to);
  IndependenceGraph ig = IndependenceGraph::from_edges(graph.n, undirected);
  BatchSequence greedy = min_batches_greedy(ig);
  std::printf("greedy: %s (%zu batches)\n", greedy.to_string().c_str(),
              greedy.batches.size());
  if (graph.n <= 10) {
    BatchSequence brute = min_batches_bruteforce(ig);
    std::printf("bruteforce: %s (%zu batches)\n", brute.to_string().c_str(),
                brute.batches.size());
    std::printf("agree: %s\n",
                brute.batches.size() == greedy.batches.size() ? "yes" : "no");
  } else {
    std::printf("bruteforce: skipped (n > 10)\n");
  }
  return 0;
}

int cmd_report(const std::string& dir) {
  std::string summary = summarize_directory(dir);
  std::fputs(summary.c_str(), stdout);
  return 0;
}

}  // namespace

int harness_main(int argc, const char* const* argv) {
  CLI::App app{"batch-by-batch multi-agent policy optimization harness"};
  app.require_subcommand(1);

  auto* verify = app.add_subcommand(
      "verify", "run the bound suite and write bounds.csv");
  std::uint64_t verify_seed = 0;
  bool verify_quick = false;
  std::string verify_out = "bounds.csv";
  verify->add_option("--seed", verify_seed, "suite master seed");
  verify->add_flag("--quick", verify_quick, "reduced trial counts");
  verify->add_option("--out", verify_out, "output csv path");

  auto* train = app.add_subcommand("train", "run a training experiment");
  std::string train_config;
  train->add_option("--config", train_config, "experiment config file")
      ->required();

  auto* bench = app.add_subcommand(
      "bench", "time update rounds and decisions per mode");
  BenchConfig bench_config;
  std::string bench_out = "bench.csv";
  bench->add_option("--agents", bench_config.n_agents, "number of agents");
  bench->add_option("--coupling", bench_config.coupling, "chain coupling");
  bench->add_option("--seed", bench_config.seed, "run seed");
  bench->add_option("--warmup", bench_config.warmup, "warm-up rounds");
  bench->add_option("--rounds", bench_config.rounds, "timed rounds");
  bench->add_option("--episodes", bench_config.n_episodes, "episodes per round");
  bench->add_option("--horizon", bench_config.horizon, "episode horizon");
  bench->add_option("--out", bench_out, "output csv path");

  auto* partition = app.add_subcommand(
      "partition", "layer and partition a weighted dependence graph");
  std::string graph_path;
  partition->add_option("--graph", graph_path, "graph file")->required();

  auto* report = app.add_subcommand("report", "summarize a run directory");
  std::string report_dir;
  report->add_option("--dir", report_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (verify->parsed()) return cmd_verify(verify_seed, verify_quick, verify_out);
    if (train->parsed()) return cmd_train(train_config);
    if (bench->parsed()) return cmd_bench(bench_config, bench_out);
    if (partition->parsed()) return cmd_partition(graph_path);
    if (report->parsed()) return cmd_report(report_dir);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}

}  // namespace b2mapo
