#include <gtest/gtest.h>

#include <unistd.h>

#include <fstream>
#include <random>

#include "votacast/io/draws.hpp"
#include "votacast/pipeline.hpp"
#include "votacast/synthetic.hpp"

using namespace votacast;
using namespace votacast::pipeline;

namespace {

const fs::path kData = VOTACAST_DATA_DIR;

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("votacast_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::invalid_input;
}

json bundled_config() {
  return {{"inputs",
           {{"survey", (kData / "survey.csv").string()},
            {"census", (kData / "census.csv").string()},
            {"polls", (kData / "polls.csv").string()},
            {"results", (kData / "results.csv").string()},
            {"contingents", (kData / "contingents.csv").string()},
            {"history", (kData / "history.csv").string()}}},
          {"aliases", {{"IU", "Podemos"}, {"ERC", "others"}, {"DL", "others"}, {"PNV", "others"}, {"Bildu", "others"},
                       {"CC", "others"}}},
          {"target_election", "2015-12-20"}};
}

fundamental::Posterior random_fundamental(std::size_t chains, std::size_t per_chain) {
  const auto layout = fundamental::Layout::spanish(PartyCanon({"PSOE", "PP", "others"}), {8, 28});
  std::mt19937_64 rng(3);
  fundamental::Posterior post;
  post.layout = layout;
  post.chains = chains;
  for (std::size_t d = 0; d < chains * per_chain; ++d) post.draws.push_back(synthetic::draw_prior_params(layout, rng));
  return post;
}

polls::PollsPosterior random_polls() {
  polls::PollsPosterior post;
  post.canon = PartyCanon({"PSOE", "PP", "C's", "others"});
  post.pollsters = {"CIS", "Metroscopia, S.L."};
  post.elections = {"2011-11-20", "2015-12-20"};
  post.chains = 2;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z(0.0, 0.03);
  for (int d = 0; d < 6; ++d) {
    polls::PollsParams p;
    auto vec = [&] { return Vector((Vector(3) << z(rng), z(rng), z(rng)).finished()); };
    auto cov = [&] {
      Matrix a = Matrix::NullaryExpr(3, 3, [&] { return z(rng); });
      return Matrix(a * a.transpose());
    };
    for (const auto& j : post.pollsters) {
      p.gamma[j] = vec();
      p.hypers.sigma_pollster[j] = cov();
    }
    for (const auto& e : post.elections) {
      p.delta[e] = vec();
      p.epsilon[e] = vec();
    }
    p.hypers.sigma_gamma = cov();
    p.hypers.sigma_delta = cov();
    p.hypers.sigma_epsilon = cov();
    post.draws.push_back(p);
  }
  return post;
}

}  // namespace

TEST(Draws, FundamentalRoundTripIsBitExact) {
  const auto dir = scratch("fund_draws");
  const auto post = random_fundamental(2, 5);
  write(dir / "d.csv", io::fundamental_draws_csv(post));
  const auto back = io::read_fundamental_draws((dir / "d.csv").string(), post.layout);
  ASSERT_EQ(back.draws.size(), post.draws.size());
  EXPECT_EQ(back.chains, 2u);
  for (std::size_t d = 0; d < post.draws.size(); ++d) EXPECT_EQ(back.draws[d].flatten(), post.draws[d].flatten());
  EXPECT_EQ(io::fundamental_draws_csv(back), io::fundamental_draws_csv(post));
}

TEST(Draws, PollsRoundTripIsBitExact) {
  const auto dir = scratch("polls_draws");
  const auto post = random_polls();
  const std::string text = io::polls_draws_csv(post);
  EXPECT_NE(text.find("\"gamma[Metroscopia, S.L.,PSOE]\""), std::string::npos);
  write(dir / "d.csv", text);
  const auto back = io::read_polls_draws((dir / "d.csv").string(), post.canon, post.pollsters, post.elections);
  ASSERT_EQ(back.draws.size(), 6u);
  EXPECT_EQ(back.chains, 2u);
  for (std::size_t d = 0; d < 6; ++d) {
    EXPECT_EQ(io::flatten_polls(back.draws[d], 3, post.pollsters, post.elections),
              io::flatten_polls(post.draws[d], 3, post.pollsters, post.elections));
  }
}

TEST(Draws, MalformedFilesAreRejected) {
  const auto dir = scratch("bad_draws");
  const auto post = random_fundamental(2, 2);
  const std::string good = io::fundamental_draws_csv(post);
  auto load = [&](const std::string& text) {
    write(dir / "d.csv", text);
    return kind_of([&] { io::read_fundamental_draws((dir / "d.csv").string(), post.layout); });
  };
  // Drop the last row: the final draw is incomplete.
  std::string truncated = good.substr(0, good.rfind('\n', good.size() - 2) + 1);
  EXPECT_EQ(load(truncated), ErrorKind::validation);
  EXPECT_EQ(load("draw,chain,name,value\n"), ErrorKind::validation);
  EXPECT_EQ(load(good + "3,1,alpha[unknown],0.5\n"), ErrorKind::validation);
  const std::string first = good.substr(good.find('\n') + 1, good.find('\n', good.find('\n') + 1) - good.find('\n'));
  EXPECT_EQ(load(good + first), ErrorKind::validation);
  EXPECT_EQ(load(""), ErrorKind::validation);
}

TEST(Config, RelativePathsResolveAgainstTheConfigFile) {
  const auto dir = scratch("config_paths");
  fs::create_directories(dir / "in");
  for (const auto* f : {"s.csv", "c.csv", "p.csv", "r.csv", "k.csv", "h.csv"}) write(dir / "in" / f, "");
  write(dir / "run.json", R"({"inputs": {"survey": "in/s.csv", "census": "in/c.csv", "polls": "in/p.csv",
    "results": "in/r.csv", "contingents": "in/k.csv", "history": "in/h.csv"},
    "target_election": "2015-12-20", "output_dir": "out", "seed": 7})");
  const auto c = load_config((dir / "run.json").string());
  EXPECT_EQ(fs::path(c.inputs.survey), (dir / "in" / "s.csv").lexically_normal());
  EXPECT_EQ(fs::path(c.output_dir), (dir / "out").lexically_normal());
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.fundamental_sampler.chains, 4);
  EXPECT_EQ(c.simulations, 4000u);

  const auto o = load_config((dir / "run.json").string(), 99, "/tmp/elsewhere");
  EXPECT_EQ(o.seed, 99u);
  EXPECT_EQ(o.output_dir, "/tmp/elsewhere");
}

TEST(Config, ErrorsAreClassified) {
  auto parse = [](json j) { return kind_of([&] { parse_config(j, "/"); }); };
  json j = bundled_config();
  EXPECT_NO_THROW(parse_config(j, "/"));

  auto with = [&](const char* key, json v) {
    json k = j;
    k[key] = v;
    return k;
  };
  EXPECT_EQ(parse(with("colour", "red")), ErrorKind::configuration);
  EXPECT_EQ(parse(with("inflation_factor", 0.5)), ErrorKind::configuration);
  EXPECT_EQ(parse(with("threshold", 1.0)), ErrorKind::configuration);
  EXPECT_EQ(parse(with("target_election", "20/12/2015")), ErrorKind::configuration);
  EXPECT_EQ(parse(with("simulations", "many")), ErrorKind::configuration);
  EXPECT_EQ(parse(with("parameterization", "skewed")), ErrorKind::configuration);
  EXPECT_EQ(parse(with("fundamental_sampler", {{"chains", 0}})), ErrorKind::configuration);
  EXPECT_EQ(parse(with("aliases", {{"IU", "Sumar"}})), ErrorKind::configuration);

  json missing = j;
  missing["inputs"]["polls"] = "/nonexistent/polls.csv";
  EXPECT_EQ(parse(missing), ErrorKind::validation);
  missing["inputs"].erase("polls");
  EXPECT_EQ(parse(missing), ErrorKind::configuration);

  const auto dir = scratch("config_syntax");
  write(dir / "bad.json", "{\"inputs\": ");
  EXPECT_EQ(kind_of([&] { load_config((dir / "bad.json").string()); }), ErrorKind::configuration);
}

TEST(Config, EchoReparsesToTheSameConfig) {
  json j = bundled_config();
  j["simulations"] = 1234;
  j["polls_prior"] = {{"scale", 0.07}};
  j["fundamental_sampler"] = {{"chains", 3}, {"iterations", 50}};
  const auto c = parse_config(j, "/");
  const auto echo = to_json(c);
  EXPECT_EQ(to_json(parse_config(echo, "/")), echo);
  EXPECT_EQ(echo["simulations"], 1234);
  EXPECT_EQ(echo["polls_prior"]["scale"], 0.07);
}

TEST(Stages, DownstreamStageNamesTheMissingArtifact) {
  const auto out = scratch("dependency");
  auto c = parse_config(bundled_config(), "/");
  c.output_dir = out.string();
  for (const auto* stage : {"synthesize", "allocate", "report"}) {
    try {
      run_stage(c, stage);
      ADD_FAILURE() << stage;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::dependency) << stage;
      EXPECT_NE(std::string(e.what()).find("votacast "), std::string::npos) << e.what();
    }
  }
  EXPECT_EQ(kind_of([&] { run_stage(c, "forecast"); }), ErrorKind::configuration);
}

TEST(Stages, ExitCodes) {
  EXPECT_EQ(exit_code(ErrorKind::diagnostic), 3);
  EXPECT_EQ(exit_code(ErrorKind::numerical), 3);
  EXPECT_EQ(exit_code(ErrorKind::init), 3);
  for (auto k : {ErrorKind::validation, ErrorKind::configuration, ErrorKind::dependency, ErrorKind::io,
                 ErrorKind::alignment, ErrorKind::invalid_input})
    EXPECT_EQ(exit_code(k), 2);
}

TEST(Stages, BenchmarkIsReproducibleAndUsesTheHistoryTable) {
  auto c = parse_config(bundled_config(), "/");
  std::vector<std::string> texts;
  for (const auto* name : {"bench_a", "bench_b"}) {
    c.output_dir = scratch(name).string();
    const auto r = run_stage(c, "benchmark");
    EXPECT_FALSE(r.diagnostic_failure);
    texts.push_back(io::read_file(c.out("benchmark_predictions.csv").string()) +
                    io::read_file(c.out("benchmark_coefficients.csv").string()));
  }
  EXPECT_EQ(texts[0], texts[1]);
  const auto t = io::read_csv(c.out("benchmark_predictions.csv").string());
  bool found = false;
  for (const auto& row : t.rows)
    if (row.fields[0] == "fundamental" && row.fields[1] == "2015-12-20" && row.fields[2] == "PP") {
      found = true;
      EXPECT_NEAR(*io::parse_double(row.fields[4]), 0.331, 0.001);
    }
  EXPECT_TRUE(found);
}

TEST(Report, SeatHistogramSvgIsClosedAndLabelled) {
  const std::vector<std::string> parties{"A", "B&C"};
  const std::vector<std::map<int, double>> hist{{{10, 0.25}, {11, 0.75}}, {{5, 1.0}}};
  const auto svg = seat_histogram_svg(parties, hist);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_NE(svg.find(">A<"), std::string::npos);
  EXPECT_NE(svg.find("A 11 seats: 0.75"), std::string::npos);
  EXPECT_NE(svg.find(">B&amp;C<"), std::string::npos);
}
