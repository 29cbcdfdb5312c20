#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "hetsyn/cli.hpp"
#include "support/planted.hpp"
#include "support/tempdir.hpp"

namespace hetsyn {
namespace {

namespace fs = std::filesystem;
using hetsyn::testing::slurp;

struct Result {
  int code = 0;
  std::string out, err;

  fs::path run_dir() const {
    const auto at = out.find("run_dir=");
    EXPECT_NE(at, std::string::npos) << out << err;
    auto line = out.substr(at + 8);
    return line.substr(0, line.find('\n'));
  }
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "hetsyn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

/// Toy corpus on disk plus a configuration file sized for it.
struct Workspace {
  hetsyn::testing::TempDir dir{"cli"};
  testing::PlantedCorpus corpus;
  std::string config;

  Workspace() {
    testing::PlantedSpec s;
    s.drugs = 8;
    s.proteins = 8;
    s.diseases = 2;
    s.cells = 2;
    s.triples = 30;
    s.dims = {4, 4, 3};
    s.proteins_per_cell = 3;
    s.ddi_pairs = 4;
    s.ppi = 4;
    corpus = testing::make_planted(s);
    corpus.write_files(dir.path());
    const auto p = [&](const char* name) { return dir.file(name); };
    config = dir.write("run.cfg",
                       "# toy setup\n"
                       "entities = " + p("entities.tsv") + "\n"
                       "edges = " + p("edges.tsv") + "\n"
                       "embeddings.drug = " + p("drug_emb.tsv") + "\n"
                       "embeddings.protein = " + p("protein_emb.tsv") + "\n"
                       "embeddings.disease = " + p("disease_emb.tsv") + "\n"
                       "expression = " + p("expression.tsv") + "\n"
                       "triples = " + p("triples.tsv") + "\n"
                       "dim.drug = 4\ndim.protein = 4\ndim.disease = 3\n"
                       "width = 6\ngat_heads = 2,3,2\nhead_hidden = 5\n"
                       "predictor.encoder_heads = 2\npredictor.joint_heads = 2\npredictor.joint_blocks = 1\n"
                       "predictor.mlp_hidden = 4\n"
                       "dist_threshold = 1\n"
                       "candidate_k = 3\nepochs = 3\nlr = 1e-3\nbatch = 8\npretrain_epochs = 3\nfolds = 3\n"
                       "seed = 11\n");
  }

  std::vector<std::string> args(const std::string& command, const std::string& root,
                                std::vector<std::string> extra = {}) const {
    std::vector<std::string> a = {command, "-c", config, "--run-root", dir.file(root)};
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  }
};

TEST(Cli, HelpListsKeysAndPublishedSettings) {
  const auto r = run_cli({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("conf_threshold = 0.8"), std::string::npos);
  EXPECT_NE(r.out.find("[published setting]"), std::string::npos);
  EXPECT_NE(r.out.find("--set"), std::string::npos);
}

TEST(Cli, EvaluateFixture) {
  hetsyn::testing::TempDir dir("cli-eval");
  const auto scores = dir.write("s.tsv", "score\tlabel\n0.8\t1\n0.4\t1\n0.6\t0\n0.2\t0\n");
  const auto r = run_cli({"evaluate", "--set", "scores=" + scores, "--run-root", dir.file("runs")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = Json::parse(slurp(r.run_dir() / "metrics.json"));
  EXPECT_EQ(m.at("au_roc").get<double>(), 0.75);
  EXPECT_EQ(m.at("n").get<int>(), 4);
  EXPECT_TRUE(fs::exists(r.run_dir() / "config.resolved"));
}

TEST(Cli, UnknownKeyFailsBeforeWritingAnything) {
  hetsyn::testing::TempDir dir("cli-unknown");
  const auto r = run_cli({"evaluate", "--set", "no_such_key=1", "--run-root", dir.file("runs")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error module=cli code=ConfigError"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("no_such_key"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir.file("runs")));

  const auto cfg = dir.write("bad.cfg", "seed = 1\n\nbogus = 2\n");
  const auto f = run_cli({"evaluate", "-c", cfg, "--run-root", dir.file("runs")});
  EXPECT_EQ(f.code, 2);
  EXPECT_NE(f.err.find("bad.cfg:3"), std::string::npos) << f.err;
  EXPECT_FALSE(fs::exists(dir.file("runs")));
}

TEST(Cli, MissingOrAbsentPathsAreConfigErrors) {
  hetsyn::testing::TempDir dir("cli-paths");
  const auto a = run_cli({"train", "--run-root", dir.file("runs")});
  EXPECT_EQ(a.code, 2);
  EXPECT_NE(a.err.find("needs 'entities'"), std::string::npos) << a.err;
  const auto b = run_cli({"evaluate", "--set", "scores=" + dir.file("nope.tsv"), "--run-root", dir.file("runs")});
  EXPECT_EQ(b.code, 2);
  EXPECT_NE(b.err.find("does not exist"), std::string::npos) << b.err;
  const auto c = run_cli({"evaluate", "--set", "seed=abc", "--run-root", dir.file("runs")});
  EXPECT_EQ(c.code, 2) << c.err;
  EXPECT_FALSE(fs::exists(dir.file("runs")));
}

TEST(Cli, RuntimeErrorsExitOne) {
  hetsyn::testing::TempDir dir("cli-runtime");
  const auto scores = dir.write("s.tsv", "score\tlabel\n0.8\tmaybe\n");
  const auto r = run_cli({"evaluate", "--set", "scores=" + scores, "--run-root", dir.file("runs")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("code=ParseError"), std::string::npos) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST(Cli, IngestAndBuildGraphReports) {
  Workspace w;
  const auto a = run_cli(w.args("ingest", "runs"));
  ASSERT_EQ(a.code, 0) << a.err;
  const auto ingest = Json::parse(slurp(a.run_dir() / "ingest_report.json"));
  EXPECT_EQ(ingest.at("drug").at("entities").get<int>(), 8);
  EXPECT_EQ(ingest.at("protein").at("embeddings_attached").get<int>(), 8);
  EXPECT_EQ(ingest.at("cell_lines").get<int>(), 2);

  const auto b = run_cli(w.args("build-graph", "runs"));
  ASSERT_EQ(b.code, 0) << b.err;
  const auto graph = Json::parse(slurp(b.run_dir() / "graph_report.json"));
  EXPECT_EQ(graph.at("nodes").at("protein").get<int>(), 8);
  EXPECT_EQ(graph.at("graph_hash").get<std::string>().size(), 16u);
  EXPECT_EQ(graph.at("similarity_pairs_evaluated").get<int>(), 28);
}

TEST(Cli, TrainIsByteIdenticalAcrossRuns) {
  Workspace w;
  const auto a = run_cli(w.args("train", "first"));
  ASSERT_EQ(a.code, 0) << a.err;
  const auto b = run_cli(w.args("train", "second"));
  ASSERT_EQ(b.code, 0) << b.err;
  for (const char* f : {"metrics.json", "model.ckpt", "predictions.tsv", "train_report.json", "config.resolved"}) {
    ASSERT_TRUE(fs::exists(a.run_dir() / f)) << f;
    EXPECT_EQ(slurp(a.run_dir() / f) == slurp(b.run_dir() / f), std::string(f) != "config.resolved") << f;
  }
  const auto resolved = slurp(a.run_dir() / "config.resolved");
  EXPECT_NE(resolved.find("seed = 11\n"), std::string::npos);
  EXPECT_NE(resolved.find("conf_threshold = 0.8\n"), std::string::npos);
  // The run directory name carries the config hash and the seed.
  EXPECT_NE(a.run_dir().filename().string().find("-s11"), std::string::npos);

  const auto c = run_cli(w.args("train", "third", {"--set", "seed=12"}));
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_NE(slurp(a.run_dir() / "model.ckpt"), slurp(c.run_dir() / "model.ckpt"));

  const auto model = SynergyModel<double>::load((a.run_dir() / "model.ckpt").string());
  EXPECT_EQ(model.config().width, 6u);
  const auto report = Json::parse(slurp(a.run_dir() / "train_report.json"));
  EXPECT_EQ(report.at("loss_curve").size(), 3u);
}

TEST(Cli, NoPredictiveRunAddsNoPseudoEdges) {
  Workspace w;
  const auto r = run_cli(w.args("train", "runs", {"--set", "no_predictive=true", "--set", "tau_dti=0"}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = Json::parse(slurp(r.run_dir() / "train_report.json"));
  for (const auto& n : report.at("pseudo_edges")) EXPECT_EQ(n.get<int>(), 0);
  EXPECT_FALSE(report.at("aux_dti").get<bool>());
}

TEST(Cli, PretrainedPredictorFeedsTraining) {
  Workspace w;
  const auto p = run_cli(w.args("pretrain-dti", "runs"));
  ASSERT_EQ(p.code, 0) << p.err;
  const auto report = Json::parse(slurp(p.run_dir() / "pretrain_report.json"));
  EXPECT_EQ(report.at("loss_curve").size(), 3u);
  const auto ckpt = (p.run_dir() / "dti.ckpt").string();
  const auto again = run_cli(w.args("pretrain-dti", "again"));
  EXPECT_EQ(slurp(ckpt), slurp(again.run_dir() / "dti.ckpt"));

  const auto t = run_cli(w.args("train", "runs", {"--set", "dti_checkpoint=" + ckpt, "--set", "epochs=0"}));
  ASSERT_EQ(t.code, 0) << t.err;
  auto model = SynergyModel<double>::load((t.run_dir() / "model.ckpt").string());
  auto pre = EdgePredictor<double>::load(ckpt);
  EXPECT_EQ(model.dti().parameters().front()->value, pre.parameters().front()->value);

  const auto bad = run_cli(w.args("train", "runs", {"--set", "dti_checkpoint=" + ckpt, "--set",
                                                    "predictor.joint_blocks=2"}));
  EXPECT_EQ(bad.code, 2);
}

TEST(Cli, CrossValidateAndSelfTrain) {
  Workspace w;
  const auto cv = run_cli(w.args("cross-validate", "runs", {"--set", "epochs=1"}));
  ASSERT_EQ(cv.code, 0) << cv.err;
  const auto report = Json::parse(slurp(cv.run_dir() / "cv_report.json"));
  EXPECT_EQ(report.at("folds").size(), 3u);
  EXPECT_EQ(report.at("assignment").size(), w.corpus.triples.size());

  const auto st = run_cli(w.args("self-train", "runs", {"--set", "epochs=1", "--set", "max_rounds=2"}));
  ASSERT_EQ(st.code, 0) << st.err;
  const auto s = Json::parse(slurp(st.run_dir() / "self_train_report.json"));
  EXPECT_EQ(s.at("heldout").get<int>(), 6);
  EXPECT_LE(s.at("rounds").get<int>(), 2);
  EXPECT_TRUE(fs::exists(st.run_dir() / "rounds.jsonl"));
  EXPECT_TRUE(fs::exists(st.run_dir() / "metrics.json"));

  const auto off = run_cli(w.args("self-train", "off", {"--set", "epochs=1", "--set", "no_self_train=true"}));
  ASSERT_EQ(off.code, 0) << off.err;
  EXPECT_EQ(Json::parse(slurp(off.run_dir() / "self_train_report.json")).at("rounds").get<int>(), 0);
}

TEST(Cli, InferHandlesKnownAndUnseenDrugs) {
  Workspace w;
  const auto t = run_cli(w.args("train", "runs", {"--set", "epochs=1"}));
  ASSERT_EQ(t.code, 0) << t.err;
  const auto model = (t.run_dir() / "model.ckpt").string();
  const auto queries = w.dir.write("q.tsv", "drug_a\tdrug_b\tcell_id\nD0\tD1\tC0\nNEWDRUG\tD2\tC1\n");
  const auto emb = w.dir.write("qe.tsv", "id\tvalues\nNEWDRUG\t" + testing::join_values(w.corpus.embedding.at("D3")) + "\n");
  const auto r = run_cli(w.args("infer", "runs", {"--set", "model=" + model, "--set", "queries=" + queries,
                                                  "--set", "query_embeddings=" + emb}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto table = tsv::read_table((r.run_dir() / "predictions.tsv").string());
  ASSERT_EQ(table.rows.size(), 2u);
  const auto prov = *table.column("provenance");
  EXPECT_EQ(table.rows[0][prov], "graph");
  EXPECT_EQ(table.rows[1][prov].rfind("transient:NEWDRUG|edges=", 0), 0u);
  EXPECT_NE(table.rows[1][prov].find("DrugSimilarity(NEWDRUG,D3)"), std::string::npos) << table.rows[1][prov];

  const auto missing = w.dir.write("q2.tsv", "drug_a\tdrug_b\tcell_id\nGHOST\tD2\tC1\n");
  const auto m = run_cli(w.args("infer", "runs", {"--set", "model=" + model, "--set", "queries=" + missing}));
  EXPECT_EQ(m.code, 1);
  EXPECT_NE(m.err.find("code=MissingEmbedding"), std::string::npos) << m.err;
}

TEST(Cli, SinglePrecisionRuns) {
  Workspace w;
  const auto r = run_cli(w.args("train", "runs", {"--set", "precision=32"}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = Json::parse(slurp(r.run_dir() / "metrics.json"));
  EXPECT_TRUE(m.at("au_roc").is_number());
}

}  // namespace
}  // namespace hetsyn
