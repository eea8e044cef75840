#include "rescbm/error.hpp"
#include "rescbm/evaluation.hpp"
#include "rescbm/keyvalue.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

using namespace rescbm;

namespace {

std::vector<std::size_t> labels_with_counts(const std::vector<std::size_t>& counts) {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < counts.size(); ++c) out.insert(out.end(), counts[c], c);
  std::mt19937_64 rng(1);
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

RunReport sample_report() {
  RunReport r;
  r.variant = "res-cbm";
  r.accuracy = 0.8803;
  r.n_concepts = 247;
  r.avg_letters = 7.0;
  r.cue = cue(r.accuracy, r.n_concepts, r.avg_letters);
  r.seed = 42;
  r.config = {{"alpha", "0.1"}, {"epochs", "100"}};
  r.snaps = {{0, "nectar", 0.93, 0.8, 0.81}, {1, "long, thin beak", 0.71, 0.81, 0.8125}};
  return r;
}

TrainConfig quick(std::size_t epochs = 60) {
  TrainConfig c;
  c.residual_count = 0;
  c.learning_rate = 1e-2;
  c.epochs = epochs;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("accuracy") {
  const std::vector<std::size_t> t{0, 1, 2, 1};
  CHECK(accuracy(t, t) == 1.0);
  CHECK(accuracy(std::vector<std::size_t>{1, 2, 0, 0}, t) == 0.0);
  CHECK(accuracy(std::vector<std::size_t>{0, 1, 2, 0}, t) == 0.75);
  CHECK_THROWS_AS(accuracy(std::vector<std::size_t>{}, std::vector<std::size_t>{}), ValidationError);
  CHECK_THROWS_AS(accuracy(std::vector<std::size_t>{0}, t), ValidationError);
}

TEST_CASE("concept utilization efficiency") {
  CHECK(std::abs(cue(0.8044, 175, 9) - 5.1073) <= 5e-5);
  CHECK(std::abs(cue(0.8489, 100, 27) - 3.1441) <= 5e-5);
  CHECK(std::abs(cue(0.8803, 237 + 10, 7) - 5.0914) <= 5e-5);
  CHECK(cue(0.0, 17, 3.5) == 0.0);
  CHECK(cue(0.5, 10, 2.0) == doctest::Approx(10000.0 * 0.5 / 20.0));
  CHECK(cue(0.9, 10, 2.0) > cue(0.8, 10, 2.0));
  CHECK(cue(0.9, 10, 2.0) > cue(0.9, 11, 2.0));
  CHECK(cue(0.9, 10, 2.0) > cue(0.9, 10, 2.5));
  CHECK_THROWS_AS(cue(0.5, 0, 2.0), ValidationError);
  CHECK_THROWS_AS(cue(0.5, 3, 0.0), ValidationError);
  CHECK_THROWS_AS(cue(1.5, 3, 2.0), ValidationError);
}

TEST_CASE("few-shot split") {
  const auto labels = labels_with_counts({5, 3, 8, 4, 6, 3, 7, 9, 3, 5});
  const auto one = few_shot_split(labels, 10, 1, 7);
  CHECK(one.size() == 10);
  std::set<std::size_t> classes;
  for (std::size_t i : one) classes.insert(labels[i]);
  CHECK(classes.size() == 10);
  CHECK(std::is_sorted(one.begin(), one.end()));

  const auto three = few_shot_split(labels, 10, 3, 7);
  CHECK(three.size() == 30);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) CHECK(std::binary_search(three.begin(), three.end(), i));
  }
  CHECK(few_shot_split(labels, 10, 3, 7) == three);
  CHECK(few_shot_split(labels, 10, 3, 8) != three);
  CHECK_THROWS_AS(few_shot_split(labels, 10, 4, 7), ValidationError);
  CHECK(few_shot_split(labels, 10, 0, 7).empty());

  std::vector<std::size_t> per_class(10, 0);
  for (std::size_t i : few_shot_split(labels, 10, 2, 9)) ++per_class[labels[i]];
  CHECK(per_class == std::vector<std::size_t>(10, 2));
}

TEST_CASE("stratified split") {
  const auto labels = labels_with_counts({10, 5, 2, 1});
  const Split s = stratified_split(labels, 4, 0.8, 3);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.validation.begin(), s.validation.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expected(labels.size());
  std::iota(expected.begin(), expected.end(), std::size_t{0});
  CHECK(all == expected);
  std::map<std::size_t, std::size_t> tr;
  for (std::size_t i : s.train) ++tr[labels[i]];
  CHECK(tr[0] == 8);
  CHECK(tr[1] == 4);
  CHECK(tr[2] == 1);
  CHECK(tr[3] == 1);
  CHECK_THROWS_AS(stratified_split(labels, 4, 1.0, 3), ValidationError);
  CHECK(complement(6, {1, 4}) == std::vector<std::size_t>{0, 2, 3, 5});
}

TEST_CASE("oracle ranking") {
  SyntheticSpec spec;
  spec.n_planted = 1;
  spec.seed = 21;
  const SyntheticTask task = generate_synthetic_task(spec);
  const Dataset all = task.dataset();
  const Split s = stratified_split(all.labels, all.n_classes, 0.5, 21);
  const Dataset train = all.subset(s.train);
  const Dataset val = all.subset(s.validation);
  const auto ranking = oracle_best_single_addition(train, val, task.base_bank(), task.candidate_bank, quick());
  CHECK(ranking.size() == task.candidate_bank.size() - task.base_bank().size());
  for (std::size_t i = 1; i < ranking.size(); ++i) CHECK(ranking[i - 1].accuracy >= ranking[i].accuracy);
  const std::string planted = task.candidate_bank.tokens()[task.planted_missing[0]];
  CHECK(oracle_rank(ranking, planted) == 0);
  CHECK(oracle_rank(ranking, "not a token") == ranking.size());

  // Candidate storage order does not change the ranking.
  std::vector<std::size_t> rev(task.candidate_bank.size());
  std::iota(rev.rbegin(), rev.rend(), std::size_t{0});
  const auto again =
      oracle_best_single_addition(train, val, task.base_bank(), task.candidate_bank.subset(rev), quick());
  REQUIRE(again.size() == ranking.size());
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    CHECK(again[i].token == ranking[i].token);
    CHECK(again[i].accuracy == ranking[i].accuracy);
  }
}

TEST_CASE("oracle spread without planted concepts") {
  SyntheticSpec spec;
  spec.n_planted = 0;
  spec.seed = 22;
  const SyntheticTask task = generate_synthetic_task(spec);
  const Dataset all = task.dataset();
  const Split s = stratified_split(all.labels, all.n_classes, 0.5, 22);
  const auto ranking = oracle_best_single_addition(all.subset(s.train), all.subset(s.validation), task.base_bank(),
                                                   task.candidate_bank, quick());
  const double spread = ranking.front().accuracy - ranking.back().accuracy;
  MESSAGE("oracle accuracy spread without planted concepts: " << spread);
  // 200 validation samples: binomial noise across 33 candidates spans roughly this much.
  CHECK(spread <= 0.1);
}

TEST_CASE("report text round trip") {
  const RunReport r = sample_report();
  const RunReport back = parse_report(format_report(r));
  CHECK(back == r);

  const auto dir = testing::scratch_dir("report");
  emit_report(r, dir / "r.txt");
  CHECK(load_report(dir / "r.txt") == r);
  CHECK(std::abs(load_report(dir / "r.txt").cue - 5.0914) <= 5e-5);
}

TEST_CASE("incomplete reports are refused") {
  const auto dir = testing::scratch_dir("report_bad");
  RunReport r = sample_report();
  r.variant.clear();
  CHECK_THROWS_AS(emit_report(r, dir / "a.txt"), ValidationError);
  r = sample_report();
  r.config.clear();
  CHECK_THROWS_AS(emit_report(r, dir / "b.txt"), ValidationError);
  r = sample_report();
  r.cue += 0.01;
  CHECK_THROWS_AS(emit_report(r, dir / "c.txt"), ValidationError);
  CHECK_FALSE(std::filesystem::exists(dir / "a.txt"));

  std::string text = format_report(sample_report());
  const auto pos = text.find("accuracy = ");
  text.erase(pos, text.find('\n', pos) - pos + 1);
  CHECK_THROWS_AS(parse_report(text), FormatError);

  std::string no_section = format_report(sample_report());
  no_section = no_section.substr(0, no_section.find("[snaps]"));
  CHECK_THROWS_AS(parse_report(no_section), FormatError);
}

TEST_CASE("snap history round trip") {
  const auto snaps = sample_report().snaps;
  CHECK(parse_snap_history(format_snap_history(snaps), "s") == snaps);
  CHECK(parse_snap_history(format_snap_history({}), "s").empty());
  CHECK_THROWS_AS(parse_snap_history("", "s"), FormatError);
  CHECK_THROWS_AS(parse_snap_history("round,cosine,accuracy_before,accuracy_after,token\n1,2\n", "s"), FormatError);
}

TEST_CASE("make_report counts residual vectors as concepts") {
  std::mt19937_64 rng(4);
  const ConceptBank bank = build_bank({"red", "leg", "nectar"}, EmbeddingMatrix(testing::random_matrix(3, 5, rng), false));
  TrainConfig c = quick();
  c.residual_count = 2;
  const ResidualModel m = init_residual_model(bank, 3, c);
  const RunReport r = make_report(m, 0.5, "res-cbm", {{"k", "v"}});
  CHECK(r.n_concepts == 5);
  CHECK(r.avg_letters == 4.0);
  CHECK(r.cue == doctest::Approx(cue(0.5, 5, 4.0)));
  CHECK(r.seed == c.seed);
}

TEST_CASE("few-shot curve trains on k samples per class") {
  SyntheticSpec spec;
  spec.n_samples = 300;
  spec.seed = 5;
  const SyntheticTask task = generate_synthetic_task(spec);
  const Dataset d = task.dataset();
  const auto curve = few_shot_curve(d, task.base_bank(), {1, 2, 4}, quick(30));
  REQUIRE(curve.size() == 3);
  CHECK(curve[0].train_size == 4);
  CHECK(curve[1].train_size == 8);
  CHECK(curve[2].train_size == 16);
  for (const auto& p : curve) {
    CHECK(p.accuracy >= 0.0);
    CHECK(p.accuracy <= 1.0);
  }
  const std::string csv = format_few_shot_csv(curve);
  CHECK(csv.rfind("shots,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("trace CSV has one row per epoch") {
  TrainTrace t;
  t.pass1_loss = {1.0, 0.5};
  t.pass2_loss = {0.9, 0.4};
  t.validation_accuracy = {0.5, 0.75};
  const std::string csv = format_trace_csv(t);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
