#pragma once

#include "rescbm/concept_bank.hpp"
#include "rescbm/data_io.hpp"
#include "rescbm/residual_trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace rescbm {

/// Fraction of exact matches. Throws on empty or unequal inputs.
double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth);

/// Concept Utilization Efficiency: 10000 * acc / (n_concepts * avg_letters).
double cue(double acc, std::size_t n_concepts, double avg_letters);

/// Exactly k indices per class, drawn without replacement; sorted ascending.
std::vector<std::size_t> few_shot_split(std::span<const std::size_t> labels, std::size_t n_classes, std::size_t k,
                                        std::uint64_t seed);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Per-class split with round(train_fraction * class size) samples in train (at least one
/// on each side when the class has two or more samples).
Split stratified_split(std::span<const std::size_t> labels, std::size_t n_classes, double train_fraction,
                       std::uint64_t seed);

/// Indices of 0..n-1 not in `taken` (which must be sorted).
std::vector<std::size_t> complement(std::size_t n, const std::vector<std::size_t>& taken);

struct OracleEntry {
  std::size_t candidate_index = 0;  // index into the candidate bank
  std::string token;
  double accuracy = 0.0;
};

/// Trains a PCBM on base + each single candidate not already in the base bank and ranks
/// candidates by validation accuracy (descending; ties by token so the ranking does not
/// depend on candidate storage order).
std::vector<OracleEntry> oracle_best_single_addition(const Dataset& train, const Dataset& validation,
                                                     const ConceptBank& base_bank, const ConceptBank& candidate_bank,
                                                     const TrainConfig& config);

/// Position of `token` in an oracle ranking, or ranking.size() when absent.
std::size_t oracle_rank(const std::vector<OracleEntry>& ranking, const std::string& token);

struct SnapRecord {
  std::size_t round = 0;
  std::string token;
  double cosine = 0.0;
  double accuracy_before = 0.0;
  double accuracy_after = 0.0;

  friend bool operator==(const SnapRecord&, const SnapRecord&) = default;
};

struct RunReport {
  std::string variant;  // "res-cbm", "pcbm-equivalent", ...
  double accuracy = 0.0;
  std::size_t n_concepts = 0;
  double avg_letters = 0.0;
  double cue = 0.0;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> config;
  std::vector<SnapRecord> snaps;

  friend bool operator==(const RunReport&, const RunReport&) = default;
};

/// Fills n_concepts (bank + residual vectors), avg_letters and cue from a model.
RunReport make_report(const ResidualModel& model, double accuracy, std::string variant,
                      std::map<std::string, std::string> config);

std::string format_report(const RunReport& report);
RunReport parse_report(const std::string& text, const std::string& source_name = "report");

/// Refuses incomplete or inconsistent reports (empty variant/config, cue not matching its fields).
void emit_report(const RunReport& report, const std::filesystem::path& path);
RunReport load_report(const std::filesystem::path& path);

std::string format_snap_history(const std::vector<SnapRecord>& snaps);
std::vector<SnapRecord> parse_snap_history(const std::string& text, const std::string& source_name);

struct FewShotPoint {
  std::size_t shots = 0;
  std::size_t train_size = 0;
  double accuracy = 0.0;
};

/// For each k: train a PCBM on few_shot_split(k) and score it on every remaining sample.
std::vector<FewShotPoint> few_shot_curve(const Dataset& data, const ConceptBank& bank,
                                         const std::vector<std::size_t>& shots, const TrainConfig& config);

std::string format_few_shot_csv(const std::vector<FewShotPoint>& points);

std::string format_trace_csv(const TrainTrace& trace);

}  // namespace rescbm
