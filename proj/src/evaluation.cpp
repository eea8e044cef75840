#include "rescbm/evaluation.hpp"

#include "rescbm/error.hpp"
#include "rescbm/keyvalue.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace rescbm {

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth) {
  if (predicted.empty()) throw ValidationError("accuracy: empty input");
  if (predicted.size() != truth.size()) throw ValidationError("accuracy: length mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double cue(double acc, std::size_t n_concepts, double avg_letters) {
  if (n_concepts == 0 || !(avg_letters > 0.0)) throw ValidationError("cue: zero denominator");
  if (!(acc >= 0.0 && acc <= 1.0)) throw ValidationError("cue: accuracy outside [0, 1]");
  return 10000.0 * acc / (static_cast<double>(n_concepts) * avg_letters);
}

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(std::span<const std::size_t> labels, std::size_t n_classes) {
  std::vector<std::vector<std::size_t>> by_class(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes) throw ValidationError("label index out of range");
    by_class[labels[i]].push_back(i);
  }
  return by_class;
}

}  // namespace

std::vector<std::size_t> few_shot_split(std::span<const std::size_t> labels, std::size_t n_classes, std::size_t k,
                                        std::uint64_t seed) {
  auto by_class = indices_by_class(labels, n_classes);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < n_classes; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < k) {
      throw ValidationError("few_shot_split: class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                            " samples, fewer than k=" + std::to_string(k));
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    out.insert(out.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Split stratified_split(std::span<const std::size_t> labels, std::size_t n_classes, double train_fraction,
                       std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("train_fraction must be in (0, 1)");
  auto by_class = indices_by_class(labels, n_classes);
  std::mt19937_64 rng(seed);
  Split s;
  for (auto& idx : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(idx.size())));
    if (idx.size() >= 2) n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    else n_train = idx.size();
    s.train.insert(s.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.validation.insert(s.validation.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  return s;
}

std::vector<std::size_t> complement(std::size_t n, const std::vector<std::size_t>& taken) {
  std::vector<std::size_t> out;
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (j < taken.size() && taken[j] == i) {
      ++j;
      continue;
    }
    out.push_back(i);
  }
  return out;
}

std::vector<OracleEntry> oracle_best_single_addition(const Dataset& train, const Dataset& validation,
                                                     const ConceptBank& base_bank, const ConceptBank& candidate_bank,
                                                     const TrainConfig& config) {
  std::vector<OracleEntry> out;
  for (std::size_t i = 0; i < candidate_bank.size(); ++i) {
    const std::string& token = candidate_bank.tokens()[i];
    if (base_bank.contains(token)) continue;
    const ConceptBank bank = append_concept(base_bank, token, row_span(candidate_bank.rows(), static_cast<Index>(i)));
    const PcbmResult fit = train_pcbm(train, nullptr, bank, config);
    const double acc =
        accuracy(predict_pcbm(fit.psi_c, fit.standardizer, bank, validation.features).labels, validation.labels);
    out.push_back(OracleEntry{i, token, acc});
  }
  std::sort(out.begin(), out.end(), [](const OracleEntry& a, const OracleEntry& b) {
    return a.accuracy > b.accuracy || (a.accuracy == b.accuracy && a.token < b.token);
  });
  return out;
}

std::size_t oracle_rank(const std::vector<OracleEntry>& ranking, const std::string& token) {
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    if (ranking[i].token == token) return i;
  }
  return ranking.size();
}

RunReport make_report(const ResidualModel& model, double acc, std::string variant,
                      std::map<std::string, std::string> config) {
  RunReport r;
  r.variant = std::move(variant);
  r.accuracy = acc;
  r.n_concepts = model.base_bank.size() + model.residual_count();
  r.avg_letters = model.base_bank.avg_letters();
  r.cue = cue(acc, r.n_concepts, r.avg_letters);
  r.seed = model.config.seed;
  r.config = std::move(config);
  return r;
}

std::string format_snap_history(const std::vector<SnapRecord>& snaps) {
  // Token last; it may contain commas.
  std::string out = "round,cosine,accuracy_before,accuracy_after,token\n";
  for (const auto& s : snaps) {
    if (s.token.find('\n') != std::string::npos) throw ValidationError("snap token contains a newline");
    out += std::to_string(s.round) + "," + format_double(s.cosine) + "," + format_double(s.accuracy_before) + "," +
           format_double(s.accuracy_after) + "," + s.token + "\n";
  }
  return out;
}

std::vector<SnapRecord> parse_snap_history(const std::string& text, const std::string& source_name) {
  std::istringstream in(text);
  std::string line;
  std::vector<SnapRecord> out;
  bool header = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (!header) {
      if (trim(line) != "round,cosine,accuracy_before,accuracy_after,token") {
        throw FormatError(FormatErrorKind::kMalformed, source_name + ":" + std::to_string(line_no) + ": bad snap header");
      }
      header = true;
      continue;
    }
    std::vector<std::string> fields;
    std::size_t pos = 0;
    for (int f = 0; f < 4; ++f) {
      const auto comma = line.find(',', pos);
      if (comma == std::string::npos) {
        throw FormatError(FormatErrorKind::kMalformed, source_name + ":" + std::to_string(line_no) + ": too few fields");
      }
      fields.push_back(line.substr(pos, comma - pos));
      pos = comma + 1;
    }
    const std::string where = source_name + ":" + std::to_string(line_no);
    SnapRecord r;
    r.round = static_cast<std::size_t>(parse_integer(fields[0], where + " round"));
    r.cosine = parse_double(fields[1], where + " cosine");
    r.accuracy_before = parse_double(fields[2], where + " accuracy_before");
    r.accuracy_after = parse_double(fields[3], where + " accuracy_after");
    r.token = line.substr(pos);
    out.push_back(std::move(r));
  }
  if (!header) throw FormatError(FormatErrorKind::kEmpty, source_name + ": no snap header");
  return out;
}

std::string format_report(const RunReport& r) {
  std::string out = "# rescbm run report\n";
  out += "variant = " + r.variant + "\n";
  out += "accuracy = " + format_double(r.accuracy) + "\n";
  out += "n_concepts = " + std::to_string(r.n_concepts) + "\n";
  out += "avg_letters = " + format_double(r.avg_letters) + "\n";
  out += "cue = " + format_double(r.cue) + "\n";
  out += "seed = " + std::to_string(r.seed) + "\n";
  for (const auto& [k, v] : r.config) out += "config." + k + " = " + v + "\n";
  out += "[snaps]\n";
  out += format_snap_history(r.snaps);
  return out;
}

RunReport parse_report(const std::string& text, const std::string& source_name) {
  int section_line = 0;
  const auto entries = parse_key_values(text, source_name, &section_line);
  const auto kv = to_map(entries, source_name);
  const auto get = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(FormatErrorKind::kMalformed, source_name + ": missing field '" + key + "'");
    return it->second;
  };
  RunReport r;
  r.variant = get("variant");
  r.accuracy = parse_double(get("accuracy"), "accuracy");
  r.n_concepts = static_cast<std::size_t>(parse_integer(get("n_concepts"), "n_concepts"));
  r.avg_letters = parse_double(get("avg_letters"), "avg_letters");
  r.cue = parse_double(get("cue"), "cue");
  r.seed = static_cast<std::uint64_t>(parse_integer(get("seed"), "seed"));
  for (const auto& [k, v] : kv) {
    if (k.rfind("config.", 0) == 0) r.config.emplace(k.substr(7), v);
  }
  if (section_line == 0) throw FormatError(FormatErrorKind::kMalformed, source_name + ": missing [snaps] section");
  std::istringstream in(text);
  std::string line;
  std::string rest;
  for (int i = 1; std::getline(in, line); ++i) {
    if (i > section_line) rest += line + "\n";
  }
  r.snaps = parse_snap_history(rest, source_name);
  return r;
}

void emit_report(const RunReport& r, const std::filesystem::path& path) {
  if (r.variant.empty()) throw ValidationError("report: missing field 'variant'");
  if (r.config.empty()) throw ValidationError("report: missing config snapshot");
  if (!std::isfinite(r.accuracy) || !std::isfinite(r.avg_letters) || !std::isfinite(r.cue)) {
    throw ValidationError("report: non-finite field");
  }
  if (std::abs(cue(r.accuracy, r.n_concepts, r.avg_letters) - r.cue) > 1e-9) {
    throw ValidationError("report: cue does not match accuracy / n_concepts / avg_letters");
  }
  write_text_file(path, format_report(r));
}

RunReport load_report(const std::filesystem::path& path) { return parse_report(read_text_file(path), path.string()); }

std::vector<FewShotPoint> few_shot_curve(const Dataset& data, const ConceptBank& bank,
                                         const std::vector<std::size_t>& shots, const TrainConfig& config) {
  std::vector<FewShotPoint> out;
  for (std::size_t k : shots) {
    const auto train_idx = few_shot_split(data.labels, data.n_classes, k, config.seed);
    const auto eval_idx = complement(data.size(), train_idx);
    if (eval_idx.empty()) throw ValidationError("few_shot_curve: nothing left to evaluate for k=" + std::to_string(k));
    const Dataset train = data.subset(train_idx);
    const Dataset eval = data.subset(eval_idx);
    const PcbmResult fit = train_pcbm(train, nullptr, bank, config);
    const double acc = accuracy(predict_pcbm(fit.psi_c, fit.standardizer, bank, eval.features).labels, eval.labels);
    out.push_back(FewShotPoint{k, train_idx.size(), acc});
  }
  return out;
}

std::string format_few_shot_csv(const std::vector<FewShotPoint>& points) {
  std::string out = "shots,train_size,accuracy\n";
  for (const auto& p : points) {
    out += std::to_string(p.shots) + "," + std::to_string(p.train_size) + "," + format_double(p.accuracy) + "\n";
  }
  return out;
}

std::string format_trace_csv(const TrainTrace& t) {
  std::string out = "epoch,pass1_loss,pass2_loss,validation_accuracy\n";
  for (std::size_t e = 0; e < t.epochs(); ++e) {
    out += std::to_string(e) + "," + format_double(t.pass1_loss[e]) + "," + format_double(t.pass2_loss[e]) + "," +
           format_double(t.validation_accuracy[e]) + "\n";
  }
  return out;
}

}  // namespace rescbm
