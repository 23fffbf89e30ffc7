#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsmsr/error.hpp"
#include "dsmsr/losses.hpp"
#include "dsmsr/training/batches.hpp"

namespace dsmsr {

inline Phase parse_phase(const std::string& s) {
  if (s == "ndsm") return Phase::ndsm;
  if (s == "sr-pretrain") return Phase::sr_pretrain;
  if (s == "gan") return Phase::gan;
  throw UsageError("unknown phase '" + s + "'");
}

// One optimizer step. For the ndsm phase the MAE sits in `loss.ndsm`, for
// sr-pretrain in `loss.content`; gan steps fill every field.
struct StepRecord {
  Phase phase = Phase::ndsm;
  std::int64_t step = 0;  // 1-based within the phase
  LossBreakdown loss;
  std::optional<double> d_loss, d_real, d_fake;
  std::uint64_t batch = 0;  // batch fingerprint

  bool operator==(const StepRecord& o) const {
    return phase == o.phase && step == o.step && loss.content == o.loss.content && loss.ndsm == o.loss.ndsm &&
           loss.adversarial == o.loss.adversarial && loss.total == o.loss.total && d_loss == o.d_loss &&
           d_real == o.d_real && d_fake == o.d_fake && batch == o.batch;
  }
};

struct TrainHistory {
  std::vector<StepRecord> records;
  std::optional<double> pretrain_final_mae;
  double wall_time = 0;  // seconds, this process only

  std::size_t count(Phase p) const {
    std::size_t n = 0;
    for (const auto& r : records) n += r.phase == p;
    return n;
  }
  std::vector<StepRecord> of(Phase p) const {
    std::vector<StepRecord> out;
    for (const auto& r : records)
      if (r.phase == p) out.push_back(r);
    return out;
  }
};

inline std::string to_json_line(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["phase"] = to_string(r.phase);
  j["step"] = r.step;
  j["content"] = r.loss.content;
  j["ndsm"] = r.loss.ndsm;
  j["adversarial"] = r.loss.adversarial;
  j["total"] = r.loss.total;
  if (r.d_loss) j["d_loss"] = *r.d_loss;
  if (r.d_real) j["d_real"] = *r.d_real;
  if (r.d_fake) j["d_fake"] = *r.d_fake;
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(r.batch));
  j["batch"] = buf;
  return j.dump();
}

inline StepRecord parse_record(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  StepRecord r;
  r.phase = parse_phase(j.at("phase").get<std::string>());
  r.step = j.at("step").get<std::int64_t>();
  r.loss.content = j.at("content").get<double>();
  r.loss.ndsm = j.at("ndsm").get<double>();
  r.loss.adversarial = j.at("adversarial").get<double>();
  r.loss.total = j.at("total").get<double>();
  if (j.contains("d_loss")) r.d_loss = j["d_loss"].get<double>();
  if (j.contains("d_real")) r.d_real = j["d_real"].get<double>();
  if (j.contains("d_fake")) r.d_fake = j["d_fake"].get<double>();
  r.batch = std::stoull(j.at("batch").get<std::string>(), nullptr, 16);
  return r;
}

inline std::string format_history(const TrainHistory& h) {
  std::string out;
  for (const auto& r : h.records) out += to_json_line(r) + "\n";
  return out;
}

inline std::vector<StepRecord> parse_history(const std::string& text, const std::string& origin = "history.log") {
  std::vector<StepRecord> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_record(line));
    } catch (const std::exception& e) {
      throw CheckpointError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace dsmsr
