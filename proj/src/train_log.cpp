// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <iomanip>

#include "json.hpp"
#include "petra/runtime.hpp"

namespace petra::runtime {

void write_events_csv(const TrainLog& log, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "step,epoch,stage,event,micro_batch_id,param_version,loss,lr\n";
  os << std::setprecision(17);
  for (const auto& e : log.events) {
    os << e.step << ',' << e.epoch << ',' << e.stage << ',' << e.event << ',' << e.micro_batch_id << ','
       << e.param_version << ',' << e.loss << ',' << e.lr << '\n';
  }
  if (!os) throw IoError("failed writing " + path.string());
}

namespace {

nlohmann::json histogram(const std::map<std::int64_t, std::int64_t>& h) {
  nlohmann::json j = nlohmann::json::object();
  for (auto [k, v] : h) j[std::to_string(k)] = v;
  return j;
}

}  // namespace

std::string summary_json(const TrainLog& log) {
  nlohmann::json stages = nlohmann::json::array();
  for (std::size_t j = 0; j < log.stages.size(); ++j) {
    const auto& c = log.stages[j];
    stages.push_back({{"stage", j + 1},
                      {"role", j < log.roles.size() ? to_string(log.roles[j]) : ""},
                      {"forwards", c.forwards},
                      {"backwards", c.backwards},
                      {"updates", c.updates},
                      {"buffer_high_water", c.buffer_high_water},
                      {"delay", histogram(c.delay)},
                      {"staleness", histogram(c.staleness)},
                      {"messages_forward", c.messages_out_forward},
                      {"messages_backward", c.messages_out_backward},
                      {"tensors_forward", c.tensors_out_forward},
                      {"tensors_backward", c.tensors_out_backward},
                      {"bytes_sent", c.bytes_out}});
  }
  nlohmann::json doc = {{"engine", log.engine},
                        {"micro_batches", log.micro_batches},
                        {"train_loss", log.mean_loss()},
                        {"train_accuracy", log.accuracy()},
                        {"stages", stages}};
  if (!log.round_activity.empty()) doc["rounds"] = log.round_activity.size();
  return doc.dump(2);
}

}  // namespace petra::runtime
