#pragma once

// JSON encodings for descriptors, detections, and evaluation reports.

#include <string>
#include <vector>

#include <json.hpp>

#include "cpn/efd.hpp"
#include "cpn/errors.hpp"
#include "cpn/model.hpp"
#include "cpn/nms.hpp"

namespace cpn {

inline nlohmann::json descriptor_to_json(const FourierDescriptor& desc) {
  desc.validate();
  return nlohmann::json{{"order", desc.order},
                        {"a", desc.a},
                        {"b", desc.b},
                        {"c", desc.c},
                        {"d", desc.d}};
}

inline FourierDescriptor descriptor_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw data_error("descriptor json: expected an object");
  for (const auto& [key, value] : j.items())
    if (key != "order" && key != "a" && key != "b" && key != "c" && key != "d")
      throw data_error("descriptor json: unknown key '" + key + "'");
  for (const char* key : {"order", "a", "b", "c", "d"})
    if (!j.contains(key)) throw data_error(std::string("descriptor json: missing key '") + key + "'");
  if (!j["order"].is_number_unsigned() || j["order"].get<std::size_t>() < 1)
    throw data_error("descriptor json: order must be a positive integer");

  FourierDescriptor desc;
  desc.order = j["order"].get<std::size_t>();
  try {
    desc.a = j["a"].get<std::vector<double>>();
    desc.b = j["b"].get<std::vector<double>>();
    desc.c = j["c"].get<std::vector<double>>();
    desc.d = j["d"].get<std::vector<double>>();
  } catch (const nlohmann::json::exception&) {
    throw data_error("descriptor json: coefficient arrays must be numeric");
  }
  try {
    desc.validate();
  } catch (const std::invalid_argument& err) {
    throw data_error(std::string("descriptor json: ") + err.what());
  }
  return desc;
}

inline nlohmann::json detections_to_json(const std::vector<Detection>& dets) {
  nlohmann::json list = nlohmann::json::array();
  for (const Detection& det : dets) {
    nlohmann::json contour = nlohmann::json::array();
    for (const Point& p : det.contour) contour.push_back({p[0], p[1]});
    list.push_back({{"score", det.score},
                    {"descriptor", descriptor_to_json(det.descriptor)},
                    {"contour", contour},
                    {"box", {det.box.x_min, det.box.y_min, det.box.x_max, det.box.y_max}}});
  }
  return nlohmann::json{{"detections", list}};
}

inline std::vector<Detection> detections_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("detections") || !j["detections"].is_array())
    throw data_error("detections json: expected {\"detections\": [...]}");
  std::vector<Detection> dets;
  for (const nlohmann::json& entry : j["detections"]) {
    if (!entry.is_object()) throw data_error("detections json: entry must be an object");
    for (const auto& [key, value] : entry.items())
      if (key != "score" && key != "descriptor" && key != "contour" && key != "box")
        throw data_error("detections json: unknown key '" + key + "'");
    for (const char* key : {"score", "descriptor", "contour", "box"})
      if (!entry.contains(key))
        throw data_error(std::string("detections json: missing key '") + key + "'");

    Detection det;
    if (!entry["score"].is_number()) throw data_error("detections json: score must be a number");
    det.score = entry["score"].get<double>();
    det.descriptor = descriptor_from_json(entry["descriptor"]);
    if (!entry["contour"].is_array() || entry["contour"].size() < 3)
      throw data_error("detections json: contour must be an array of at least 3 points");
    for (const nlohmann::json& p : entry["contour"]) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
        throw data_error("detections json: contour points must be [x,y]");
      det.contour.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    const nlohmann::json& box = entry["box"];
    if (!box.is_array() || box.size() != 4)
      throw data_error("detections json: box must be [x0,y0,x1,y1]");
    for (const nlohmann::json& v : box)
      if (!v.is_number()) throw data_error("detections json: box entries must be numbers");
    det.box = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(),
               box[3].get<double>()};
    dets.push_back(std::move(det));
  }
  return dets;
}

inline nlohmann::json eval_report_to_json(const EvalReport& report,
                                          const std::string& config_hash) {
  nlohmann::json thresholds = nlohmann::json::array();
  for (const ThresholdReport& tr : report.thresholds)
    thresholds.push_back({{"tau", tr.tau},
                          {"tp", tr.tp},
                          {"fp", tr.fp},
                          {"fn", tr.fn},
                          {"precision", tr.precision},
                          {"recall", tr.recall},
                          {"f1", tr.f1}});
  return nlohmann::json{{"config_hash", config_hash},
                        {"match_kind", report.kind == MatchKind::kMask ? "mask" : "box"},
                        {"thresholds", thresholds},
                        {"f1_average", report.f1_average}};
}

}  // namespace cpn
