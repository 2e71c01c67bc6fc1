#include "l2g/experiments/results.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "l2g/supernet/checkpoint.hpp"

namespace l2g {
namespace {

using nlohmann::json;

json matrix_to_json(const AccuracyMatrix& a) {
  json rows = json::array();
  for (std::size_t t = 0; t < a.rows.size(); ++t) {
    json tasks = json::array();
    for (std::size_t s = 0; s < a.rows[t].size(); ++s) tasks.push_back(s);
    rows.push_back({{"after_task", t}, {"tasks", std::move(tasks)}, {"values", a.rows[t]}});
  }
  return json{{"rows", std::move(rows)}, {"params_after", a.params_after}};
}

json metrics_to_json(const Metrics& m) {
  return json{{"avg_after_task", m.avg_after_task},
              {"final_avg", m.final_avg},
              {"forgetting", m.forgetting},
              {"backward_transfer", m.backward_transfer}};
}

json growth_to_json(const GrowthReport& g) {
  return json{{"task", g.task}, {"slot_params", g.slot_params}, {"head_params", g.head_params}, {"total", g.total()}};
}

const json& member(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw ResultsError(where + ": missing '" + key + "'");
  return obj.at(key);
}

AccuracyMatrix matrix_from_json(const json& j, const std::string& where) {
  AccuracyMatrix a;
  const json& rows = member(j, "rows", where);
  if (!rows.is_array()) throw ResultsError(where + ".rows: expected an array");
  for (std::size_t t = 0; t < rows.size(); ++t) {
    const std::string at = where + ".rows[" + std::to_string(t) + "]";
    if (member(rows[t], "after_task", at).get<std::size_t>() != t) throw ResultsError(at + ": rows out of order");
    const json& tasks = member(rows[t], "tasks", at);
    const json& values = member(rows[t], "values", at);
    if (tasks.size() != values.size()) throw ResultsError(at + ": tasks and values differ in length");
    std::vector<double> row(values.size());
    for (std::size_t s = 0; s < values.size(); ++s) {
      if (tasks[s].get<std::size_t>() != s) throw ResultsError(at + ".tasks: unexpected task index");
      row[s] = values[s].get<double>();
    }
    a.rows.push_back(std::move(row));
  }
  a.params_after = member(j, "params_after", where).get<std::vector<std::size_t>>();
  if (a.params_after.size() != a.rows.size()) throw ResultsError(where + ".params_after: wrong length");
  try {
    a.validate();
  } catch (const ContractError& e) {
    throw ResultsError(where + ": " + e.what());
  }
  return a;
}

TaskStructure structure_from_json(const json& j, const std::string& where) {
  TaskStructure s;
  s.task = member(j, "task", where).get<int>();
  for (const json& c : member(j, "choices", where)) {
    LayerChoice choice;
    try {
      choice.kind = choice_kind_from_string(member(c, "kind", where).get<std::string>());
    } catch (const ContractError& e) {
      throw ResultsError(where + ": " + e.what());
    }
    choice.variant_id = member(c, "variant", where).get<int>();
    choice.adapter_id = member(c, "adapter", where).get<int>();
    s.choices.push_back(choice);
  }
  return s;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

const MethodResult& RunResults::method(const std::string& name) const {
  for (const auto& m : methods) {
    if (m.name == name) return m;
  }
  throw ContractError("no method '" + name + "' in results");
}

json results_to_json(const RunResults& r) {
  json methods = json::array();
  json timing = json::object();
  for (const auto& m : r.methods) {
    json entry{{"name", m.name},
               {"family", m.family},
               {"accuracy", matrix_to_json(m.accuracy)},
               {"metrics", metrics_to_json(m.metrics)}};
    if (m.family == "learn2grow") {
      json structures = json::array(), growth = json::array();
      for (const auto& s : m.structures) structures.push_back(structure_to_json(s));
      for (const auto& g : m.growth) growth.push_back(growth_to_json(g));
      entry["structures"] = std::move(structures);
      entry["growth"] = std::move(growth);
    }
    methods.push_back(std::move(entry));
    timing[m.name] = m.seconds;
  }
  return json{{"format", 1},
              {"config", r.config},
              {"methods", std::move(methods)},
              {"wall_clock", {{"total_seconds", r.seconds}, {"methods", std::move(timing)}}}};
}

RunResults results_from_json(const json& j) {
  RunResults r;
  try {
    if (member(j, "format", "results").get<int>() != 1) throw ResultsError("results.format: unsupported version");
    r.config = member(j, "config", "results");
    const json& methods = member(j, "methods", "results");
    if (!methods.is_array()) throw ResultsError("results.methods: expected an array");
    for (std::size_t i = 0; i < methods.size(); ++i) {
      const std::string where = "results.methods[" + std::to_string(i) + "]";
      const json& m = methods[i];
      MethodResult out;
      out.name = member(m, "name", where).get<std::string>();
      out.family = member(m, "family", where).get<std::string>();
      out.accuracy = matrix_from_json(member(m, "accuracy", where), where + ".accuracy");
      out.metrics = compute_metrics(out.accuracy);
      if (metrics_to_json(out.metrics) != member(m, "metrics", where)) {
        throw ResultsError(where + ".metrics: stored summary disagrees with the accuracy matrix");
      }
      if (m.contains("structures")) {
        for (const json& s : m.at("structures")) out.structures.push_back(structure_from_json(s, where + ".structures"));
      }
      if (m.contains("growth")) {
        for (const json& g : m.at("growth")) {
          GrowthReport report;
          report.task = member(g, "task", where).get<int>();
          report.slot_params = member(g, "slot_params", where).get<std::vector<std::size_t>>();
          report.head_params = member(g, "head_params", where).get<std::size_t>();
          out.growth.push_back(std::move(report));
        }
      }
      if (j.contains("wall_clock") && j["wall_clock"].contains("methods") &&
          j["wall_clock"]["methods"].contains(out.name)) {
        out.seconds = j["wall_clock"]["methods"][out.name].get<double>();
      }
      r.methods.push_back(std::move(out));
    }
    if (j.contains("wall_clock")) r.seconds = j["wall_clock"].value("total_seconds", 0.0);
  } catch (const json::exception& e) {
    throw ResultsError(std::string("malformed results: ") + e.what());
  }
  return r;
}

RunResults load_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ResultsError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ResultsError("malformed JSON in " + path.string() + ": " + e.what());
  }
  return results_from_json(j);
}

std::string results_without_wall_clock(const std::string& results_json) {
  json j = json::parse(results_json);
  j.erase("wall_clock");
  return j.dump(2);
}

json structures_to_json(const RunResults& r) {
  json out = json::object();
  for (const auto& m : r.methods) {
    if (m.family != "learn2grow") continue;
    json tasks = json::array();
    for (std::size_t t = 0; t < m.structures.size(); ++t) {
      json entry = structure_to_json(m.structures[t]);
      entry["describe"] = describe(m.structures[t]);
      if (t < m.growth.size()) entry["added_params"] = m.growth[t].total();
      tasks.push_back(std::move(entry));
    }
    out[m.name] = std::move(tasks);
  }
  return out;
}

std::string metrics_csv(const RunResults& r) {
  std::ostringstream out;
  out << "method,after_task,avg_acc,params\n";
  for (const auto& m : r.methods) {
    for (std::size_t t = 0; t < m.metrics.avg_after_task.size(); ++t) {
      out << m.name << ',' << t << ',' << fixed(m.metrics.avg_after_task[t], 6) << ','
          << m.accuracy.params_after[t] << '\n';
    }
  }
  return out.str();
}

std::string accuracy_svg(const RunResults& r) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};
  const double w = 640, h = 400, left = 60, right = 170, top = 30, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  std::size_t tasks = 1;
  double lo = 1.0;
  for (const auto& m : r.methods) {
    tasks = std::max(tasks, m.metrics.avg_after_task.size());
    for (double v : m.metrics.avg_after_task) lo = std::min(lo, v);
  }
  lo = std::max(0.0, std::floor(lo * 10.0 - 0.5) / 10.0);
  auto x_of = [&](std::size_t t) { return left + (tasks == 1 ? pw / 2 : pw * t / (tasks - 1)); };
  auto y_of = [&](double v) { return top + ph * (1.0 - (v - lo) / (1.0 - lo)); };

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
    << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (1.0 - lo) * k / 4.0;
    s << "<text x=\"" << left - 8 << "\" y=\"" << fixed(y_of(v) + 4, 2) << "\" text-anchor=\"end\">"
      << fixed(100.0 * v, 1) << "</text>\n";
  }
  for (std::size_t t = 0; t < tasks; ++t) {
    s << "<text x=\"" << fixed(x_of(t), 2) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << t + 1
      << "</text>\n";
  }
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">tasks learned</text>\n"
    << "<text x=\"15\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 15 " << top + ph / 2
    << ")\" text-anchor=\"middle\">average accuracy on seen tasks (%)</text>\n";
  for (std::size_t i = 0; i < r.methods.size(); ++i) {
    const auto& m = r.methods[i];
    const char* color = colors[i % (sizeof colors / sizeof *colors)];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t t = 0; t < m.metrics.avg_after_task.size(); ++t) {
      s << (t ? " " : "") << fixed(x_of(t), 2) << ',' << fixed(y_of(m.metrics.avg_after_task[t]), 2);
    }
    s << "\"><title>" << xml_escape(m.name) << "</title></polyline>\n";
    const double ly = top + 16.0 * static_cast<double>(i);
    s << "<line x1=\"" << left + pw + 15 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 35 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
      << "<text x=\"" << left + pw + 40 << "\" y=\"" << ly + 4 << "\">" << xml_escape(m.name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void write_results(const RunResults& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const char* name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
  };
  write("results.json", results_to_json(r).dump(2) + "\n");
  write("metrics.csv", metrics_csv(r));
  write("structures.json", structures_to_json(r).dump(2) + "\n");
  write("report.svg", accuracy_svg(r));
}

}  // namespace l2g
