#include "plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "lwam/errors.hpp"

namespace lwam::plot {

using json = nlohmann::json;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string full(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace

std::string line_chart_svg(const std::string& title, const std::vector<Series>& series, bool equal_axes) {
  constexpr double W = 640, H = 400, L = 60, R = 20, T = 40, B = 40;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  double sx = (W - L - R) / (x1 - x0), sy = (H - T - B) / (y1 - y0);
  if (equal_axes) sx = sy = std::min(sx, sy);
  const auto px = [&](double x) { return L + (x - x0) * sx; };
  const auto py = [&](double y) { return H - B - (y - y0) * sy; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" << title
    << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<text x=\"" << L << "\" y=\"" << H - 10 << "\" font-family=\"sans-serif\" font-size=\"11\">" << num(x0)
    << "</text>\n";
  o << "<text x=\"" << W - R << "\" y=\"" << H - 10 << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
    << num(x1) << "</text>\n";
  o << "<text x=\"4\" y=\"" << H - B << "\" font-family=\"sans-serif\" font-size=\"11\">" << num(y0) << "</text>\n";
  o << "<text x=\"4\" y=\"" << T + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">" << num(y1) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % std::size(kColors)];
    o << "<polyline class=\"" << s.name << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) o << (i ? " " : "") << num(px(s.x[i])) << ',' << num(py(s.y[i]));
    o << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (s.marker == "circle")
        o << "<circle class=\"" << s.name << "-marker\" cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i]))
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      else if (s.marker == "square")
        o << "<rect class=\"" << s.name << "-marker\" x=\"" << num(px(s.x[i]) - 3) << "\" y=\"" << num(py(s.y[i]) - 3)
          << "\" width=\"6\" height=\"6\" fill=\"" << color << "\"/>\n";
    }
    o << "<text x=\"" << W - R - 120 << "\" y=\"" << T + 16 * static_cast<double>(k) << "\" fill=\"" << color
      << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.name << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::vector<Series> loss_series(const std::vector<train::StepRecord>& log) {
  std::vector<Series> s{{"total", {}, {}, ""}, {"traj", {}, {}, ""}, {"align", {}, {}, ""}, {"wm", {}, {}, ""},
                        {"ego", {}, {}, ""}};
  for (const auto& r : log) {
    const double vals[] = {r.loss.total, r.loss.traj, r.loss.align, r.loss.wm, r.loss.ego};
    for (std::size_t k = 0; k < s.size(); ++k) {
      s[k].x.push_back(static_cast<double>(r.step));
      s[k].y.push_back(vals[k]);
    }
  }
  return s;
}

std::string loss_csv(const std::vector<train::StepRecord>& log) {
  std::string out = "step,lr,total,traj,align,wm,ego\n";
  for (const auto& r : log)
    out += std::to_string(r.step) + "," + full(r.lr) + "," + full(r.loss.total) + "," + full(r.loss.traj) + "," +
           full(r.loss.align) + "," + full(r.loss.wm) + "," + full(r.loss.ego) + "\n";
  return out;
}

std::string trajectories_to_json(const std::vector<TrajectoryPair>& t) {
  json arr = json::array();
  for (const auto& p : t) arr.push_back({{"scene", p.scene}, {"expert", p.expert}, {"predicted", p.predicted}});
  return json{{"trajectories", arr}}.dump(1) + "\n";
}

std::vector<TrajectoryPair> trajectories_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    std::vector<TrajectoryPair> out;
    for (const auto& e : j.at("trajectories")) {
      TrajectoryPair p;
      p.scene = e.at("scene").get<std::string>();
      p.expert = e.at("expert").get<std::vector<std::array<double, 2>>>();
      p.predicted = e.at("predicted").get<std::vector<std::array<double, 2>>>();
      out.push_back(std::move(p));
    }
    return out;
  } catch (const json::exception& e) {
    throw ParseError(std::string("trajectory file: ") + e.what(), 1);
  }
}

std::string trajectory_svg(const TrajectoryPair& t) {
  // Ego-local frame: forward x drawn upward, left y drawn to the left.
  Series expert{"expert", {0.0}, {0.0}, "circle"}, pred{"predicted", {0.0}, {0.0}, "square"};
  for (const auto& p : t.expert) {
    expert.x.push_back(-p[1]);
    expert.y.push_back(p[0]);
  }
  for (const auto& p : t.predicted) {
    pred.x.push_back(-p[1]);
    pred.y.push_back(p[0]);
  }
  return line_chart_svg("trajectories " + t.scene, {expert, pred}, true);
}

std::string trajectory_csv(const TrajectoryPair& t) {
  std::string out = "source,index,x,y\n";
  for (std::size_t i = 0; i < t.expert.size(); ++i)
    out += "expert," + std::to_string(i) + "," + full(t.expert[i][0]) + "," + full(t.expert[i][1]) + "\n";
  for (std::size_t i = 0; i < t.predicted.size(); ++i)
    out += "predicted," + std::to_string(i) + "," + full(t.predicted[i][0]) + "," + full(t.predicted[i][1]) + "\n";
  return out;
}

std::string attention_to_json(const train::AttentionMap& a, const std::string& scene, int view) {
  const json j{{"attention",
                {{"scene", scene},
                 {"view", view},
                 {"queries", a.queries},
                 {"patches", a.patches},
                 {"grid_h", a.grid_h},
                 {"grid_w", a.grid_w},
                 {"weights", a.weights}}}};
  return j.dump() + "\n";
}

train::AttentionMap attention_from_json(const std::string& text) {
  try {
    const json j = json::parse(text).at("attention");
    train::AttentionMap a;
    a.queries = j.at("queries").get<std::size_t>();
    a.patches = j.at("patches").get<std::size_t>();
    a.grid_h = j.at("grid_h").get<std::size_t>();
    a.grid_w = j.at("grid_w").get<std::size_t>();
    a.weights = j.at("weights").get<std::vector<double>>();
    if (a.weights.size() != a.queries * a.patches || a.grid_h * a.grid_w != a.patches)
      throw ParseError("attention file: inconsistent dimensions", 1);
    return a;
  } catch (const json::exception& e) {
    throw ParseError(std::string("attention file: ") + e.what(), 1);
  }
}

std::vector<double> normalize_rows(const std::vector<double>& w, std::size_t rows, std::size_t cols) {
  if (w.size() != rows * cols) throw DomainError("normalize_rows: weight count does not match rows x cols");
  std::vector<double> out(w.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto b = w.begin() + static_cast<std::ptrdiff_t>(r * cols);
    const auto [lo, hi] = std::minmax_element(b, b + static_cast<std::ptrdiff_t>(cols));
    const double span = *hi - *lo;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = span > 0 ? (w[r * cols + c] - *lo) / span : 0.0;
  }
  return out;
}

std::string heatmap_svg(const train::AttentionMap& a) {
  const auto v = normalize_rows(a.weights, a.queries, a.patches);
  constexpr double cell = 12, gap = 10;
  const std::size_t per_row = 4;
  const double tile_w = cell * static_cast<double>(a.grid_w), tile_h = cell * static_cast<double>(a.grid_h);
  const std::size_t tile_rows = (a.queries + per_row - 1) / per_row;
  const double W = gap + static_cast<double>(per_row) * (tile_w + gap);
  const double H = gap + static_cast<double>(tile_rows) * (tile_h + gap + 14);
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t q = 0; q < a.queries; ++q) {
    const double ox = gap + static_cast<double>(q % per_row) * (tile_w + gap);
    const double oy = gap + 14 + static_cast<double>(q / per_row) * (tile_h + gap + 14);
    o << "<text x=\"" << ox << "\" y=\"" << oy - 3 << "\" font-family=\"sans-serif\" font-size=\"11\">query " << q
      << "</text>\n";
    for (std::size_t p = 0; p < a.patches; ++p) {
      const double x = ox + cell * static_cast<double>(p % a.grid_w);
      const double y = oy + cell * static_cast<double>(p / a.grid_w);
      o << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
        << "\" fill=\"#b2182b\" fill-opacity=\"" << num(v[q * a.patches + p]) << "\"/>\n";
    }
  }
  o << "</svg>\n";
  return o.str();
}

std::string heatmap_csv(const train::AttentionMap& a) {
  const auto v = normalize_rows(a.weights, a.queries, a.patches);
  std::string out = "query,patch,row,col,weight,normalized\n";
  for (std::size_t q = 0; q < a.queries; ++q)
    for (std::size_t p = 0; p < a.patches; ++p)
      out += std::to_string(q) + "," + std::to_string(p) + "," + std::to_string(p / a.grid_w) + "," +
             std::to_string(p % a.grid_w) + "," + full(a.weights[q * a.patches + p]) + "," +
             full(v[q * a.patches + p]) + "\n";
  return out;
}

}  // namespace lwam::plot
