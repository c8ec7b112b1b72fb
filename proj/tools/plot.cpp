#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "mpcn/datagen.hpp"
#include "mpcn/errors.hpp"

namespace mpcn::cli {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

}  // namespace

std::vector<PlotPoint> collect_shot_points(const std::vector<std::string>& reports) {
  std::map<std::pair<std::string, int>, std::pair<double, int>> acc;
  std::vector<std::string> errors;
  for (const auto& path : reports) {
    std::map<std::string, std::string> r;
    try {
      r = read_report(path);
    } catch (const std::exception& e) {
      errors.push_back(path + ": " + e.what());
      continue;
    }
    std::vector<std::string> missing;
    for (const char* key : {"method", "config.shots", "mean_iou"})
      if (!r.count(key)) missing.push_back(key);
    if (!missing.empty()) {
      std::string m;
      for (const auto& k : missing) m += (m.empty() ? "" : ", ") + k;
      errors.push_back(path + ": missing " + m);
      continue;
    }
    try {
      auto& slot = acc[{r["method"], std::stoi(r["config.shots"])}];
      slot.first += std::stod(r["mean_iou"]);
      slot.second += 1;
    } catch (const std::exception&) {
      errors.push_back(path + ": unreadable shots or mean_iou");
    }
  }
  if (!errors.empty()) throw LoadError("cannot plot reports", errors);
  std::set<int> shots;
  std::vector<PlotPoint> out;
  for (const auto& [key, v] : acc) {
    shots.insert(key.second);
    out.push_back({key.first, key.second, v.first / v.second, v.second});
  }
  if (shots.size() < 2) throw ConfigError("plot-shots needs reports with at least two distinct shot counts");
  return out;
}

void write_shot_plot(const std::vector<PlotPoint>& points, const std::filesystem::path& svg,
                     const std::filesystem::path& csv) {
  {
    std::ofstream c(csv);
    c << "method,shots,mean_iou,reports\n";
    for (const auto& p : points) c << p.method << ',' << p.shots << ',' << num(p.mean_iou) << ',' << p.reports << '\n';
    if (!c) throw std::runtime_error("cannot write " + csv.string());
  }

  const double W = 640, H = 420, left = 70, right = 170, top = 30, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;
  int max_shot = 1;
  double lo = 1, hi = 0;
  for (const auto& p : points) {
    max_shot = std::max(max_shot, p.shots);
    lo = std::min(lo, p.mean_iou);
    hi = std::max(hi, p.mean_iou);
  }
  lo = std::max(0.0, std::floor(lo * 10 - 0.5) / 10);
  hi = std::min(1.0, std::ceil(hi * 10 + 0.5) / 10);
  if (hi <= lo) hi = lo + 0.1;
  auto X = [&](double s) { return left + pw * s / max_shot; };
  auto Y = [&](double v) { return top + ph * (1 - (v - lo) / (hi - lo)); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
  std::set<int> ticks;
  for (const auto& p : points) ticks.insert(p.shots);
  for (int s : ticks)
    os << "<text x=\"" << px(X(s)) << "\" y=\"" << px(top + ph + 18) << "\" text-anchor=\"middle\">" << s << "</text>\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = lo + (hi - lo) * i / 5;
    os << "<text x=\"" << px(left - 8) << "\" y=\"" << px(Y(v) + 4) << "\" text-anchor=\"end\">" << px(v * 100) << "</text>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << px(Y(v)) << "\" x2=\"" << left + pw << "\" y2=\"" << px(Y(v))
       << "\" stroke=\"#dddddd\"/>\n";
  }
  os << "<text x=\"" << px(left + pw / 2) << "\" y=\"" << px(H - 15) << "\" text-anchor=\"middle\">shots</text>\n";
  os << "<text transform=\"translate(18," << px(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">mIoU (%)</text>\n";

  std::map<std::string, std::vector<const PlotPoint*>> series;
  for (const auto& p : points) series[p.method].push_back(&p);
  int idx = 0;
  for (auto& [method, pts] : series) {
    std::sort(pts.begin(), pts.end(), [](auto* a, auto* b) { return a->shots < b->shots; });
    const char* color = kColors[idx % 6];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto* p : pts) os << px(X(p->shots)) << ',' << px(Y(p->mean_iou)) << ' ';
    os << "\"/>\n";
    for (const auto* p : pts)
      os << "<circle cx=\"" << px(X(p->shots)) << "\" cy=\"" << px(Y(p->mean_iou)) << "\" r=\"3\" fill=\"" << color
         << "\"/>\n";
    const double ly = top + 10 + 18 * idx;
    os << "<line x1=\"" << px(left + pw + 15) << "\" y1=\"" << px(ly) << "\" x2=\"" << px(left + pw + 35) << "\" y2=\""
       << px(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << px(left + pw + 40) << "\" y=\"" << px(ly + 4) << "\">" << method << "</text>\n";
    ++idx;
  }
  os << "</svg>\n";
  std::ofstream s(svg);
  s << os.str();
  if (!s) throw std::runtime_error("cannot write " + svg.string());
}

}  // namespace mpcn::cli
