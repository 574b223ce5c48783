// SPDX-License-Identifier: Apache-2.0
#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace pwtk {

Volume3 binarize(const Volume3& prob, double threshold) {
  Volume3 out = prob;
  const float t = static_cast<float>(threshold);
  for (auto& v : out.values.storage()) v = v > t ? 1.0f : 0.0f;
  return out;
}

namespace {

struct OverlapCounts {
  std::size_t a = 0, b = 0, both = 0;
};

OverlapCounts overlap(const Volume3& a, const Volume3& b) {
  require(a.values.same_dims(b.values), ErrKind::shape, "mask dims mismatch");
  OverlapCounts c;
  const float* ap = a.values.data();
  const float* bp = b.values.data();
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const bool ia = ap[i] > 0.0f, ib = bp[i] > 0.0f;
    c.a += ia;
    c.b += ib;
    c.both += ia && ib;
  }
  return c;
}

}  // namespace

double dice_binary(const Volume3& a, const Volume3& b) {
  const OverlapCounts c = overlap(a, b);
  if (c.a + c.b == 0) return 1.0;  // empty vs empty
  return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.a + c.b);
}

double precision_binary(const Volume3& pred, const Volume3& truth) {
  const OverlapCounts c = overlap(pred, truth);
  if (c.a == 0) return c.b == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.both) / static_cast<double>(c.a);
}

double recall_binary(const Volume3& pred, const Volume3& truth) {
  const OverlapCounts c = overlap(pred, truth);
  if (c.b == 0) return c.a == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.both) / static_cast<double>(c.b);
}

std::vector<std::size_t> surface_voxels(const Tensor& mask) {
  require(mask.rank() == 3, ErrKind::rank, "surface extraction expects a 3D mask");
  const long Z = static_cast<long>(mask.dim(0)), Y = static_cast<long>(mask.dim(1)),
             X = static_cast<long>(mask.dim(2));
  std::vector<std::size_t> out;
  const float* m = mask.data();
  auto inside = [&](long z, long y, long x) {
    if (z < 0 || z >= Z || y < 0 || y >= Y || x < 0 || x >= X) return false;
    return m[(z * Y + y) * X + x] > 0.0f;
  };
  for (long z = 0; z < Z; ++z) {
    for (long y = 0; y < Y; ++y) {
      for (long x = 0; x < X; ++x) {
        if (!inside(z, y, x)) continue;
        if (!inside(z - 1, y, x) || !inside(z + 1, y, x) || !inside(z, y - 1, x) || !inside(z, y + 1, x) ||
            !inside(z, y, x - 1) || !inside(z, y, x + 1)) {
          out.push_back(static_cast<std::size_t>((z * Y + y) * X + x));
        }
      }
    }
  }
  return out;
}

namespace {

constexpr double kBig = 1e30;

// 1D lower envelope of parabolas (squared Euclidean distance transform) on
// samples at physical positions i*h.
void dt1d(const double* f, double* d, std::size_t n, double h, int* v, double* zbuf) {
  int k = 0;
  v[0] = 0;
  zbuf[0] = -kBig;
  zbuf[1] = kBig;
  const double h2 = h * h;
  for (std::size_t q = 1; q < n; ++q) {
    const double fq = f[q] + h2 * static_cast<double>(q) * static_cast<double>(q);
    for (;;) {
      const double fv = f[static_cast<std::size_t>(v[k])] +
                        h2 * static_cast<double>(v[k]) * static_cast<double>(v[k]);
      const double s = (fq - fv) / (2.0 * h2 * (static_cast<double>(q) - v[k]));
      if (s <= zbuf[k]) {
        --k;
        if (k < 0) {
          k = 0;
          v[0] = static_cast<int>(q);
          zbuf[0] = -kBig;
          zbuf[1] = kBig;
          goto next_q;
        }
        continue;
      }
      v[++k] = static_cast<int>(q);
      zbuf[k] = s;
      zbuf[k + 1] = kBig;
      break;
    }
  next_q:;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (zbuf[k + 1] < static_cast<double>(q)) ++k;
    const double dq = (static_cast<double>(q) - v[k]) * h;
    d[q] = dq * dq + f[static_cast<std::size_t>(v[k])];
  }
}

// Exact squared distance (mm^2) from every voxel to the given seed voxels.
std::vector<double> edt_sq(const std::vector<std::size_t>& seeds, const std::vector<std::size_t>& dims,
                           const std::array<double, 3>& spacing) {
  const std::size_t Z = dims[0], Y = dims[1], X = dims[2];
  std::vector<double> dist(Z * Y * X, kBig);
  for (auto s : seeds) dist[s] = 0.0;

  const std::size_t nmax = std::max({Z, Y, X});
  std::vector<double> f(nmax), d(nmax), zbuf(nmax + 1);
  std::vector<int> v(nmax);

  // x pass
  for (std::size_t z = 0; z < Z; ++z) {
    for (std::size_t y = 0; y < Y; ++y) {
      double* row = dist.data() + (z * Y + y) * X;
      dt1d(row, d.data(), X, spacing[2], v.data(), zbuf.data());
      std::copy(d.begin(), d.begin() + static_cast<long>(X), row);
    }
  }
  // y pass
  for (std::size_t z = 0; z < Z; ++z) {
    for (std::size_t x = 0; x < X; ++x) {
      for (std::size_t y = 0; y < Y; ++y) f[y] = dist[(z * Y + y) * X + x];
      dt1d(f.data(), d.data(), Y, spacing[1], v.data(), zbuf.data());
      for (std::size_t y = 0; y < Y; ++y) dist[(z * Y + y) * X + x] = d[y];
    }
  }
  // z pass
  for (std::size_t y = 0; y < Y; ++y) {
    for (std::size_t x = 0; x < X; ++x) {
      for (std::size_t z = 0; z < Z; ++z) f[z] = dist[(z * Y + y) * X + x];
      dt1d(f.data(), d.data(), Z, spacing[0], v.data(), zbuf.data());
      for (std::size_t z = 0; z < Z; ++z) dist[(z * Y + y) * X + x] = d[z];
    }
  }
  return dist;
}

}  // namespace

SurfaceDistances surface_distances(const Volume3& a, const Volume3& b) {
  require(a.values.same_dims(b.values), ErrKind::shape, "mask dims mismatch");
  require(a.spacing == b.spacing, ErrKind::shape, "mask spacing mismatch");
  const auto sa = surface_voxels(a.values);
  const auto sb = surface_voxels(b.values);
  require(!sa.empty() && !sb.empty(), ErrKind::mask, "surface distance undefined for an empty mask");

  const auto da = edt_sq(sa, a.values.dims(), a.spacing);  // distance to surface(a)
  const auto db = edt_sq(sb, b.values.dims(), b.spacing);

  double max_ab = 0.0, max_ba = 0.0, sum = 0.0;
  for (auto i : sa) {
    const double d = std::sqrt(db[i]);
    max_ab = std::max(max_ab, d);
    sum += d;
  }
  for (auto i : sb) {
    const double d = std::sqrt(da[i]);
    max_ba = std::max(max_ba, d);
    sum += d;
  }
  SurfaceDistances out;
  out.hausdorff_mm = std::max(max_ab, max_ba);
  out.assd_mm = sum / static_cast<double>(sa.size() + sb.size());
  return out;
}

double nmi(const std::vector<float>& x, const std::vector<float>& y, int bins) {
  require(x.size() == y.size() && !x.empty(), ErrKind::shape, "nmi inputs must be equal-length and nonempty");
  require(bins >= 2, ErrKind::parameter, "nmi needs at least 2 bins");

  auto range_of = [](const std::vector<float>& v) {
    float lo = v[0], hi = v[0];
    for (float t : v) {
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
    return std::pair<float, float>(lo, hi);
  };
  const auto [xlo, xhi] = range_of(x);
  const auto [ylo, yhi] = range_of(y);
  // A variable with no observed range is constant and carries no
  // information.
  if (xhi <= xlo || yhi <= ylo) return 0.0;

  const std::size_t nb = static_cast<std::size_t>(bins);
  auto bin_of = [nb](float v, float lo, float hi) -> std::size_t {
    if (hi <= lo) return 0;
    const double f = (static_cast<double>(v) - lo) / (static_cast<double>(hi) - lo);
    auto b = static_cast<long>(f * static_cast<double>(nb));
    return static_cast<std::size_t>(std::clamp<long>(b, 0, static_cast<long>(nb) - 1));
  };

  std::vector<double> joint(nb * nb, 0.0);
  const double w = 1.0 / static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    joint[bin_of(x[i], xlo, xhi) * nb + bin_of(y[i], ylo, yhi)] += w;
  }

  std::vector<double> px(nb, 0.0), py(nb, 0.0);
  for (std::size_t i = 0; i < nb; ++i) {
    for (std::size_t j = 0; j < nb; ++j) {
      px[i] += joint[i * nb + j];
      py[j] += joint[i * nb + j];
    }
  }
  auto entropy = [](const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p) {
      if (v > 0.0) h -= v * std::log(v);
    }
    return h;
  };
  const double hx = entropy(px), hy = entropy(py), hxy = entropy(joint);
  // A constant variable carries no information; its marginal entropy is
  // zero and the mutual information is zero by definition.
  if (hx <= 0.0 || hy <= 0.0) return 0.0;
  const double mi = hx + hy - hxy;
  return std::clamp(2.0 * mi / (hx + hy), 0.0, 1.0);
}

CaseMetrics evaluate_case(const std::string& case_id, const Volume3& pred_mask, const Volume3& gt_mask) {
  CaseMetrics m;
  m.case_id = case_id;
  m.dice = dice_binary(pred_mask, gt_mask);
  m.precision = precision_binary(pred_mask, gt_mask);
  m.recall = recall_binary(pred_mask, gt_mask);
  try {
    const SurfaceDistances d = surface_distances(pred_mask, gt_mask);
    m.hausdorff_mm = d.hausdorff_mm;
    m.assd_mm = d.assd_mm;
  } catch (const Error& e) {
    if (e.kind() != ErrKind::mask) throw;
    // Undefined distances are reported as missing and excluded from
    // aggregates.
  }
  return m;
}

namespace {

struct MeanSd {
  double mean = 0.0, sd = 0.0;
};

MeanSd mean_sd(const std::vector<double>& xs) {
  MeanSd out;
  if (xs.empty()) return out;
  double sum = 0.0;
  for (double x : xs) sum += x;
  out.mean = sum / static_cast<double>(xs.size());
  if (xs.size() >= 2) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return out;
}

}  // namespace

MetricsReport aggregate(std::vector<CaseMetrics> rows) {
  MetricsReport r;
  std::vector<double> dice, hd, assd, prec, rec;
  for (const auto& m : rows) {
    dice.push_back(m.dice);
    prec.push_back(m.precision);
    rec.push_back(m.recall);
    if (m.hausdorff_mm && m.assd_mm) {
      hd.push_back(*m.hausdorff_mm);
      assd.push_back(*m.assd_mm);
    }
  }
  r.rows = std::move(rows);
  const MeanSd d = mean_sd(dice), h = mean_sd(hd), a = mean_sd(assd), p = mean_sd(prec), c = mean_sd(rec);
  r.mean_dice = d.mean;
  r.sd_dice = d.sd;
  r.mean_hd = h.mean;
  r.sd_hd = h.sd;
  r.mean_assd = a.mean;
  r.sd_assd = a.sd;
  r.mean_precision = p.mean;
  r.sd_precision = p.sd;
  r.mean_recall = c.mean;
  r.sd_recall = c.sd;
  r.distance_cases = hd.size();
  return r;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : "nan"; }

}  // namespace

std::string metrics_csv(const MetricsReport& report) {
  std::string out = "case_id,dice,hd,assd,precision,recall\n";
  for (const auto& m : report.rows) {
    out += m.case_id + "," + fmt(m.dice) + "," + fmt_opt(m.hausdorff_mm) + "," + fmt_opt(m.assd_mm) + "," +
           fmt(m.precision) + "," + fmt(m.recall) + "\n";
  }
  out += "mean," + fmt(report.mean_dice) + "," + fmt(report.mean_hd) + "," + fmt(report.mean_assd) + "," +
         fmt(report.mean_precision) + "," + fmt(report.mean_recall) + "\n";
  out += "sd," + fmt(report.sd_dice) + "," + fmt(report.sd_hd) + "," + fmt(report.sd_assd) + "," +
         fmt(report.sd_precision) + "," + fmt(report.sd_recall) + "\n";
  return out;
}

MetricsReport parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrKind::format, "empty metrics csv");
  require(line == "case_id,dice,hd,assd,precision,recall", ErrKind::format, "unexpected metrics csv header");
  std::vector<CaseMetrics> rows;
  MetricsReport direct;
  bool have_mean = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, sdice, shd, sassd, sprec, srec;
    std::getline(ls, id, ',');
    std::getline(ls, sdice, ',');
    std::getline(ls, shd, ',');
    std::getline(ls, sassd, ',');
    std::getline(ls, sprec, ',');
    std::getline(ls, srec, ',');
    if (id == "mean") {
      direct.mean_dice = std::stod(sdice);
      direct.mean_hd = std::stod(shd);
      direct.mean_assd = std::stod(sassd);
      direct.mean_precision = std::stod(sprec);
      direct.mean_recall = std::stod(srec);
      have_mean = true;
      continue;
    }
    if (id == "sd") continue;
    CaseMetrics m;
    m.case_id = id;
    m.dice = std::stod(sdice);
    if (shd != "nan") m.hausdorff_mm = std::stod(shd);
    if (sassd != "nan") m.assd_mm = std::stod(sassd);
    m.precision = std::stod(sprec);
    m.recall = std::stod(srec);
    rows.push_back(std::move(m));
  }
  MetricsReport r = aggregate(std::move(rows));
  if (have_mean && r.rows.empty()) return direct;
  return r;
}

std::string nmi_csv(const NmiMatrix& m) {
  std::string out = "feature";
  for (const auto& c : m.map_names) out += "," + c;
  out += "\n";
  for (std::size_t r = 0; r < m.feature_names.size(); ++r) {
    out += m.feature_names[r];
    for (std::size_t c = 0; c < m.map_names.size(); ++c) out += "," + fmt(m.at(r, c));
    out += "\n";
  }
  return out;
}

}  // namespace pwtk
