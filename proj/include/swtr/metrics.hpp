#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "swtr/volume.hpp"

namespace swtr {

struct VoxelCoord {
  std::int32_t x, y, z;
};

inline void check_same_dims(const VoxelMask& a, const VoxelMask& b, const char* op) {
  if (a.dims != b.dims)
    fail(ErrorCode::kDimension, std::string(op) + ": mask dims " + std::to_string(a.dims.nx) + "x" +
                                    std::to_string(a.dims.ny) + "x" + std::to_string(a.dims.nz) + " vs " +
                                    std::to_string(b.dims.nx) + "x" + std::to_string(b.dims.ny) + "x" +
                                    std::to_string(b.dims.nz));
}

// Dice similarity of two binary masks (nonzero = foreground). Both empty -> 1.
inline double dice(const VoxelMask& x, const VoxelMask& y) {
  check_same_dims(x, y, "dice");
  std::size_t nx = 0, ny = 0, both = 0;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const bool a = x.data[i] != 0, b = y.data[i] != 0;
    nx += a;
    ny += b;
    both += a && b;
  }
  if (nx + ny == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(nx + ny);
}

// Foreground voxels with at least one of their 6 face neighbours outside the
// mask (the volume border counts as outside). Scan order.
inline std::vector<VoxelCoord> boundary_voxels(const VoxelMask& m) {
  std::vector<VoxelCoord> out;
  const auto nx = static_cast<std::int64_t>(m.dims.nx), ny = static_cast<std::int64_t>(m.dims.ny),
             nz = static_cast<std::int64_t>(m.dims.nz);
  auto in = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    return m.contains(x, y, z) && m.data[m.index(static_cast<std::size_t>(x), static_cast<std::size_t>(y),
                                                 static_cast<std::size_t>(z))] != 0;
  };
  for (std::int64_t z = 0; z < nz; ++z)
    for (std::int64_t y = 0; y < ny; ++y)
      for (std::int64_t x = 0; x < nx; ++x) {
        if (!in(x, y, z)) continue;
        if (!in(x - 1, y, z) || !in(x + 1, y, z) || !in(x, y - 1, z) || !in(x, y + 1, z) || !in(x, y, z - 1) ||
            !in(x, y, z + 1))
          out.push_back({static_cast<std::int32_t>(x), static_cast<std::int32_t>(y), static_cast<std::int32_t>(z)});
      }
  return out;
}

inline double squared_distance_mm(const VoxelCoord& a, const VoxelCoord& b, const Spacing& s) {
  const double dx = static_cast<double>(a.x - b.x) * s.x;
  const double dy = static_cast<double>(a.y - b.y) * s.y;
  const double dz = static_cast<double>(a.z - b.z) * s.z;
  return dx * dx + dy * dy + dz * dz;
}

// max_{a in from} min_{b in to} |a - b|, exact. Inner loops stop as soon as a
// distance below the running maximum shows `a` cannot raise it; shuffled
// visiting order makes that early exit effective on typical shapes.
inline double directed_hausdorff(const std::vector<VoxelCoord>& from, const std::vector<VoxelCoord>& to,
                                 const Spacing& s) {
  require(!from.empty() && !to.empty(), ErrorCode::kDegenerateInput, "directed Hausdorff of an empty set");
  std::vector<VoxelCoord> a = from, b = to;
  std::mt19937_64 rng(0x4844ULL);
  std::shuffle(a.begin(), a.end(), rng);
  std::shuffle(b.begin(), b.end(), rng);
  double cmax = 0.0;
  for (const auto& p : a) {
    double cmin = std::numeric_limits<double>::infinity();
    for (const auto& q : b) {
      const double d = squared_distance_mm(p, q, s);
      if (d < cmax) {
        cmin = d;
        break;
      }
      cmin = std::min(cmin, d);
    }
    if (cmin > cmax) cmax = cmin;
  }
  return std::sqrt(cmax);
}

// Symmetric Hausdorff distance in mm between the 6-connectivity boundaries.
inline double hausdorff(const VoxelMask& x, const VoxelMask& y, const Spacing& spacing) {
  check_same_dims(x, y, "hausdorff");
  const auto bx = boundary_voxels(x);
  const auto by = boundary_voxels(y);
  if (bx.empty() || by.empty()) fail(ErrorCode::kDegenerateInput, "hausdorff: undefined for an empty mask");
  return std::max(directed_hausdorff(bx, by, spacing), directed_hausdorff(by, bx, spacing));
}

inline double hausdorff(const VoxelMask& x, const VoxelMask& y) { return hausdorff(x, y, x.spacing); }

// Lesion false-discovery share: FP / (FP + TP) over label 2; 0 when nothing is predicted.
inline double false_positive_rate(const VoxelMask& pred, const VoxelMask& ref) {
  check_same_dims(pred, ref, "false_positive_rate");
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    if (pred.data[i] != label::kLesion) continue;
    if (ref.data[i] == label::kLesion) ++tp;
    else ++fp;
  }
  return tp + fp == 0 ? 0.0 : static_cast<double>(fp) / static_cast<double>(tp + fp);
}

struct MetricReport {
  double dsc_liver = 0.0;
  double dsc_lesion = 0.0;
  std::optional<double> hd_liver;   // mm; empty when undefined (an empty mask)
  std::optional<double> hd_lesion;
  double fp_rate = 0.0;
};

inline MetricReport patient_report(const VoxelMask& pred, const VoxelMask& ref) {
  check_same_dims(pred, ref, "patient_report");
  if (pred.spacing != ref.spacing) fail(ErrorCode::kDimension, "patient_report: spacing differs between masks");
  MetricReport r;
  const VoxelMask pl = liver_region(pred), rl = liver_region(ref);
  const VoxelMask pt = lesion_region(pred), rt = lesion_region(ref);
  r.dsc_liver = dice(pl, rl);
  r.dsc_lesion = dice(pt, rt);
  auto hd = [&](const VoxelMask& a, const VoxelMask& b) -> std::optional<double> {
    try {
      return hausdorff(a, b, ref.spacing);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDegenerateInput) throw;
      return std::nullopt;
    }
  };
  r.hd_liver = hd(pl, rl);
  r.hd_lesion = hd(pt, rt);
  r.fp_rate = false_positive_rate(pred, ref);
  return r;
}

// Arithmetic mean and sample standard deviation; undefined entries are skipped.
struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  m.n = v.size();
  if (v.empty()) return m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double s = 0;
    for (double x : v) s += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(s / static_cast<double>(v.size() - 1));
  }
  return m;
}

struct NamedReport {
  std::string patient;
  MetricReport report;
};

struct ReportSummary {
  MeanStd dsc_liver, dsc_lesion, hd_liver, hd_lesion, fp_rate;
};

inline ReportSummary summarize(const std::vector<NamedReport>& reports) {
  std::vector<double> dl, dt, hl, ht, fp;
  for (const auto& r : reports) {
    dl.push_back(r.report.dsc_liver);
    dt.push_back(r.report.dsc_lesion);
    if (r.report.hd_liver) hl.push_back(*r.report.hd_liver);
    if (r.report.hd_lesion) ht.push_back(*r.report.hd_lesion);
    fp.push_back(r.report.fp_rate);
  }
  return {mean_std(dl), mean_std(dt), mean_std(hl), mean_std(ht), mean_std(fp)};
}

inline std::string fmt_num(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

inline std::string fmt_mean_std(const MeanStd& m, int prec = 2) {
  if (m.n == 0) return "n/a";
  return fmt_num(m.mean, prec) + " ± " + fmt_num(m.std, prec);
}

// Per-patient rows, tab-separated. Undefined Hausdorff distances print as "nan".
inline std::string report_table_tsv(const std::vector<NamedReport>& reports) {
  std::string out = "patient\tdsc_liver\tdsc_lesion\thd_liver_mm\thd_lesion_mm\tfp_rate\n";
  auto opt = [](const std::optional<double>& v) { return v ? fmt_num(*v) : std::string("nan"); };
  for (const auto& r : reports)
    out += r.patient + "\t" + fmt_num(r.report.dsc_liver) + "\t" + fmt_num(r.report.dsc_lesion) + "\t" +
           opt(r.report.hd_liver) + "\t" + opt(r.report.hd_lesion) + "\t" + fmt_num(r.report.fp_rate) + "\n";
  return out;
}

// Mean ± std summary laid out like a results table: DSC and HD per class.
inline std::string report_summary_text(const std::string& label, const ReportSummary& s) {
  std::string out = "method\tDSC_liver\tHD_liver_mm\tDSC_lesion\tHD_lesion_mm\tFP_rate\n";
  out += label + "\t" + fmt_mean_std(s.dsc_liver) + "\t" + fmt_mean_std(s.hd_liver, 1) + "\t" +
         fmt_mean_std(s.dsc_lesion) + "\t" + fmt_mean_std(s.hd_lesion, 1) + "\t" + fmt_mean_std(s.fp_rate) + "\n";
  return out;
}

}  // namespace swtr
