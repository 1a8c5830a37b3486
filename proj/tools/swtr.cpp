#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "swtr/ablation.hpp"
#include "swtr/lesion.hpp"
#include "swtr/phantom.hpp"
#include "swtr/run_config.hpp"
#include "swtr/trainer.hpp"

namespace fs = std::filesystem;
using namespace swtr;

namespace {

constexpr const char* kPreprocessedMarker = "preprocessed.cfg";

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out = true) {
  cmd->add_option("--config", c.config, "key=value config file");
  cmd->add_option("--seed", c.seed, "master seed (model init, batch order, augmentation, phantoms)");
  auto* out = cmd->add_option("--out", c.out, "output directory");
  if (needs_out) out->required();
  cmd->add_option("--workers", c.workers, "worker cap (computation is single-threaded)")->check(CLI::PositiveNumber);
  cmd->add_option("overrides", c.overrides, "key=value overrides");
}

RunConfig resolve(const Common& c) {
  const std::uint64_t* seed = c.seed ? &*c.seed : nullptr;
  return resolve_run_config(c.config, c.overrides, seed);
}

void prepare_out(const std::string& dir, const RunConfig& rc) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create output directory '" + dir + "': " + ec.message());
  detail::write_file(dir + "/effective.cfg", rc.to_kv().to_string());
}

void require_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) fail(ErrorCode::kIo, "input directory '" + dir + "' does not exist");
}

// Cohorts written by `preprocess` carry a marker and are used as-is.
std::vector<Case> load_cases(const std::string& dir, const RunConfig& rc) {
  require_dir(dir);
  std::vector<Case> cases = read_cohort(dir);
  if (fs::exists(dir + "/" + kPreprocessedMarker)) return cases;
  return preprocess_cases(cases, rc.experiment.preprocess);
}

VoxelMask read_prediction(const std::string& dir, const std::string& id) {
  const std::string path = dir + "/" + id + ".msk";
  if (!fs::exists(path)) fail(ErrorCode::kIo, "missing prediction '" + path + "'");
  return read_mask(path);
}

void log_line(const std::string& s) {
  std::cout << s << "\n";
  std::cout.flush();
}

void write_metrics(const std::string& out, const std::vector<NamedReport>& reports, const std::string& label) {
  detail::write_file(out + "/metrics.tsv", report_table_tsv(reports));
  detail::write_file(out + "/summary.txt", report_summary_text(label, summarize(reports)));
}

int cmd_phantom_gen(const Common& c) {
  const RunConfig rc = resolve(c);
  prepare_out(c.out, rc);
  write_cohort(generate_cohort(rc.cohort.count, rc.phantom), c.out);
  log_line("wrote " + std::to_string(rc.cohort.count) + " phantoms to " + c.out);
  return 0;
}

int cmd_preprocess(const Common& c, const std::string& data) {
  const RunConfig rc = resolve(c);
  require_dir(data);
  if (fs::exists(data + "/" + kPreprocessedMarker)) fail(ErrorCode::kContract, "'" + data + "' is already preprocessed");
  const auto cases = preprocess_cases(read_cohort(data), rc.experiment.preprocess);
  prepare_out(c.out, rc);
  write_cohort(cases, c.out);
  KeyValueConfig kv;
  write_config(rc.experiment.preprocess, kv, "preprocess.");
  detail::write_file(c.out + "/" + kPreprocessedMarker, kv.to_string());
  log_line("preprocessed " + std::to_string(cases.size()) + " cases into " + c.out);
  return 0;
}

int cmd_train(const Common& c, const std::string& data, const std::vector<std::size_t>& folds) {
  const RunConfig rc = resolve(c);
  const auto cases = load_cases(data, rc);
  prepare_out(c.out, rc);
  std::string log = "fold\tepoch\tloss\tval_dice_liver\tval_dice_lesion\n";
  CvOptions opt;
  opt.out_dir = c.out;
  opt.folds = folds;
  opt.log = log_line;
  const CvResult res = cross_validate(rc.experiment, cases, opt);
  for (const auto& f : res.folds)
    for (const auto& e : f.log) {
      auto o = [](const std::optional<double>& v) { return v ? fmt_num(*v) : std::string("nan"); };
      log += std::to_string(e.fold) + "\t" + std::to_string(e.epoch) + "\t" + fmt_num(e.loss, 6) + "\t" +
             o(e.val_dice_liver) + "\t" + o(e.val_dice_lesion) + "\n";
    }
  detail::write_file(c.out + "/train_log.tsv", log);
  std::string plan = "fold\tvalidation\n";
  for (std::size_t f = 0; f < res.plan.folds.size(); ++f)
    for (const auto& id : res.plan.folds[f].validation) plan += std::to_string(f) + "\t" + id + "\n";
  detail::write_file(c.out + "/folds.tsv", plan);
  fs::create_directories(c.out + "/pred");
  for (const auto& f : res.folds)
    for (const auto& r : f.validation) write_mask(c.out + "/pred/" + r.id + ".msk", r.prediction);
  write_metrics(c.out, res.reports(), "validation");
  std::cout << report_summary_text("validation", summarize(res.reports()));
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& data, const std::string& weights, const std::string& pred_dir) {
  const RunConfig rc = resolve(c);
  if (weights.empty() == pred_dir.empty()) fail(ErrorCode::kConfig, "evaluate needs exactly one of --weights or --pred");
  const auto cases = load_cases(data, rc);
  prepare_out(c.out, rc);
  std::vector<NamedReport> reports;
  if (!weights.empty()) {
    if (!fs::exists(weights)) fail(ErrorCode::kIo, "missing weight file '" + weights + "'");
    const SwtrModel<float> model = load_weights<float>(weights);
    fs::create_directories(c.out + "/pred");
    for (const auto& r : evaluate_cases(model, cases)) {
      write_mask(c.out + "/pred/" + r.id + ".msk", r.prediction);
      reports.push_back({r.id, r.report});
    }
  } else {
    require_dir(pred_dir);
    for (const auto& cs : cases) reports.push_back({cs.id, patient_report(read_prediction(pred_dir, cs.id), cs.mask)});
  }
  write_metrics(c.out, reports, "evaluation");
  std::cout << report_summary_text("evaluation", summarize(reports));
  return 0;
}

int cmd_analyze(const Common& c, const std::string& data, const std::string& pred_dir) {
  const RunConfig rc = resolve(c);
  const auto cases = load_cases(data, rc);
  require_dir(pred_dir);
  prepare_out(c.out, rc);
  std::vector<LesionStats> all;
  for (const auto& cs : cases) {
    auto s = analyze_lesions(read_prediction(pred_dir, cs.id), cs.mask, cs.id);
    all.insert(all.end(), s.begin(), s.end());
  }
  detail::write_file(c.out + "/lesions.tsv", lesion_table_tsv(all));
  const std::string strata = strata_tsv(stratify(all));
  detail::write_file(c.out + "/strata.tsv", strata);
  std::cout << strata;
  return 0;
}

int cmd_ablate(const Common& c, const std::string& data, const std::string& axis_text, std::vector<std::size_t> arms) {
  const RunConfig rc = resolve(c);
  const AblationAxis axis = parse_axis(axis_text);
  const auto cases = load_cases(data, rc);
  prepare_out(c.out, rc);
  if (arms.empty()) arms = default_arms(axis);
  AblationOptions opt = rc.ablation;
  opt.log = log_line;
  const AblationTable t = ablation_run(axis, arms, rc.experiment, cases, opt);
  std::string seeds = axis_name(axis) + "\tseed\tDSC_liver\tDSC_lesion\n";
  for (const auto& r : t.rows)
    for (const auto& s : r.seeds)
      seeds += std::to_string(r.arm) + "\t" + std::to_string(s.seed) + "\t" + fmt_num(s.dice_liver.mean) + "\t" +
               fmt_num(s.dice_lesion.mean) + "\n";
  detail::write_file(c.out + "/ablation.tsv", ablation_table_text(t));
  detail::write_file(c.out + "/ablation_seeds.tsv", seeds);
  std::cout << ablation_table_text(t);
  return 0;
}

int report_error(ErrorCode code, const std::string& msg) {
  std::string m;
  for (char ch : msg) m += (ch == '"' ? '\'' : (ch == '\n' ? ' ' : ch));
  std::cerr << "error code=" << static_cast<int>(code) << " kind=" << error_code_name(code) << " message=\"" << m << "\"\n";
  return static_cast<int>(code);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"swtr: hybrid CNN/transformer liver and lesion segmentation on phantom and user volumes"};
  app.require_subcommand(1);

  Common common;
  std::string data, weights, pred, axis;
  std::vector<std::size_t> folds, arms;

  auto* gen = app.add_subcommand("phantom-gen", "generate a synthetic phantom cohort");
  add_common(gen, common);
  auto* pre = app.add_subcommand("preprocess", "CLAHE, resampling and intensity normalization of a cohort");
  add_common(pre, common);
  pre->add_option("--data", data, "cohort directory")->required();
  auto* train = app.add_subcommand("train", "k-fold cross-validated training");
  add_common(train, common);
  train->add_option("--data", data, "cohort directory")->required();
  train->add_option("--folds", folds, "train only these folds (default all)")->delimiter(',');
  auto* eval = app.add_subcommand("evaluate", "patient-wise Dice, Hausdorff and FP rate");
  add_common(eval, common);
  eval->add_option("--data", data, "cohort directory with reference masks")->required();
  eval->add_option("--weights", weights, "weight file to predict with");
  eval->add_option("--pred", pred, "directory of <id>.msk predictions");
  auto* analyze = app.add_subcommand("analyze", "per-lesion shape, size and location strata");
  add_common(analyze, common);
  analyze->add_option("--data", data, "cohort directory with reference masks")->required();
  analyze->add_option("--pred", pred, "directory of <id>.msk predictions")->required();
  auto* ablate = app.add_subcommand("ablate", "ablation over skips, layers or train_cases");
  add_common(ablate, common);
  ablate->add_option("--data", data, "cohort directory")->required();
  ablate->add_option("--axis", axis, "skips | layers | train_cases")->required();
  ablate->add_option("--arms", arms, "arm values (default per axis)")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(ErrorCode::kConfig, e.what());
  }

  try {
    if (*gen) return cmd_phantom_gen(common);
    if (*pre) return cmd_preprocess(common, data);
    if (*train) return cmd_train(common, data, folds);
    if (*eval) return cmd_evaluate(common, data, weights, pred);
    if (*analyze) return cmd_analyze(common, data, pred);
    if (*ablate) return cmd_ablate(common, data, axis, arms);
  } catch (const Error& e) {
    return report_error(e.code(), e.what());
  } catch (const std::exception& e) {
    return report_error(ErrorCode::kIo, e.what());
  }
  return 0;
}
