// Command-line front end: gram, match, classify, reconstruct, eval.
// Every file-producing subcommand writes a .manifest.json next to its output
// with the resolved configuration and input fingerprints, so runs can be
// reproduced exactly.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nvf/krr.hpp"
#include "nvf/matching.hpp"
#include "nvf/reconstruct.hpp"
#include "nvf/varifold.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

using nlohmann::json;

std::string file_fingerprint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  std::ostringstream hex;
  hex << std::hex << nvf::fnv1a(bytes.data(), bytes.size());
  return hex.str();
}

void write_manifest(const std::string& out_path, const std::string& subcommand, const json& config,
                    std::uint64_t seed, const std::vector<std::string>& inputs) {
  json m;
  m["subcommand"] = subcommand;
  m["config"] = config;
  m["seed"] = seed;
  m["version"] = kVersion;
  m["threads"] = nvf::thread_count();
  json in = json::array();
  for (const auto& p : inputs) in.push_back({{"path", p}, {"fnv1a", file_fingerprint(p)}});
  m["inputs"] = in;
  std::ofstream out(out_path + ".manifest.json");
  if (!out) throw std::runtime_error("cannot write " + out_path + ".manifest.json");
  out << m.dump(2) << '\n';
}

nvf::KernelConfig kernel_from_flags(const std::string& kernel, int depth, double ct_sigma, const std::string& agg) {
  nvf::KernelConfig cfg;
  if (kernel == "ntk1")
    cfg = nvf::KernelConfig::ntk1(depth > 0 ? depth : 5);
  else if (kernel == "ntk2")
    cfg = nvf::KernelConfig::ntk2(depth > 0 ? depth : 9);
  else if (kernel == "ct")
    cfg = nvf::KernelConfig::ct(ct_sigma);
  else
    throw CLI::ValidationError("--kernel", "expected ntk1, ntk2, or ct");
  if (agg == "sum")
    cfg.aggregation = nvf::Aggregation::Sum;
  else if (agg != "mean")
    throw CLI::ValidationError("--agg", "expected mean or sum");
  return cfg;
}

double lambda_from_flag(const std::string& text) {
  if (text == "auto") return nvf::kAutoLambda;
  try {
    return std::stod(text);
  } catch (...) {
    throw CLI::ValidationError("--lambda", "expected a number or 'auto'");
  }
}

json kernel_json(const nvf::KernelConfig& cfg) {
  return {{"kernel", nvf::family_name(cfg.family)},
          {"depth", cfg.depth},
          {"ct_sigma", cfg.ct_sigma},
          {"agg", cfg.aggregation == nvf::Aggregation::Mean ? "mean" : "sum"}};
}

struct GramArgs {
  std::vector<std::string> clouds;
  std::string out = "gram.csv";
  std::string kernel = "ntk1";
  int depth = 0;
  double ct_sigma = 0.3;
  std::string agg = "mean";
  bool no_normalize = false;
};

int run_gram(const GramArgs& a) {
  nvf::KernelConfig cfg = kernel_from_flags(a.kernel, a.depth, a.ct_sigma, a.agg);
  std::vector<nvf::OrientedPointCloud> clouds;
  clouds.reserve(a.clouds.size());
  for (const auto& p : a.clouds) {
    nvf::OrientedPointCloud c = nvf::load_xyzn(p);
    clouds.push_back(a.no_normalize ? c : nvf::normalize_unit_sphere(c));
  }
  nvf::CloudGram gram = nvf::self_cloud_gram(clouds, cfg);
  nvf::save_gram_csv(gram, a.out);
  json config = kernel_json(cfg);
  config["normalize"] = !a.no_normalize;
  config["out"] = a.out;
  write_manifest(a.out, "gram", config, 0, a.clouds);
  return 0;
}

struct EvalArgs {
  std::string metric = "cd";
  std::string a, b;
  std::string kernel = "ntk1";
  int depth = 0;
  double ct_sigma = 0.3;
  std::string agg = "mean";
  std::string csv;
  bool no_normalize = false;
};

int run_eval(const EvalArgs& args) {
  nvf::OrientedPointCloud ca = nvf::load_xyzn(args.a);
  nvf::OrientedPointCloud cb = nvf::load_xyzn(args.b);
  if (!args.no_normalize) {
    ca = nvf::normalize_unit_sphere(ca);
    cb = nvf::normalize_unit_sphere(cb);
  }
  double value = 0.0;
  if (args.metric == "cd") {
    value = nvf::chamfer(ca.positions, cb.positions);
  } else if (args.metric == "emd") {
    value = nvf::emd_exact(ca.positions, cb.positions).cost;
  } else if (args.metric == "vfd") {
    value = nvf::varifold_distance(ca, cb, kernel_from_flags(args.kernel, args.depth, args.ct_sigma, args.agg));
  } else {
    throw CLI::ValidationError("--metric", "expected cd, emd, or vfd");
  }
  std::cout.precision(17);
  std::cout << value << '\n';
  if (!args.csv.empty()) {
    std::ofstream out(args.csv);
    if (!out) throw std::runtime_error("cannot write " + args.csv);
    out.precision(17);
    out << "metric,a,b,value\n" << args.metric << ',' << args.a << ',' << args.b << ',' << value << '\n';
    json config = {{"metric", args.metric}, {"normalize", !args.no_normalize}};
    if (args.metric == "vfd") config.update(kernel_json(kernel_from_flags(args.kernel, args.depth, args.ct_sigma, args.agg)));
    write_manifest(args.csv, "eval", config, 0, {args.a, args.b});
  }
  return 0;
}

struct ClassifyArgs {
  std::string dataset;
  std::string kernel = "ntk1";
  int depth = 0;
  double ct_sigma = 0.3;
  std::string agg = "mean";
  int nway = 5, kshot = 5, qquery = 15, episodes = 700;
  std::string lambda = "auto";
  std::uint64_t seed = 0;
  std::string out;
  bool no_normalize = false;
};

int run_classify(const ClassifyArgs& a) {
  nvf::KernelConfig cfg = kernel_from_flags(a.kernel, a.depth, a.ct_sigma, a.agg);
  nvf::LabeledCloudSet set = nvf::load_cloud_dataset(a.dataset, !a.no_normalize);
  nvf::EpisodeSpec spec{a.nway, a.kshot, a.qquery, a.episodes, a.seed};
  nvf::EpisodeResult result = nvf::run_episodes(set, spec, cfg, lambda_from_flag(a.lambda));
  std::cout.precision(17);
  std::cout << "accuracy " << result.mean_accuracy << " ci95 " << result.ci95_half_width << '\n';
  if (!a.out.empty()) {
    std::ofstream out(a.out);
    if (!out) throw std::runtime_error("cannot write " + a.out);
    out.precision(17);
    out << "episode,accuracy\n";
    for (std::size_t e = 0; e < result.per_episode.size(); ++e) out << e << ',' << result.per_episode[e] << '\n';
    json config = kernel_json(cfg);
    config["nway"] = a.nway;
    config["kshot"] = a.kshot;
    config["qquery"] = a.qquery;
    config["episodes"] = a.episodes;
    config["lambda"] = a.lambda;
    config["normalize"] = !a.no_normalize;
    config["dataset"] = a.dataset;
    write_manifest(a.out, "classify", config, a.seed, {});
  }
  return 0;
}

struct MatchArgs {
  std::string source, target;
  std::string loss = "ntk1";
  int iters = 500;
  double lr = 1e-3;
  int depth = 0;
  double ct_sigma = 0.3;
  std::uint64_t seed = 0;
  std::string out = "deformed.off";
  std::string trace;
};

int run_match(const MatchArgs& a) {
  nvf::MatchConfig cfg;
  if (a.loss == "cd")
    cfg.loss = nvf::LossFamily::CD;
  else if (a.loss == "emd")
    cfg.loss = nvf::LossFamily::EMD;
  else if (a.loss == "ct")
    cfg.loss = nvf::LossFamily::CT;
  else if (a.loss == "ntk1")
    cfg.loss = nvf::LossFamily::NTK1;
  else if (a.loss == "ntk2")
    cfg.loss = nvf::LossFamily::NTK2;
  else
    throw CLI::ValidationError("--loss", "expected cd, emd, ct, ntk1, or ntk2");
  cfg.iterations = a.iters;
  cfg.learning_rate = a.lr;
  cfg.seed = a.seed;
  if (a.depth > 0) cfg.ntk_depth = a.depth;
  else if (cfg.loss == nvf::LossFamily::NTK2) cfg.ntk_depth = 9;
  cfg.ct_sigma = a.ct_sigma;

  nvf::TriangleMesh source = nvf::load_mesh(a.source);
  nvf::TriangleMesh target = nvf::load_mesh(a.target);
  nvf::MatchTrace trace = nvf::match_shapes(source, target, cfg);
  nvf::save_mesh(trace.deformed, a.out);
  if (!a.trace.empty()) {
    std::ofstream out(a.trace);
    if (!out) throw std::runtime_error("cannot write " + a.trace);
    out.precision(17);
    out << "iter,loss,seconds\n";
    for (std::size_t i = 0; i < trace.loss.size(); ++i) out << i << ',' << trace.loss[i] << ',' << trace.seconds[i] << '\n';
  }
  json config = {{"loss", a.loss},        {"iters", a.iters},       {"lr", a.lr},
                 {"depth", cfg.ntk_depth}, {"ct_sigma", a.ct_sigma}, {"out", a.out}};
  write_manifest(a.out, "match", config, a.seed, {a.source, a.target});
  return 0;
}

struct ReconstructArgs {
  std::string in;
  std::string out = "mesh.obj";
  double delta = 0.01;
  int grid = 128;
  int depth = 1;
  std::string lambda = "auto";
  double padding = 0.1;
  bool normalize = false;
  bool with_normals = false;
};

int run_reconstruct(const ReconstructArgs& a) {
  nvf::OrientedPointCloud cloud = nvf::load_xyzn(a.in);
  if (a.normalize) cloud = nvf::normalize_unit_sphere(cloud);
  nvf::ReconstructConfig cfg;
  cfg.delta = a.delta;
  cfg.grid_resolution = a.grid;
  cfg.depth = a.depth;
  cfg.lambda = lambda_from_flag(a.lambda);
  cfg.padding = a.padding;
  cfg.use_normals = a.with_normals;
  nvf::TriangleMesh mesh = nvf::reconstruct_surface(cloud, cfg);
  nvf::save_mesh(mesh, a.out);
  json config = {{"delta", a.delta},   {"grid", a.grid},           {"depth", a.depth},
                 {"lambda", a.lambda}, {"padding", a.padding},     {"normalize", a.normalize},
                 {"out", a.out},       {"use_normals", a.with_normals}};
  write_manifest(a.out, "reconstruct", config, 0, {a.in});
  return 0;
}

void add_kernel_flags(CLI::App* cmd, std::string& kernel, int& depth, double& ct_sigma, std::string& agg) {
  cmd->add_option("--kernel", kernel, "ntk1, ntk2, or ct");
  cmd->add_option("--depth", depth, "network depth (0 = family default)");
  cmd->add_option("--sigma,--ct-sigma", ct_sigma, "ct positional bandwidth");
  cmd->add_option("--agg", agg, "cloud aggregation: mean or sum");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neural-kernel point-cloud toolkit"};
  app.require_subcommand(1);

  int threads = 0;
  app.add_option("--threads", threads, "worker thread cap (env VARIFOLD_THREADS)");

  GramArgs gram;
  auto* gram_cmd = app.add_subcommand("gram", "pairwise cloud-kernel matrix to CSV");
  gram_cmd->add_option("clouds", gram.clouds, "input .xyzn files")->required()->expected(-1);
  gram_cmd->add_option("--out", gram.out, "output CSV path");
  add_kernel_flags(gram_cmd, gram.kernel, gram.depth, gram.ct_sigma, gram.agg);
  gram_cmd->add_flag("--no-normalize", gram.no_normalize, "skip unit-sphere normalization");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "distance between two clouds");
  eval_cmd->add_option("--metric", ev.metric, "cd, emd, or vfd");
  eval_cmd->add_option("--a", ev.a, "first .xyzn cloud")->required();
  eval_cmd->add_option("--b", ev.b, "second .xyzn cloud")->required();
  add_kernel_flags(eval_cmd, ev.kernel, ev.depth, ev.ct_sigma, ev.agg);
  eval_cmd->add_option("--csv", ev.csv, "also append a CSV row here");
  eval_cmd->add_flag("--no-normalize", ev.no_normalize, "skip unit-sphere normalization");

  ClassifyArgs cls;
  auto* cls_cmd = app.add_subcommand("classify", "episodic few-shot evaluation");
  cls_cmd->add_option("--dataset", cls.dataset, "directory with one subdirectory per class")->required();
  add_kernel_flags(cls_cmd, cls.kernel, cls.depth, cls.ct_sigma, cls.agg);
  cls_cmd->add_option("--nway", cls.nway);
  cls_cmd->add_option("--kshot", cls.kshot);
  cls_cmd->add_option("--qquery", cls.qquery);
  cls_cmd->add_option("--episodes", cls.episodes);
  cls_cmd->add_option("--lambda", cls.lambda, "ridge strength or 'auto'");
  cls_cmd->add_option("--seed", cls.seed);
  cls_cmd->add_option("--out", cls.out, "per-episode accuracy CSV");
  cls_cmd->add_flag("--no-normalize", cls.no_normalize, "skip unit-sphere normalization");

  MatchArgs mat;
  auto* mat_cmd = app.add_subcommand("match", "deform a source mesh onto a target");
  mat_cmd->add_option("--source", mat.source, "source mesh (.obj/.off)")->required();
  mat_cmd->add_option("--target", mat.target, "target mesh (.obj/.off)")->required();
  mat_cmd->add_option("--loss", mat.loss, "cd, emd, ct, ntk1, or ntk2");
  mat_cmd->add_option("--iters", mat.iters);
  mat_cmd->add_option("--lr", mat.lr);
  mat_cmd->add_option("--depth", mat.depth, "kernel depth (0 = family default)");
  mat_cmd->add_option("--sigma,--ct-sigma", mat.ct_sigma);
  mat_cmd->add_option("--seed", mat.seed);
  mat_cmd->add_option("--out", mat.out, "deformed mesh path");
  mat_cmd->add_option("--trace", mat.trace, "loss trace CSV");

  ReconstructArgs rec;
  auto* rec_cmd = app.add_subcommand("reconstruct", "implicit surface from an oriented cloud");
  rec_cmd->add_option("--in", rec.in, "input .xyzn cloud")->required();
  rec_cmd->add_option("--out", rec.out, "output mesh path");
  rec_cmd->add_option("--delta", rec.delta, "off-surface offset");
  rec_cmd->add_option("--grid", rec.grid, "grid resolution per axis");
  rec_cmd->add_option("--depth", rec.depth, "kernel depth");
  rec_cmd->add_option("--lambda", rec.lambda, "ridge strength or 'auto'");
  rec_cmd->add_option("--padding", rec.padding, "bounding-box padding fraction");
  rec_cmd->add_flag("--normalize", rec.normalize, "unit-sphere normalize the input first");
  rec_cmd->add_flag("--with-normals", rec.with_normals, "multiply in the normal kernel factor (ablation)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (threads <= 0) {
    if (const char* env = std::getenv("VARIFOLD_THREADS")) threads = std::atoi(env);
  }
  if (threads > 0) nvf::set_thread_count(threads);

  try {
    if (gram_cmd->parsed()) return run_gram(gram);
    if (eval_cmd->parsed()) return run_eval(ev);
    if (cls_cmd->parsed()) return run_classify(cls);
    if (mat_cmd->parsed()) return run_match(mat);
    if (rec_cmd->parsed()) return run_reconstruct(rec);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
