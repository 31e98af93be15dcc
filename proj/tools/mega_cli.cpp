#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <string>

#include "mega/mega.hpp"

namespace {

using namespace mega;

void set_workers(int workers) {
  if (workers > 0) ThreadPool::instance().set_workers(workers);
}

int cmd_synth(const std::string& preset, const std::string& out_dir, uint64_t seed,
              int orbit_blobs, int static_blobs, int transient_blobs) {
  SynthConfig cfg = parse_preset(preset);
  cfg.seed = seed;
  if (orbit_blobs >= 0) cfg.orbit_blobs = orbit_blobs;
  if (static_blobs >= 0) cfg.static_blobs = static_blobs;
  if (transient_blobs >= 0) cfg.transient_blobs = transient_blobs;
  const SynthResult res = synth(cfg, out_dir);
  std::cout << "synth: wrote " << res.files_written << " frames, "
            << res.ground_truth.count() << " ground-truth gaussians to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out_model, long iters,
              double lambda, double kappa, bool no_deform, bool no_entropy, uint64_t seed,
              int init_count, const std::string& log_path) {
  const Dataset ds = load_dataset(data_dir);
  TrainConfig cfg;
  cfg.iterations = iters;
  cfg.lambda = lambda;
  cfg.kappa = no_entropy ? 0.0 : kappa;
  cfg.use_deform = !no_deform;
  cfg.seed = seed;
  if (init_count > 0) cfg.init_count = init_count;
  const TrainedModel model = train(ds.load_views(), ds.box, cfg);

  int saturations = 0;
  save_model_file(out_model, model.cloud,
                  model.deform ? &*model.deform : nullptr,
                  model.color ? &*model.color : nullptr, &saturations);
  if (saturations > 0)
    std::cerr << "warning: " << saturations << " fp16 saturations while saving\n";

  const std::string log_file = log_path.empty() ? out_model + ".log" : log_path;
  std::ofstream log_out(log_file);
  if (!log_out) throw IoError("cannot write train log: " + log_file);
  model.log.write(log_out);

  const double final_l1 = model.log.entries.empty() ? 0.0 : model.log.entries.back().l1;
  std::cout << "train: " << model.cloud.count() << " gaussians after " << iters
            << " iterations, final l1 " << final_l1 << ", model " << out_model << ", log "
            << log_file << "\n";
  return 0;
}

int cmd_render(const std::string& model_path, const std::string& data_dir, int camera_idx,
               double time, const std::string& out_img) {
  const LoadedModel model = load_model_any_file(model_path);
  const Dataset ds = load_dataset(data_dir);
  if (camera_idx < 0 || camera_idx >= static_cast<int>(ds.cameras.size()))
    throw InvalidParameter("render: camera index " + std::to_string(camera_idx) +
                           " out of range (dataset has " + std::to_string(ds.cameras.size()) +
                           " cameras)");
  if (time < 0.0 || time > 1.0) throw InvalidParameter("render: time outside [0,1]");
  Camera cam = ds.cameras[camera_idx];
  cam.time = time;
  const Image img = rasterize(model.cloud, model.deform ? &*model.deform : nullptr,
                              model.color ? &*model.color : nullptr, cam);
  write_ppm(img, out_img);
  std::cout << "render: wrote " << out_img << "\n";
  return 0;
}

int cmd_compress(const std::string& in_path, const std::string& out_path) {
  const std::vector<uint8_t> bytes = read_file_bytes(in_path);
  const LoadedModel model = load_model_raw(bytes);
  int saturations = 0;
  save_model_file(out_path, model.cloud, model.deform ? &*model.deform : nullptr,
                  model.color ? &*model.color : nullptr, &saturations);
  if (saturations > 0)
    std::cerr << "warning: " << saturations << " fp16 saturations while compressing\n";
  const SizeReport rep = size_report(read_file_bytes(out_path));
  std::cout << "compress: " << bytes.size() << " -> " << rep.file_bytes << " bytes ("
            << rep.count << " gaussians, payload " << rep.payload_bytes << ", deflated "
            << rep.compressed_bytes << ")\n";
  return 0;
}

int cmd_decompress(const std::string& in_path, const std::string& out_path) {
  const LoadedModel model = load_model_file(in_path);
  const std::vector<uint8_t> raw = save_model_raw(
      model.cloud, model.deform ? &*model.deform : nullptr,
      model.color ? &*model.color : nullptr);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + out_path);
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("write failed: " + out_path);
  std::cout << "decompress: wrote " << raw.size() << " bytes to " << out_path << "\n";
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_dir,
             const std::string& out_path) {
  const LoadedModel model = load_model_any_file(model_path);
  const Dataset ds = load_dataset(data_dir);
  MetricsReport report;
  for (int i = 0; i < ds.frame_count(); ++i) {
    const Camera cam = ds.frame_camera(i);
    const Image target = ds.load_frame(i);
    const Image rendered = rasterize(model.cloud, model.deform ? &*model.deform : nullptr,
                                     model.color ? &*model.color : nullptr, cam);
    FrameMetrics fm;
    fm.file = ds.frames[i].file;
    fm.psnr = psnr(rendered, target, 1.0);
    fm.dssim1 = dssim(rendered, target, 1);
    fm.dssim2 = dssim(rendered, target, 2);
    report.frames.push_back(std::move(fm));
  }
  report.finalize();

  nlohmann::json j;
  j["model"] = model_path;
  j["data"] = data_dir;
  j["frames"] = nlohmann::json::array();
  for (const auto& f : report.frames) {
    nlohmann::json fj;
    fj["file"] = f.file;
    if (f.psnr.infinite)
      fj["psnr"] = nullptr;
    else
      fj["psnr"] = f.psnr.db;
    fj["psnr_infinite"] = f.psnr.infinite;
    fj["dssim1"] = f.dssim1;
    fj["dssim2"] = f.dssim2;
    j["frames"].push_back(fj);
  }
  j["average"]["psnr"] = report.avg_psnr;
  j["average"]["infinite_psnr_frames"] = report.infinite_psnr_frames;
  j["average"]["dssim1"] = report.avg_dssim1;
  j["average"]["dssim2"] = report.avg_dssim2;
  j["metadata"]["dssim_formula"] = "(1-ssim)/2";
  j["metadata"]["dssim1_data_range"] = 1.0;
  j["metadata"]["dssim2_data_range"] = 2.0;
  j["metadata"]["ssim_window"] = 11;
  j["metadata"]["ssim_sigma"] = 1.5;
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot write report: " + out_path);
  out << j.dump(2) << "\n";
  std::cout << "eval: " << report.frames.size() << " frames, avg psnr " << report.avg_psnr
            << " dB, report " << out_path << "\n";
  return 0;
}

int cmd_analyze(const std::string& model_path, int times, const std::string& out_path,
                const std::string& data_dir, double threshold, const std::string& train_log,
                const std::string& counts_out) {
  bool did_something = false;
  if (!model_path.empty()) {
    if (out_path.empty()) throw InvalidParameter("analyze: --out is required with --model");
    if (times < 1) throw InvalidParameter("analyze: --times must be >= 1");
    const LoadedModel model = load_model_any_file(model_path);
    std::vector<double> ts;
    for (int i = 0; i < times; ++i)
      ts.push_back(times == 1 ? 0.5 : static_cast<double>(i) / (times - 1));
    std::vector<double> ratios;
    if (model.deform && !data_dir.empty()) {
      const Dataset ds = load_dataset(data_dir);
      if (ds.cameras.empty()) throw ManifestError("manifest: dataset has no cameras");
      ratios = participation_ratio(model.cloud, ts, threshold, &*model.deform, &ds.cameras[0]);
    } else {
      ratios = participation_ratio(model.cloud, ts, threshold);
    }
    std::ofstream out(out_path);
    if (!out) throw IoError("cannot write csv: " + out_path);
    out << "time,participation_ratio\n";
    for (size_t i = 0; i < ts.size(); ++i) out << ts[i] << "," << ratios[i] << "\n";
    std::cout << "analyze: wrote " << ts.size() << " participation samples to " << out_path
              << "\n";
    did_something = true;
  }
  if (!train_log.empty()) {
    if (counts_out.empty())
      throw InvalidParameter("analyze: --counts-out is required with --train-log");
    std::ifstream in(train_log);
    if (!in) throw IoError("cannot open train log: " + train_log);
    std::ofstream out(counts_out);
    if (!out) throw IoError("cannot write csv: " + counts_out);
    out << "iteration,count\n";
    std::string line;
    long rows = 0;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      long iter, count;
      double l1, ssim_l, lopa;
      if (std::sscanf(line.c_str(), "%ld %lf %lf %lf %ld", &iter, &l1, &ssim_l, &lopa,
                      &count) != 5)
        throw IoError("malformed train log line: " + line);
      out << iter << "," << count << "\n";
      ++rows;
    }
    std::cout << "analyze: wrote " << rows << " count samples to " << counts_out << "\n";
    did_something = true;
  }
  if (!did_something)
    throw InvalidParameter("analyze: nothing to do (pass --model or --train-log)");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Memory-efficient 4D Gaussian splatting toolkit"};
  app.require_subcommand(1);
  int workers = 0;
  app.add_option("--workers", workers, "worker thread count (0 = hardware default)");

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string preset = "orbit-3cam-8frames-64px", synth_out;
  uint64_t synth_seed = 0;
  int orbit_blobs = -1, static_blobs = -1, transient_blobs = -1;
  synth_cmd->add_option("--preset", preset, "orbit[-<N>cam][-<M>frames][-<K>px]");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--seed", synth_seed, "rng seed");
  synth_cmd->add_option("--orbit-blobs", orbit_blobs, "number of orbiting blobs");
  synth_cmd->add_option("--static-blobs", static_blobs, "number of static blobs");
  synth_cmd->add_option("--transient-blobs", transient_blobs, "number of transient blobs");

  auto* train_cmd = app.add_subcommand("train", "optimize a model on a dataset");
  std::string train_data, train_out, train_log;
  long iters = 3000;
  double lambda = 0.2, kappa = 5e-4;
  bool no_deform = false, no_entropy = false;
  uint64_t train_seed = 0;
  int init_count = 0;
  train_cmd->add_option("--data", train_data, "dataset directory")->required();
  train_cmd->add_option("--out", train_out, "output model archive")->required();
  train_cmd->add_option("--iters", iters, "iteration count");
  train_cmd->add_option("--lambda", lambda, "ssim weight");
  train_cmd->add_option("--kappa", kappa, "opacity entropy weight");
  train_cmd->add_flag("--no-deform", no_deform, "disable the deformation predictor");
  train_cmd->add_flag("--no-entropy", no_entropy, "disable the opacity entropy loss");
  train_cmd->add_option("--seed", train_seed, "rng seed");
  train_cmd->add_option("--init-count", init_count, "initial gaussian count");
  train_cmd->add_option("--log", train_log, "train log path (default: <out>.log)");

  auto* render_cmd = app.add_subcommand("render", "render one view of a model");
  std::string render_model, render_data, render_out;
  int camera_idx = 0;
  double render_time = 0.0;
  render_cmd->add_option("--model", render_model, "model archive")->required();
  render_cmd->add_option("--data", render_data, "dataset directory (cameras)")->required();
  render_cmd->add_option("--camera", camera_idx, "camera index");
  render_cmd->add_option("--time", render_time, "query time in [0,1]");
  render_cmd->add_option("--out", render_out, "output image (ppm)")->required();

  auto* compress_cmd = app.add_subcommand("compress", "raw model -> MEG4 archive");
  std::string comp_in, comp_out;
  compress_cmd->add_option("--in", comp_in, "raw model (MEGR)")->required();
  compress_cmd->add_option("--out", comp_out, "output archive (MEG4)")->required();

  auto* decompress_cmd = app.add_subcommand("decompress", "MEG4 archive -> raw model");
  std::string decomp_in, decomp_out;
  decompress_cmd->add_option("--in", decomp_in, "model archive (MEG4)")->required();
  decompress_cmd->add_option("--out", decomp_out, "output raw model (MEGR)")->required();

  auto* eval_cmd = app.add_subcommand("eval", "psnr/dssim report against a dataset");
  std::string eval_model, eval_data, eval_out;
  eval_cmd->add_option("--model", eval_model, "model archive")->required();
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--out", eval_out, "report json path")->required();

  auto* analyze_cmd = app.add_subcommand("analyze", "participation ratio and count curves");
  std::string an_model, an_out, an_data, an_log, an_counts;
  int an_times = 16;
  double an_threshold = 0.05;
  analyze_cmd->add_option("--model", an_model, "model archive");
  analyze_cmd->add_option("--times", an_times, "number of time samples");
  analyze_cmd->add_option("--out", an_out, "participation csv path");
  analyze_cmd->add_option("--data", an_data, "dataset directory (camera for deformation)");
  analyze_cmd->add_option("--threshold", an_threshold, "temporal opacity threshold");
  analyze_cmd->add_option("--train-log", an_log, "train log to convert");
  analyze_cmd->add_option("--counts-out", an_counts, "gaussian-count csv path");

  try {
    app.parse(argc, argv);
    set_workers(workers);
    if (*synth_cmd)
      return cmd_synth(preset, synth_out, synth_seed, orbit_blobs, static_blobs,
                       transient_blobs);
    if (*train_cmd)
      return cmd_train(train_data, train_out, iters, lambda, kappa, no_deform, no_entropy,
                       train_seed, init_count, train_log);
    if (*render_cmd)
      return cmd_render(render_model, render_data, camera_idx, render_time, render_out);
    if (*compress_cmd) return cmd_compress(comp_in, comp_out);
    if (*decompress_cmd) return cmd_decompress(decomp_in, decomp_out);
    if (*eval_cmd) return cmd_eval(eval_model, eval_data, eval_out);
    if (*analyze_cmd)
      return cmd_analyze(an_model, an_times, an_out, an_data, an_threshold, an_log, an_counts);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  } catch (const mega::InvalidParameter& e) {
    std::cerr << "error: invalid-parameter: " << e.what() << "\n";
    return 1;
  } catch (const mega::ManifestError& e) {
    std::cerr << "error: manifest: " << e.what() << "\n";
    return 1;
  } catch (const mega::ArchiveError& e) {
    std::cerr << "error: archive: " << e.what() << "\n";
    return 1;
  } catch (const mega::ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 1;
  } catch (const mega::StateError& e) {
    std::cerr << "error: state: " << e.what() << "\n";
    return 1;
  } catch (const mega::IoError& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
