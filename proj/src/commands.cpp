#include "mgfc/commands.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <algorithm>

namespace mgfc {

namespace {

namespace fs = std::filesystem;

std::string fixed(double v, int digits = 4) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

void check_dataset(const DatasetInfo& info, const ModelConfig& mc) {
  if (info.classes != mc.classes)
    throw ConfigError("dataset has " + std::to_string(info.classes) + " classes, model is configured for " +
                      std::to_string(mc.classes));
  if (info.height != mc.backbone.image_height || info.width != mc.backbone.image_width)
    throw ConfigError("dataset images are " + dims_string(info.height, info.width) + ", backbone expects " +
                      dims_string(mc.backbone.image_height, mc.backbone.image_width));
}

template <typename S>
int train_as(const RunConfig& cfg, const fs::path& data_root, const fs::path& out_dir, std::ostream& out,
             const TrainHooks& hooks) {
  const ModelConfig mc = cfg.model();
  const TrainOptions opt = cfg.train();
  const DatasetInfo info = read_dataset_info(data_root);
  check_dataset(info, mc);
  const auto data = prepare_samples<S>(load_split(data_root, "source", opt.limit), mc);

  Model<S> model(mc);
  fs::create_directories(out_dir);
  {
    std::ofstream c(out_dir / "config.txt");
    c << "# content hash " << cfg.content_hash() << '\n' << cfg.resolved_text();
    if (!c) throw DataError("cannot write " + (out_dir / "config.txt").string());
  }
  out << "config hash " << cfg.content_hash() << '\n' << cfg.resolved_text();
  out << "frozen hash " << to_hex(frozen_hash(model)) << '\n';
  out << "training on " << data.size() << " source samples, " << model.trainable_parameters().size()
      << " trainable tensors\n";

  std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::trunc);
  if (!metrics) throw DataError("cannot write " + (out_dir / "metrics.jsonl").string());
  const auto records = train_model(model, data, opt, &out_dir, &metrics, hooks);
  for (const auto& r : records)
    out << "iter " << r.iter << " loss " << fixed(r.loss) << " miou " << fixed(r.report.mean) << '\n';
  out << "wrote " << (out_dir / "checkpoint.mgc").string() << '\n';
  return kExitOk;
}

template <typename S>
int eval_as(const EvalOptions& opt, std::ostream& out) {
  const RunConfig cfg = opt.config ? *opt.config : RunConfig::from_file(opt.checkpoint.parent_path() / "config.txt");
  const ModelConfig mc = cfg.model();
  const DatasetInfo info = read_dataset_info(opt.data_root);
  check_dataset(info, mc);

  Model<S> model(mc);
  const Checkpoint ckpt = read_checkpoint(opt.checkpoint, frozen_hash(model));
  load_checkpoint(model, ckpt);
  const auto data = prepare_samples<S>(load_split(opt.data_root, opt.domain, opt.limit), mc);
  if (data.empty()) throw DataError("split '" + opt.domain + "' has no samples");

  const MiouReport r = miou(evaluate(model, data, opt.workers));
  const auto names = default_categories(mc.classes);
  out << "domain " << opt.domain << " samples " << data.size() << '\n';
  for (std::size_t c = 0; c < r.iou.size(); ++c) out << "class " << names[c] << " iou " << fixed(r.iou[c]) << '\n';
  out << "miou " << fixed(r.mean) << " pixel_accuracy " << fixed(r.pixel_accuracy) << '\n';
  return kExitOk;
}

}  // namespace

int run_guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ParameterError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IntegrityError& e) {
    err << "integrity error: " << e.what() << '\n';
    return kExitData;
  } catch (const FormatError& e) {
    err << "format error at byte " << e.offset() << ": " << e.what() << '\n';
    return kExitData;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitCheckFailed;
  }
}

int cmd_gendata(const RunConfig& cfg, const fs::path& out_root, std::ostream& out) {
  const DatasetConfig dc = cfg.dataset();
  write_dataset(out_root, dc);
  out << "wrote " << dc.source_count << " source and " << dc.target_count << " target samples to " << out_root.string()
      << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const fs::path& data_root, const fs::path& out_dir, std::ostream& out,
              const TrainHooks& hooks) {
  if (precision_from_env() == Precision::f64) return train_as<double>(cfg, data_root, out_dir, out, hooks);
  return train_as<float>(cfg, data_root, out_dir, out, hooks);
}

int cmd_eval(const EvalOptions& opt, std::ostream& out) {
  if (precision_from_env() == Precision::f64) return eval_as<double>(opt, out);
  return eval_as<float>(opt, out);
}

int cmd_gradcheck(const GradSuiteOptions& opt, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const GradSuiteReport report = run_grad_suite(opt);
  std::size_t failed = 0;
  for (const auto& line : report.lines) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-36s max_rel_error %.3e  %s", line.name.c_str(), line.max_rel_error,
                  line.passed ? "ok" : "FAIL");
    out << buf << '\n';
    if (!line.passed) ++failed;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << report.lines.size() - failed << "/" << report.lines.size() << " checks passed over " << opt.seeds
      << " seeds, tolerance " << opt.tolerance << ", " << fixed(secs, 1) << " s\n";
  return report.passed ? kExitOk : kExitCheckFailed;
}

int cmd_inspect(const fs::path& path, std::ostream& out) {
  const auto bytes = read_file(path);
  auto dims = [](const Blob& b) {
    std::string s;
    for (std::size_t i = 0; i < b.dims.size(); ++i) s += (i ? "x" : "") + std::to_string(b.dims[i]);
    return s.empty() ? std::string("scalar") : s;
  };
  if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, "MGT1")) {
    const Blob b = read_tensor(path);
    out << "tensor " << dims(b) << " (" << b.element_count() << " values)\n";
    return kExitOk;
  }
  const Checkpoint c = decode_checkpoint(bytes);
  out << "checkpoint " << c.entries.size() << " tensors\n";
  for (const auto& e : c.entries) out << "  " << e.name << " " << dims(e.blob) << '\n';
  out << "frozen hash " << to_hex(c.frozen_hash) << '\n';
  return kExitOk;
}

}  // namespace mgfc
