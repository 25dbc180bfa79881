// lifwav: synthetic data, training, evaluation, inference and feature dumps
// for the lifting-wavelet radar-to-ECG network.
//
// exit codes: 0 ok, 1 selfcheck failure, 2 usage/config/data error,
// 3 numerical abort.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "lifwav/data.hpp"
#include "lifwav/errors.hpp"
#include "lifwav/run_config.hpp"
#include "lifwav/selfcheck.hpp"
#include "lifwav/training.hpp"

using namespace lifwav;
namespace fs = std::filesystem;

namespace {

constexpr int kExitFailedCheck = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

fs::path default_out_dir() {
  if (const char* env = std::getenv("LIFWAV_OUT_DIR"); env != nullptr && *env != '\0') return env;
  return "lifwav_out";
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- synth

struct SynthArgs {
  fs::path out;
  double seconds = 60.0;
  std::size_t recordings = 1;
  std::string format = "csv";
  SynthParams params;
};

void cmd_synth(const SynthArgs& a) {
  a.params.validate();
  if (!(a.seconds > 0.0)) throw ConfigError("seconds: must be positive");
  if (a.recordings == 0) throw ConfigError("recordings: must be at least 1");
  const SampleFormat format = a.format == "f32" ? SampleFormat::f32 : SampleFormat::csv;
  const std::string ext = format == SampleFormat::f32 ? ".f32" : ".csv";
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw DataError("cannot create " + a.out.string() + ": " + ec.message());

  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < a.recordings; ++i) {
    auto p = a.params;
    p.seed = a.params.seed + i;
    const auto pair = synthesize_pair(p, a.seconds);
    char stem[32];
    std::snprintf(stem, sizeof stem, "%03zu", i);
    const std::string radar = std::string("radar_") + stem + ext, ecg = std::string("ecg_") + stem + ext;
    write_signal(a.out / radar, format, pair.recording.radar, p.rate_hz);
    write_signal(a.out / ecg, format, pair.recording.ecg, p.rate_hz);
    write_json_file(a.out / (std::string("rpeaks_") + stem + ".json"),
                    {{"rate_hz", p.rate_hz}, {"r_peak_times_s", pair.r_peak_times}});
    entries.push_back({radar, fs::path(ecg), p.rate_hz, pair.recording.subject, "", format});
  }
  write_manifest(a.out / "manifest.json", entries);
  nlohmann::json echo = {{"command", "synth"},
                         {"seconds", a.seconds},
                         {"recordings", a.recordings},
                         {"format", a.format},
                         {"params", a.params}};
  write_json_file(a.out / "synth_config.json", echo);
  std::cout << "wrote " << a.recordings << " recording(s) to " << (a.out / "manifest.json").string() << '\n';
}

// ---- train / eval

struct TrainArgs {
  fs::path data, config, out, resume;
  std::string profile = "desk";
  std::optional<std::size_t> epochs, batch_size, checkpoint_interval;
  std::optional<double> learning_rate;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

void print_report(const std::string& label, const EvalReport& r) {
  std::cout << label << ": chunks " << r.chunks.size() << "  rho " << fmt("%.4f", r.mean_pearson) << "  mre "
            << (r.mean_mre ? fmt("%.4f", *r.mean_mre) : "n/a") << "  mae_hr "
            << (r.vitals.mae_hr ? fmt("%.2f bpm", *r.vitals.mae_hr) : "n/a") << "  mae_rmssd "
            << (r.vitals.mae_rmssd ? fmt("%.2f ms", *r.vitals.mae_rmssd) : "n/a") << '\n';
}

void cmd_train(const TrainArgs& a) {
  auto cfg = load_run_config(a.config, a.profile);
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.batch_size) cfg.train.batch_size = *a.batch_size;
  if (a.checkpoint_interval) cfg.train.checkpoint_interval = *a.checkpoint_interval;
  if (a.learning_rate) cfg.train.learning_rate = *a.learning_rate;
  if (a.seed) cfg.train.seed = *a.seed;
  cfg.validate();

  auto ds = load_dataset(a.data, cfg.model.input_length);
  for (const auto& w : ds.warnings) std::cerr << "warning: " << w << '\n';
  auto split = split_dataset(ds.chunks);
  std::erase_if(split.train, [](const SignalChunk& c) { return !c.has_ecg(); });
  if (split.train.empty()) throw DataError(a.data.string() + ": no training chunks with ground-truth ECG");

  fs::create_directories(a.out);
  write_json_file(a.out / "config.json", cfg);

  TrainState state{Model<float>::build(cfg.model, cfg.train.seed)};
  if (!a.resume.empty()) {
    state = load_checkpoint(a.resume);
    if (nlohmann::json(state.model.config()) != nlohmann::json(cfg.model)) {
      throw ConfigError("model: checkpoint " + a.resume.string() + " was trained with a different model config");
    }
  }
  std::cout << "training on " << split.train.size() << " chunk(s), holding out " << split.holdout.size()
            << "; " << state.model.parameters().count() << " parameters\n";

  TrainOptions opt;
  opt.out_dir = a.out;
  opt.holdout = split.holdout;
  const std::size_t every = std::max<std::size_t>(1, cfg.train.epochs / 20);
  opt.on_epoch = [&](const EpochRecord& r) {
    if (a.quiet || (r.epoch % every != 0 && r.epoch != state.epoch + 1 && !r.holdout_pearson)) return;
    std::cout << "epoch " << r.epoch << "  loss " << fmt("%.5f", r.total) << "  L_T " << fmt("%.5f", r.temporal)
              << "  L_S " << fmt("%.5f", r.spectral) << "  " << fmt("%.2fs", r.seconds);
    if (r.holdout_pearson) std::cout << "  holdout rho " << fmt("%.4f", *r.holdout_pearson);
    std::cout << '\n' << std::flush;
  };
  train(state, split.train, cfg.train, opt);

  const auto on_train = evaluate(state.model, split.train);
  print_report("train", on_train);
  nlohmann::json report = {{"train", on_train}};
  if (!split.holdout.empty()) {
    auto h = evaluate(state.model, split.holdout);
    print_report("holdout", h);
    report["holdout"] = h;
  }
  write_json_file(a.out / "report.json", report);
  std::cout << "checkpoint " << (a.out / "final.json").string() << '\n';
}

struct EvalArgs {
  fs::path data, ckpt, report;
};

void cmd_eval(const EvalArgs& a) {
  auto state = load_checkpoint(a.ckpt);
  auto ds = load_dataset(a.data, state.model.config().input_length);
  for (const auto& w : ds.warnings) std::cerr << "warning: " << w << '\n';
  auto report = evaluate(state.model, ds.chunks);
  if (report.chunks.empty()) throw DataError(a.data.string() + ": no chunks with ground-truth ECG to evaluate");
  if (report.excluded_without_ground_truth > 0) {
    std::cerr << "warning: " << report.excluded_without_ground_truth << " chunk(s) without ECG skipped\n";
  }
  write_json_file(a.report, report);
  print_report("eval", report);
}

// ---- infer / features

struct SignalArgs {
  fs::path radar, ckpt, out;
  double rate_hz = kTargetRateHz;
};

std::vector<SignalChunk> radar_chunks(const SignalArgs& a, std::size_t length) {
  const auto format = format_from_extension(a.radar);
  Recording rec;
  rec.radar = read_signal(a.radar, format, a.rate_hz);
  rec.rate_hz = a.rate_hz;
  rec.subject = a.radar.stem().string();
  auto chunks = chunk_recording(rec, length);
  const auto resampled = resample(rec.radar, a.rate_hz, kTargetRateHz).size();
  if (chunks.empty()) {
    throw DataError(a.radar.string() + ": " + std::to_string(resampled) + " samples at 200 Hz, need at least " +
                    std::to_string(length));
  }
  if (const std::size_t tail = resampled % length; tail != 0) {
    std::cerr << "warning: dropping the last " << tail << " sample(s) of " << a.radar.string()
              << " (not a whole chunk of " << length << ")\n";
  }
  return chunks;
}

void cmd_infer(const SignalArgs& a) {
  auto state = load_checkpoint(a.ckpt);
  auto chunks = radar_chunks(a, state.model.config().input_length);
  std::vector<double> out;
  for (const auto& c : chunks) {
    auto y = predict(state.model, c);
    out.insert(out.end(), y.begin(), y.end());
  }
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  write_signal(a.out, format_from_extension(a.radar), out, kTargetRateHz);
  std::cout << "wrote " << out.size() << " samples at 200 Hz to " << a.out.string() << '\n';
}

struct FeatureArgs {
  SignalArgs signal;
  std::size_t chunk = 0;
};

void write_feature_csv(const fs::path& path, const Tensor<float>& t) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  const std::size_t len = t.length(), ch = t.channels();
  for (std::size_t c = 0; c < ch; ++c) out << (c ? "," : "") << "c" << c;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t c = 0; c < ch; ++c) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(t.data()[c * len + i]));
      out << (c ? "," : "") << buf;
    }
    out << '\n';
  }
}

void cmd_features(const FeatureArgs& a) {
  auto state = load_checkpoint(a.signal.ckpt);
  auto chunks = radar_chunks(a.signal, state.model.config().input_length);
  if (a.chunk >= chunks.size()) {
    throw ConfigError("chunk: index " + std::to_string(a.chunk) + " out of range (" +
                      std::to_string(chunks.size()) + " chunks)");
  }
  const auto& chunk = chunks[a.chunk];
  fs::create_directories(a.signal.out);

  std::vector<NamedFeature> features;
  {
    NoGradGuard no_grad;
    features = state.model.intermediate_features(
        Tensor<float>::column(std::vector<float>(chunk.radar.begin(), chunk.radar.end())));
  }
  nlohmann::json index = nlohmann::json::array();
  for (std::size_t i = 0; i < features.size(); ++i) {
    char name[96];
    std::snprintf(name, sizeof name, "%02zu_%s.csv", i, features[i].name.c_str());
    write_feature_csv(a.signal.out / name, features[i].value);
    index.push_back({{"file", name},
                     {"feature", features[i].name},
                     {"scale", features[i].scale},
                     {"length", features[i].value.length()},
                     {"channels", features[i].value.channels()}});
  }

  // magnitude spectrograms of the model input and output
  const auto& output = features.back().value;
  const std::vector<double> reconstructed(output.data().begin(), output.data().end());
  const LossConfig spec_cfg;
  for (const auto& [label, signal] : {std::pair{"input", &chunk.radar}, std::pair{"output", &reconstructed}}) {
    for (const auto& s : spectrograms(*signal, spec_cfg)) {
      const std::string name = std::string("spectrogram_") + label + "_w" + std::to_string(s.window) + ".txt";
      std::ofstream out(a.signal.out / name);
      write_magnitudes(out, s);
      if (!out) throw DataError("cannot write " + (a.signal.out / name).string());
      index.push_back({{"file", name}, {"window", s.window}, {"hop", s.hop}, {"frames", s.frames}, {"bins", s.bins}});
    }
  }
  write_json_file(a.signal.out / "features.json",
                  {{"radar", a.signal.radar.string()}, {"chunk", a.chunk}, {"offset", chunk.offset}, {"files", index}});
  std::cout << "wrote " << features.size() << " feature files and " << 2 * spec_cfg.windows.size()
            << " spectrograms to " << a.signal.out.string() << '\n';
}

// ---- selfcheck

int cmd_selfcheck(const std::string& fault) {
  if (!fault.empty()) set_gradient_fault(fault);
  const auto results = run_selfcheck();
  set_gradient_fault("");
  int failed = 0;
  for (const auto& r : results) {
    std::printf("%s  %-28s %.3g (tol %.3g)%s%s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.value, r.tolerance,
                r.detail.empty() ? "" : "  ", r.detail.c_str());
    failed += r.passed ? 0 : 1;
  }
  std::printf("%zu checks, %d failed\n", results.size(), failed);
  return failed == 0 ? 0 : kExitFailedCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lifwav: learnable lifting-wavelet ECG reconstruction from radar"};
  app.require_subcommand(1);
  const fs::path out_default = default_out_dir();

  SynthArgs synth;
  synth.out = out_default / "synth";
  synth.params.seed = 1;
  auto* s = app.add_subcommand("synth", "write paired synthetic radar/ECG recordings and a manifest");
  s->add_option("--out", synth.out, "output directory")->capture_default_str();
  s->add_option("--seconds", synth.seconds, "duration per recording")->capture_default_str();
  s->add_option("--recordings", synth.recordings, "number of recordings (seeds seed, seed+1, ...)")
      ->capture_default_str();
  s->add_option("--hr", synth.params.heart_rate_bpm, "mean heart rate, bpm")->capture_default_str();
  s->add_option("--hrv", synth.params.hr_variability_bpm, "beat-to-beat rate jitter, bpm")->capture_default_str();
  s->add_option("--resp-rate", synth.params.resp_rate_bpm, "breaths per minute")->capture_default_str();
  s->add_option("--resp-ratio", synth.params.resp_ratio, "respiration / cardiac amplitude")->capture_default_str();
  s->add_option("--noise", synth.params.noise_std, "radar noise std relative to cardiac amplitude")
      ->capture_default_str();
  s->add_option("--rate", synth.params.rate_hz, "sample rate, Hz")->capture_default_str();
  s->add_option("--seed", synth.params.seed)->capture_default_str();
  s->add_option("--format", synth.format)->check(CLI::IsMember({"csv", "f32"}))->capture_default_str();

  TrainArgs tr;
  tr.out = out_default / "train";
  auto* t = app.add_subcommand("train", "train a model on a manifest");
  t->add_option("--data", tr.data, "dataset manifest (JSON)")->required();
  t->add_option("--config", tr.config, "JSON with optional profile/model/train sections");
  t->add_option("--profile", tr.profile, "defaults to start from")
      ->check(CLI::IsMember({"desk", "full"}))
      ->capture_default_str();
  t->add_option("--out", tr.out, "output directory")->capture_default_str();
  t->add_option("--epochs", tr.epochs);
  t->add_option("--batch-size", tr.batch_size);
  t->add_option("--lr", tr.learning_rate);
  t->add_option("--seed", tr.seed, "model init and shuffling seed");
  t->add_option("--checkpoint-interval", tr.checkpoint_interval, "epochs between checkpoints");
  t->add_option("--resume", tr.resume, "continue from this checkpoint");
  t->add_flag("--quiet", tr.quiet);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score a checkpoint on a manifest");
  e->add_option("--data", ev.data)->required();
  e->add_option("--ckpt", ev.ckpt)->required();
  e->add_option("--report", ev.report, "report JSON path");
  ev.report = out_default / "eval_report.json";

  SignalArgs inf;
  auto* in = app.add_subcommand("infer", "reconstruct ECG from a radar file");
  in->add_option("--radar", inf.radar, ".csv or .f32 radar displacement")->required();
  in->add_option("--ckpt", inf.ckpt)->required();
  in->add_option("--out", inf.out, "output file, same format as the input")->required();
  in->add_option("--rate", inf.rate_hz, "input sample rate, Hz")->capture_default_str();

  FeatureArgs fe;
  fe.signal.out = out_default / "features";
  auto* f = app.add_subcommand("features", "dump intermediate features and spectrograms for one chunk");
  f->add_option("--radar", fe.signal.radar)->required();
  f->add_option("--ckpt", fe.signal.ckpt)->required();
  f->add_option("--out", fe.signal.out, "output directory")->capture_default_str();
  f->add_option("--rate", fe.signal.rate_hz, "input sample rate, Hz")->capture_default_str();
  f->add_option("--chunk", fe.chunk, "chunk index within the file")->capture_default_str();

  std::string fault;
  auto* sc = app.add_subcommand("selfcheck", "run the embedded verification suite");
  sc->add_option("--inject-gradient-fault", fault, "corrupt the backward pass of this op")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitUsage;
  }

  try {
    if (s->parsed()) cmd_synth(synth);
    if (t->parsed()) cmd_train(tr);
    if (e->parsed()) cmd_eval(ev);
    if (in->parsed()) cmd_infer(inf);
    if (f->parsed()) cmd_features(fe);
    if (sc->parsed()) return cmd_selfcheck(fault);
  } catch (const NumericalError& err) {
    std::cerr << "numerical abort: " << err.what() << '\n';
    return kExitNumerical;
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return kExitUsage;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << '\n';
    return kExitUsage;
  } catch (const DimensionError& err) {
    std::cerr << "shape error: " << err.what() << '\n';
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& err) {
    std::cerr << "file error: " << err.what() << '\n';
    return kExitUsage;
  }
  return 0;
}
