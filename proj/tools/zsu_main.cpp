// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// zsu: unsupervised acoustic-unit discovery and resynthesis toolkit.
//
// Pipeline: extract -> train-units -> encode -> train-inverter -> synthesize,
// with eval-abx / eval-bitrate / gradcheck / info utilities.  Every
// subcommand writes a machine-readable run report next to its artifacts.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "zsu/cluster.hpp"
#include "zsu/config.hpp"
#include "zsu/corpus.hpp"
#include "zsu/dsp.hpp"
#include "zsu/errors.hpp"
#include "zsu/inverter.hpp"
#include "zsu/metrics.hpp"
#include "zsu/vq.hpp"

namespace fs = std::filesystem;
using zsu::Tensor;

namespace {

constexpr const char *kVersion = "0.1.0";
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct CommonArgs {
  std::string config_path;
  std::string manifest_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::int64_t jobs = 1;
  std::vector<std::string> overrides;  // key=value applied after the file
};

void add_common(CLI::App *cmd, CommonArgs &args, bool need_manifest) {
  cmd->add_option("--config", args.config_path, "config file (key = value with [sections])");
  auto *m = cmd->add_option("--manifest", args.manifest_path, "corpus manifest (TSV)");
  if (need_manifest) m->required();
  cmd->add_option("--out", args.out_dir, "output directory")->required();
  cmd->add_option("--seed", args.seed, "random seed");
  cmd->add_option("--jobs", args.jobs, "max parallel per-utterance workers");
  cmd->add_option("--set", args.overrides, "extra config overrides key=value");
}

zsu::config::ConfigMap resolve_config(const CommonArgs &args) {
  zsu::config::ConfigMap cfg;
  if (!args.config_path.empty()) cfg.merge_file(args.config_path);
  for (const auto &kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw zsu::ConfigError("--set expects key=value, got: " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.set("training.seed", std::to_string(args.seed));
  return cfg;
}

zsu::corpus::Manifest load_manifest_or_throw(const std::string &path) {
  auto validation = zsu::corpus::validate_manifest(path);
  if (!validation.ok()) {
    std::string msg = "manifest validation failed:\n";
    for (const auto &e : validation.errors) msg += "  " + e + "\n";
    throw zsu::DataError(msg);
  }
  return validation.manifest;
}

// Ordered parallel map over utterances; results are produced in input order.
template <typename Fn>
void parallel_for(std::int64_t n, std::int64_t jobs, Fn fn) {
  jobs = std::max<std::int64_t>(1, jobs);
  if (jobs == 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::vector<std::future<void>> workers;
  for (std::int64_t w = 0; w < std::min(jobs, n); ++w)
    workers.push_back(std::async(std::launch::async, [&] {
      for (std::int64_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    }));
  for (auto &worker : workers) worker.get();
}

zsu::dsp::StftConfig stft_config_from(const zsu::config::ConfigMap &cfg,
                                      int sample_rate) {
  zsu::dsp::StftConfig stft = zsu::dsp::StftConfig::for_sample_rate(sample_rate);
  stft.fft_size = cfg.get_int("features.fft_size", stft.fft_size);
  stft.window_length = cfg.get_int("features.window_length", stft.window_length);
  stft.hop_length = cfg.get_int("features.hop_length", stft.hop_length);
  return stft;
}

Tensor compute_features(const zsu::dsp::AudioBuffer &audio,
                        const zsu::dsp::StftConfig &stft_cfg,
                        const std::string &kind, double *frame_rate) {
  using namespace zsu::dsp;
  const FeatureKind fk = feature_kind_from_name(kind);
  if (fk == FeatureKind::Mfcc39) {
    FeatureSequence f = mfcc(audio, stft_cfg);
    *frame_rate = f.frame_rate;
    return f.frames;
  }
  if (fk == FeatureKind::Mel80) {
    FeatureSequence f = log_mel(audio, stft_cfg, kMelDims);
    *frame_rate = f.frame_rate;
    return f.frames;
  }
  if (fk == FeatureKind::Linear) {
    Spectrogram s = zsu::dsp::stft(audio, stft_cfg);
    *frame_rate = static_cast<double>(audio.sample_rate) / stft_cfg.hop_length;
    return s.to_magnitude();
  }
  throw zsu::ConfigError("unsupported feature kind: " + kind);
}

// ---- subcommand bodies ----

int cmd_extract(const CommonArgs &args) {
  const auto cfg = resolve_config(args);
  const auto manifest = load_manifest_or_throw(args.manifest_path);
  const int sample_rate = static_cast<int>(cfg.get_int("features.sample_rate", 16000));
  const std::string kind = cfg.get("features.kind", "mfcc39");
  const auto stft = stft_config_from(cfg, sample_rate);

  fs::create_directories(fs::path(args.out_dir) / "features");
  const std::int64_t n = static_cast<std::int64_t>(manifest.entries.size());
  std::vector<std::string> failures(static_cast<std::size_t>(n));
  parallel_for(n, args.jobs, [&](std::int64_t i) {
    const auto &entry = manifest.entries[static_cast<std::size_t>(i)];
    try {
      zsu::dsp::AudioBuffer audio = zsu::corpus::load_wav(entry.audio_path);
      audio = zsu::dsp::resample(audio, sample_rate);
      double frame_rate = 0.0;
      Tensor frames = compute_features(audio, stft, kind, &frame_rate);
      zsu::corpus::ModelBundle bundle;
      bundle.kind = "features";
      bundle.metadata["feature_kind"] = kind;
      bundle.metadata["frame_rate"] = std::to_string(frame_rate);
      bundle.metadata["speaker"] = entry.speaker_id;
      bundle.metadata["duration_seconds"] = std::to_string(audio.duration_seconds());
      bundle.add("frames", std::move(frames), zsu::corpus::TensorDType::F64);
      zsu::corpus::save_bundle(bundle, (fs::path(args.out_dir) / "features" /
                                        (entry.utterance_id + ".zsu")).string());
    } catch (const std::exception &e) {
      failures[static_cast<std::size_t>(i)] = entry.utterance_id + ": " + e.what();
    }
  });
  for (const auto &f : failures)
    if (!f.empty()) throw zsu::DataError("extract failed for " + f);

  zsu::config::RunReport report;
  report.echo_config(cfg);
  report.set("command", std::string("extract"));
  report.set("version", std::string(kVersion));
  report.set("seed", static_cast<std::int64_t>(args.seed));
  report.set("utterances", n);
  report.set("feature_kind", kind);
  report.save((fs::path(args.out_dir) / "report.txt").string());
  return 0;
}

struct LoadedFeatures {
  std::vector<std::string> ids;
  std::vector<Tensor> frames;
  std::vector<std::string> speakers;
  std::vector<double> frame_rates;
  std::vector<double> durations;
};

LoadedFeatures load_features_dir(const std::string &dir,
                                 const zsu::corpus::Manifest &manifest) {
  LoadedFeatures out;
  for (const auto &entry : manifest.entries) {
    const std::string path = (fs::path(dir) / "features" / (entry.utterance_id + ".zsu")).string();
    const auto bundle = zsu::corpus::load_bundle(path);
    out.ids.push_back(entry.utterance_id);
    out.frames.push_back(bundle.require("frames"));
    out.speakers.push_back(entry.speaker_id);
    out.frame_rates.push_back(bundle.meta_double("frame_rate"));
    out.durations.push_back(bundle.meta_double("duration_seconds"));
  }
  return out;
}

Tensor stack_rows(const std::vector<Tensor> &mats) {
  if (mats.empty()) throw zsu::DataError("no feature matrices to stack");
  std::int64_t rows = 0;
  const std::int64_t cols = mats[0].cols();
  for (const auto &m : mats) rows += m.rows();
  Tensor out({rows, cols});
  std::int64_t r = 0;
  for (const auto &m : mats)
    for (std::int64_t i = 0; i < m.rows(); ++i, ++r)
      for (std::int64_t j = 0; j < cols; ++j) out.at(r, j) = m.at(i, j);
  return out;
}

int cmd_train_units(const CommonArgs &args, const std::string &features_dir,
                    const std::string &model_kind_flag) {
  auto cfg = resolve_config(args);
  if (!model_kind_flag.empty()) cfg.set("model.kind", model_kind_flag);
  const std::string model_kind = cfg.get("model.kind", "vqvae");
  const std::int64_t k = cfg.get_int("model.codebook", 256);
  const std::int64_t r = cfg.get_int("model.time_reduction", 4);
  const auto manifest = load_manifest_or_throw(args.manifest_path);
  const LoadedFeatures data = load_features_dir(features_dir, manifest);
  fs::create_directories(args.out_dir);

  zsu::config::RunReport report;
  report.echo_config(cfg);
  report.set("command", std::string("train-units"));
  report.set("version", std::string(kVersion));
  report.set("seed", static_cast<std::int64_t>(args.seed));
  report.set("model", model_kind);
  report.set("codebook", k);
  report.set("time_reduction", r);

  const std::string model_path = (fs::path(args.out_dir) / "model.zsu").string();
  if (model_kind == "kmeans") {
    std::vector<Tensor> reduced;
    for (const auto &f : data.frames)
      reduced.push_back(zsu::cluster::time_reduce(f, r));
    const Tensor all = stack_rows(reduced);
    zsu::cluster::KMeansFitOptions opts;
    opts.batch_size = cfg.get_int("training.batch_size", 1024);
    opts.iterations = cfg.get_int("training.iterations", 10);
    opts.seed = args.seed;
    const auto model = zsu::cluster::kmeans_fit(all, k, opts);
    zsu::corpus::ModelBundle bundle;
    bundle.kind = "kmeans";
    bundle.metadata["k"] = std::to_string(k);
    bundle.metadata["time_reduction"] = std::to_string(r);
    bundle.add("centroids", model.centroids);
    Tensor counts({static_cast<std::int64_t>(model.counts.size())});
    for (std::size_t i = 0; i < model.counts.size(); ++i)
      counts[static_cast<std::int64_t>(i)] = static_cast<double>(model.counts[i]);
    bundle.add("counts", counts);
    bundle.add("standardizer_mean", model.standardizer.mean);
    bundle.add("standardizer_std", model.standardizer.std);
    zsu::corpus::save_bundle(bundle, model_path);
    report.set("inertia", zsu::cluster::kmeans_inertia(
                              model, model.standardizer.apply(all)));
  } else if (model_kind == "gmm") {
    std::vector<Tensor> reduced;
    for (const auto &f : data.frames)
      reduced.push_back(zsu::cluster::time_reduce(f, r));
    const Tensor all = stack_rows(reduced);
    zsu::cluster::GmmFitOptions opts;
    opts.iterations = cfg.get_int("training.iterations", 25);
    opts.seed = args.seed;
    const auto fit = zsu::cluster::gmm_fit(all, k, opts);
    zsu::corpus::ModelBundle bundle;
    bundle.kind = "gmm";
    bundle.metadata["k"] = std::to_string(k);
    bundle.metadata["time_reduction"] = std::to_string(r);
    bundle.add("weights", fit.model.weights);
    bundle.add("means", fit.model.means);
    bundle.add("variances", fit.model.variances);
    bundle.add("standardizer_mean", fit.model.standardizer.mean);
    bundle.add("standardizer_std", fit.model.standardizer.std);
    zsu::corpus::save_bundle(bundle, model_path);
    report.set("final_log_likelihood", fit.log_likelihood.back());
  } else if (model_kind == "vqvae") {
    const auto speaker_ids = manifest.speakers();
    std::map<std::string, std::int64_t> speaker_index;
    for (std::size_t i = 0; i < speaker_ids.size(); ++i)
      speaker_index[speaker_ids[i]] = static_cast<std::int64_t>(i);
    std::vector<zsu::vq::TrainUtterance> utts;
    for (std::size_t i = 0; i < data.ids.size(); ++i)
      utts.push_back({data.ids[i], data.frames[i], speaker_index[data.speakers[i]]});

    zsu::vq::VqVaeConfig vcfg;
    vcfg.time_reduction = r;
    vcfg.codebook_size = k;
    vcfg.code_dim = cfg.get_int("model.code_dim", 64);
    vcfg.speaker_dim = cfg.get_int("model.speaker_dim", 32);
    vcfg.input_dim = data.frames[0].cols();
    vcfg.commitment_cost = cfg.get_double("model.gamma", 0.25);
    vcfg.stem_channels = cfg.get_int("model.stem_channels", 8);
    vcfg.chunk_length = cfg.get_int("model.chunk_length", 128);
    vcfg.learning_rate = cfg.get_double("training.learning_rate", 1e-3);
    if (cfg.get("model.codebook_init", "kmeans") == "random")
      vcfg.codebook_init = zsu::vq::CodebookInit::RandomNormal;

    zsu::vq::VqVae model(vcfg, static_cast<std::int64_t>(speaker_ids.size()), args.seed);
    zsu::grad::Adam adam({vcfg.learning_rate});
    zsu::vq::VqTrainOptions topts;
    topts.steps = cfg.get_int("training.steps", 500);
    topts.checkpoint_every = cfg.get_int("training.checkpoint_every", 0);
    topts.checkpoint_dir = (fs::path(args.out_dir) / "checkpoints").string();
    topts.seed = args.seed;
    const auto metrics = zsu::vq::train_vqvae(model, utts, topts, adam);

    zsu::corpus::ModelBundle bundle = model.to_bundle();
    std::string spk_map;
    for (const auto &s : speaker_ids) spk_map += (spk_map.empty() ? "" : ",") + s;
    bundle.metadata["speaker_map"] = spk_map;
    model.save_optimizer(bundle, adam);
    zsu::corpus::save_bundle(bundle, model_path);
    report.set("initial_loss", metrics.per_step.front().total);
    report.set("final_loss", metrics.per_step.back().total);
    report.set("codebook_perplexity", metrics.final_perplexity);
    report.set("steps", topts.steps);
  } else {
    throw zsu::ConfigError("unknown model kind: " + model_kind);
  }
  report.save((fs::path(args.out_dir) / "report.txt").string());
  return 0;
}

int cmd_encode(const CommonArgs &args, const std::string &features_dir,
               const std::string &model_path) {
  const auto cfg = resolve_config(args);
  const auto manifest = load_manifest_or_throw(args.manifest_path);
  const LoadedFeatures data = load_features_dir(features_dir, manifest);
  const auto bundle = zsu::corpus::load_bundle(model_path);
  fs::create_directories(fs::path(args.out_dir) / "repr");

  std::vector<std::pair<std::string, std::vector<std::int64_t>>> code_lines;
  std::vector<std::pair<std::string, double>> durations;
  std::int64_t reduction = 1;

  auto save_repr = [&](const std::string &id, const Tensor &repr,
                       double frame_rate) {
    zsu::corpus::ModelBundle rb;
    rb.kind = "representation";
    rb.metadata["frame_rate"] = std::to_string(frame_rate);
    rb.add("repr", repr, zsu::corpus::TensorDType::F64);
    zsu::corpus::save_bundle(rb, (fs::path(args.out_dir) / "repr" / (id + ".zsu")).string());
  };

  if (bundle.kind == "kmeans") {
    reduction = bundle.meta_int("time_reduction");
    zsu::cluster::KMeansModel model;
    model.centroids = bundle.require("centroids");
    model.standardizer.mean = bundle.require("standardizer_mean");
    model.standardizer.std = bundle.require("standardizer_std");
    for (std::size_t i = 0; i < data.ids.size(); ++i) {
      const Tensor reduced = zsu::cluster::time_reduce(data.frames[i], reduction);
      const auto enc = zsu::cluster::kmeans_encode(model, reduced);
      code_lines.emplace_back(data.ids[i], enc.codes.indices);
      save_repr(data.ids[i], enc.centroid_sequence, data.frame_rates[i] / reduction);
      durations.emplace_back(data.ids[i], data.durations[i]);
    }
  } else if (bundle.kind == "gmm") {
    reduction = bundle.meta_int("time_reduction");
    zsu::cluster::GmmModel model;
    model.weights = bundle.require("weights");
    model.means = bundle.require("means");
    model.variances = bundle.require("variances");
    model.standardizer.mean = bundle.require("standardizer_mean");
    model.standardizer.std = bundle.require("standardizer_std");
    for (std::size_t i = 0; i < data.ids.size(); ++i) {
      const Tensor reduced = zsu::cluster::time_reduce(data.frames[i], reduction);
      const Tensor post = zsu::cluster::gmm_posterior(model, reduced);
      std::vector<std::int64_t> codes(static_cast<std::size_t>(post.rows()));
      for (std::int64_t t = 0; t < post.rows(); ++t) {
        std::int64_t best = 0;
        for (std::int64_t c = 1; c < post.cols(); ++c)
          if (post.at(t, c) > post.at(t, best)) best = c;
        codes[static_cast<std::size_t>(t)] = best;
      }
      code_lines.emplace_back(data.ids[i], codes);
      save_repr(data.ids[i], post, data.frame_rates[i] / reduction);
      durations.emplace_back(data.ids[i], data.durations[i]);
    }
  } else if (bundle.kind == "vqvae") {
    auto model = zsu::vq::VqVae::from_bundle(bundle);
    reduction = model->config().time_reduction;
    for (std::size_t i = 0; i < data.ids.size(); ++i) {
      const auto enc = zsu::vq::encode_utterance(*model, data.frames[i]);
      code_lines.emplace_back(data.ids[i], enc.codes.indices);
      save_repr(data.ids[i], enc.code_vectors, data.frame_rates[i] / reduction);
      durations.emplace_back(data.ids[i], data.durations[i]);
    }
  } else {
    throw zsu::DataError("encode: unsupported model kind '" + bundle.kind + "'");
  }

  zsu::corpus::save_code_lines((fs::path(args.out_dir) / "codes.txt").string(), code_lines);
  {
    std::string text;
    for (const auto &[id, dur] : durations)
      text += id + " " + std::to_string(dur) + "\n";
    std::ofstream out((fs::path(args.out_dir) / "durations.txt").string(), std::ios::trunc);
    out << text;
  }
  zsu::config::RunReport report;
  report.echo_config(cfg);
  report.set("command", std::string("encode"));
  report.set("version", std::string(kVersion));
  report.set("seed", static_cast<std::int64_t>(args.seed));
  report.set("model_kind", bundle.kind);
  report.set("time_reduction", reduction);
  report.set("utterances", static_cast<std::int64_t>(code_lines.size()));
  report.save((fs::path(args.out_dir) / "report.txt").string());
  return 0;
}

int cmd_train_inverter(const CommonArgs &args, const std::string &codes_dir) {
  const auto cfg = resolve_config(args);
  const auto manifest = load_manifest_or_throw(args.manifest_path);
  const int sample_rate = static_cast<int>(cfg.get_int("features.sample_rate", 16000));
  const auto stft_cfg = stft_config_from(cfg, sample_rate);
  fs::create_directories(args.out_dir);

  // Pair the frozen code vectors with target-voice linear magnitudes.
  std::vector<zsu::inverter::InverterTrainPair> pairs;
  std::int64_t reduction = 0, code_dim = 0;
  for (const auto &entry : manifest.entries) {
    const std::string repr_path =
        (fs::path(codes_dir) / "repr" / (entry.utterance_id + ".zsu")).string();
    if (!fs::exists(repr_path)) continue;
    const auto rb = zsu::corpus::load_bundle(repr_path);
    zsu::dsp::AudioBuffer audio = zsu::corpus::load_wav(entry.audio_path);
    audio = zsu::dsp::resample(audio, sample_rate);
    const auto spec = zsu::dsp::stft(audio, stft_cfg);
    pairs.push_back({entry.utterance_id, rb.require("repr"), spec.to_magnitude()});
    code_dim = pairs.back().code_vectors.cols();
  }
  if (pairs.empty())
    throw zsu::DataError("train-inverter: no paired utterances found under " + codes_dir);

  // The encoder's reduction factor comes from the code model's report.
  {
    const auto enc_report_path = fs::path(codes_dir) / "report.txt";
    zsu::config::ConfigMap enc_report;
    if (fs::exists(enc_report_path)) enc_report.merge_file(enc_report_path.string());
    reduction = enc_report.get_int("time_reduction", 1);
  }

  zsu::inverter::InverterConfig icfg;
  icfg.code_dim = code_dim;
  icfg.output_dim = stft_cfg.num_bins();
  icfg.time_reduction = cfg.get_int("inverter.time_reduction", reduction);
  icfg.mse_weight = cfg.get_double("inverter.alpha", 1.0);
  icfg.gan_weight = cfg.get_double("inverter.beta", 1.0);
  icfg.gan_kind = zsu::inverter::gan_kind_from_name(cfg.get("inverter.gan", "lsgan"));
  icfg.scale_channels = cfg.get_int("inverter.scale_channels", 64);
  icfg.multiscale_layers = cfg.get_int("inverter.multiscale_layers", 4);
  icfg.learning_rate = cfg.get_double("inverter.learning_rate", 1e-4);
  icfg.chunk_length = cfg.get_int("inverter.chunk_length", 128);
  icfg.domain = cfg.get("inverter.domain", "log") == "linear"
                    ? zsu::inverter::SpectrogramDomain::Linear
                    : zsu::inverter::SpectrogramDomain::Log;

  zsu::inverter::Code2Spec model(icfg, args.seed);
  zsu::inverter::Discriminator disc(icfg.output_dim, args.seed + 1);
  zsu::grad::Adam gen_adam({icfg.learning_rate});
  zsu::grad::Adam disc_adam({icfg.learning_rate});
  zsu::inverter::InverterTrainOptions topts;
  topts.steps = cfg.get_int("inverter.steps", 300);
  topts.seed = args.seed;
  const auto result = zsu::inverter::train_inverter(model, disc, pairs, topts,
                                                    gen_adam, disc_adam);

  zsu::corpus::ModelBundle bundle = model.to_bundle(result.normalizer);
  bundle.metadata["sample_rate"] = std::to_string(sample_rate);
  bundle.metadata["fft_size"] = std::to_string(stft_cfg.fft_size);
  bundle.metadata["window_length"] = std::to_string(stft_cfg.window_length);
  bundle.metadata["hop_length"] = std::to_string(stft_cfg.hop_length);
  zsu::corpus::save_bundle(bundle, (fs::path(args.out_dir) / "inverter.zsu").string());

  zsu::config::RunReport report;
  report.echo_config(cfg);
  report.set("command", std::string("train-inverter"));
  report.set("version", std::string(kVersion));
  report.set("seed", static_cast<std::int64_t>(args.seed));
  report.set("pairs", static_cast<std::int64_t>(pairs.size()));
  report.set("steps", topts.steps);
  report.set("initial_mse", result.metrics.mse.front());
  report.set("final_mse", result.metrics.mse.back());
  if (!result.metrics.disc_loss.empty())
    report.set("final_disc_loss", result.metrics.disc_loss.back());
  report.save((fs::path(args.out_dir) / "report.txt").string());
  return 0;
}

int cmd_synthesize(const CommonArgs &args, const std::string &model_path,
                   const std::string &codes_dir) {
  const auto cfg = resolve_config(args);
  const auto bundle = zsu::corpus::load_bundle(model_path);
  auto [model, norm] = zsu::inverter::Code2Spec::from_bundle(bundle);
  const int sample_rate = static_cast<int>(bundle.meta_int("sample_rate"));
  zsu::dsp::StftConfig stft_cfg;
  stft_cfg.fft_size = bundle.meta_int("fft_size");
  stft_cfg.window_length = bundle.meta_int("window_length");
  stft_cfg.hop_length = bundle.meta_int("hop_length");
  const std::int64_t gl_iters = cfg.get_int("eval.griffin_lim_iterations", 60);
  fs::create_directories(args.out_dir);

  std::vector<std::string> ids;
  for (const auto &entry : fs::directory_iterator(fs::path(codes_dir) / "repr"))
    if (entry.path().extension() == ".zsu") ids.push_back(entry.path().stem().string());
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw zsu::DataError("synthesize: no representations in " + codes_dir);

  for (const auto &id : ids) {
    const auto rb = zsu::corpus::load_bundle(
        (fs::path(codes_dir) / "repr" / (id + ".zsu")).string());
    const auto result = zsu::inverter::synthesize(
        *model, norm, rb.require("repr"), stft_cfg, sample_rate, gl_iters, args.seed);
    zsu::corpus::save_wav((fs::path(args.out_dir) / (id + ".wav")).string(), result.audio);
  }
  zsu::config::RunReport report;
  report.echo_config(cfg);
  report.set("command", std::string("synthesize"));
  report.set("version", std::string(kVersion));
  report.set("seed", static_cast<std::int64_t>(args.seed));
  report.set("utterances", static_cast<std::int64_t>(ids.size()));
  report.set("griffin_lim_iterations", gl_iters);
  report.save((fs::path(args.out_dir) / "report.txt").string());
  return 0;
}

int cmd_eval_abx(const CommonArgs &args, const std::string &triples_path,
                 const std::string &repr_dir, const std::string &distance_name) {
  const auto cfg = resolve_config(args);
  const auto triples = zsu::metrics::load_triples(triples_path);
  std::map<std::string, Tensor> representations;
  for (const auto &entry : fs::directory_iterator(repr_dir))
    if (entry.path().extension() == ".zsu") {
      const auto rb = zsu::corpus::load_bundle(entry.path().string());
      representations[entry.path().stem().string()] = rb.require("repr");
    }
  const auto distance = zsu::metrics::frame_distance_from_name(distance_name);
  const auto abx = zsu::metrics::abx_score(triples, representations, distance);

  fs::create_directories(args.out_dir);
  zsu::config::RunReport report;
  report.echo_config(cfg);
  report.set("command", std::string("eval-abx"));
  report.set("version", std::string(kVersion));
  report.set("seed", static_cast<std::int64_t>(args.seed));
  report.set("frame_distance", distance_name);
  report.set("abx_error", abx.error_rate);
  report.set("abx_error_x100", abx.error_rate * 100.0);
  report.set("triples_scored", abx.triples_scored);
  report.set("triples_skipped", abx.triples_skipped);
  report.save((fs::path(args.out_dir) / "report.txt").string());
  std::cout << report.to_string();
  return 0;
}

int cmd_eval_bitrate(const CommonArgs &args, const std::string &codes_path,
                     const std::string &durations_path, double total_duration) {
  const auto cfg = resolve_config(args);
  const auto lines = zsu::corpus::load_code_lines(codes_path);
  std::vector<zsu::CodeSequence> sequences;
  for (const auto &[id, indices] : lines) {
    zsu::CodeSequence seq;
    seq.indices = indices;
    sequences.push_back(std::move(seq));
  }
  double duration = total_duration;
  if (!durations_path.empty()) {
    std::ifstream in(durations_path);
    if (!in) throw zsu::DataError("cannot open durations file: " + durations_path);
    std::string id;
    double d;
    duration = 0.0;
    while (in >> id >> d) duration += d;
  }
  const auto bitrate = zsu::metrics::bitrate(sequences, duration);

  fs::create_directories(args.out_dir);
  zsu::config::RunReport report;
  report.echo_config(cfg);
  report.set("command", std::string("eval-bitrate"));
  report.set("version", std::string(kVersion));
  report.set("seed", static_cast<std::int64_t>(args.seed));
  report.set("bits_per_second", bitrate.bits_per_second);
  report.set("entropy_bits_per_symbol", bitrate.entropy_bits);
  report.set("symbol_count", bitrate.symbol_count);
  report.set("duration_seconds", bitrate.duration_seconds);
  report.save((fs::path(args.out_dir) / "report.txt").string());
  std::cout << report.to_string();
  return 0;
}

int cmd_gradcheck(const CommonArgs &args);

int cmd_info(bool paper_table) {
  if (paper_table) {
    std::printf("reference results (published values, not produced by this toolkit)\n");
    std::printf("%-10s %-12s %8s %10s\n", "model", "setting", "ABX", "bitrate");
    for (const auto &row : zsu::config::paper_reference_table())
      std::printf("%-10s %-12s %8.3f %10.2f\n", row.model.c_str(),
                  row.setting.c_str(), row.abx, row.bitrate);
    return 0;
  }
  std::printf("zsu %s — unsupervised acoustic-unit discovery toolkit\n", kVersion);
  std::printf("subcommands: extract train-units encode train-inverter synthesize\n");
  std::printf("             eval-abx eval-bitrate gradcheck info\n");
  return 0;
}

// Small built-in gradient-check suite mirroring the test suite, runnable in
// the field to validate a build.
int cmd_gradcheck(const CommonArgs &args) {
  using namespace zsu::grad;
  std::mt19937_64 rng(args.seed + 7);
  std::normal_distribution<double> dist(0.0, 1.0);
  auto randn = [&](std::vector<std::int64_t> shape) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    return t;
  };

  bool all_pass = true;
  auto run = [&](const std::string &name, const std::function<Var()> &loss,
                 const std::vector<Var> &params) {
    const auto report = grad_check(loss, params, 1e-6, 1e-4);
    std::printf("%-24s %s (max rel err %.3e)\n", name.c_str(),
                report.passed ? "PASS" : "FAIL", report.max_rel_error);
    all_pass = all_pass && report.passed;
  };

  {
    Var w = parameter(randn({3, 4}), "w");
    Var b = parameter(randn({3}), "b");
    Var x = constant(randn({5, 4}));
    run("linear", [&] { return mean_sq(linear(x, w, b)); }, {w, b});
  }
  {
    Var w = parameter(randn({2, 3, 3}), "w");
    Var b = parameter(randn({2}), "b");
    Var x = constant(randn({7, 3}));
    run("conv1d", [&] { return mean_sq(conv1d(x, w, b, 3, 2)); }, {w, b});
  }
  {
    Var w = parameter(randn({2, 1, 3, 3}), "w");
    Var b = parameter(randn({2}), "b");
    Var x = constant(randn({5, 4, 1}));
    run("conv2d", [&] { return mean_sq(conv2d(x, w, b, 3, 3, 1, 1)); }, {w, b});
  }
  {
    Var g = parameter(randn({3}), "gamma");
    Var be = parameter(randn({3}), "beta");
    Var x = parameter(randn({6, 3}), "x");
    BatchNormStats stats(3);
    run("batchnorm",
        [&] { return mean_sq(batchnorm(x, g, be, &stats, true, false)); },
        {g, be, x});
  }
  {
    Var x = parameter(randn({4, 4}), "x");
    run("leaky_relu", [&] { return mean_sq(leaky_relu(x, 0.01)); }, {x});
  }
  {
    Var table = parameter(randn({5, 3}), "table");
    run("embedding_lookup",
        [&] { return mean_sq(embedding_lookup(table, {0, 2, 2, 4})); }, {table});
  }
  zsu::config::RunReport report;
  report.set("command", std::string("gradcheck"));
  report.set("passed", std::string(all_pass ? "true" : "false"));
  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    report.save((fs::path(args.out_dir) / "report.txt").string());
  }
  return all_pass ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"zsu — unsupervised acoustic-unit discovery and resynthesis"};
  app.require_subcommand(0, 1);

  CommonArgs extract_args, train_args, encode_args, inv_args, synth_args,
      abx_args, bitrate_args, grad_args;
  std::string features_dir, model_kind, model_path, codes_dir, triples_path,
      repr_dir, distance_name = "cosine", codes_path, durations_path;
  double total_duration = 0.0;
  bool paper_table = false;

  auto *extract = app.add_subcommand("extract", "compute features for a corpus");
  add_common(extract, extract_args, true);

  auto *train = app.add_subcommand("train-units", "train a unit-discovery model");
  add_common(train, train_args, true);
  train->add_option("--features", features_dir, "extract output directory")->required();
  train->add_option("--model", model_kind, "kmeans | gmm | vqvae");
  train->add_option("--codebook", [&train_args](const std::vector<std::string> &v) {
    train_args.overrides.push_back("model.codebook=" + v[0]);
    return true;
  }, "codebook / cluster count");
  train->add_option("--time-reduction", [&train_args](const std::vector<std::string> &v) {
    train_args.overrides.push_back("model.time_reduction=" + v[0]);
    return true;
  }, "time reduction factor r");
  train->add_option("--gamma", [&train_args](const std::vector<std::string> &v) {
    train_args.overrides.push_back("model.gamma=" + v[0]);
    return true;
  }, "commitment loss coefficient");

  auto *encode = app.add_subcommand("encode", "emit discrete codes for a corpus");
  add_common(encode, encode_args, true);
  encode->add_option("--features", features_dir, "extract output directory")->required();
  encode->add_option("--model", model_path, "trained model bundle")->required();

  auto *train_inv = app.add_subcommand("train-inverter", "train the Code2Spec inverter");
  add_common(train_inv, inv_args, true);
  train_inv->add_option("--codes", codes_dir, "encode output directory")->required();
  train_inv->add_option("--gan", [&inv_args](const std::vector<std::string> &v) {
    inv_args.overrides.push_back("inverter.gan=" + v[0]);
    return true;
  }, "lsgan | wgan");
  train_inv->add_option("--beta", [&inv_args](const std::vector<std::string> &v) {
    inv_args.overrides.push_back("inverter.beta=" + v[0]);
    return true;
  }, "adversarial loss weight");

  auto *synth = app.add_subcommand("synthesize", "waveforms from codes");
  add_common(synth, synth_args, false);
  synth->add_option("--model", model_path, "inverter bundle")->required();
  synth->add_option("--codes", codes_dir, "encode output directory")->required();

  auto *abx = app.add_subcommand("eval-abx", "ABX discriminability");
  add_common(abx, abx_args, false);
  abx->add_option("--triples", triples_path, "triple manifest")->required();
  abx->add_option("--repr", repr_dir, "representation directory")->required();
  abx->add_option("--frame-distance", distance_name, "cosine | kl");

  auto *bitrate = app.add_subcommand("eval-bitrate", "bitrate of a code stream");
  add_common(bitrate, bitrate_args, false);
  bitrate->add_option("--codes", codes_path, "codes.txt")->required();
  bitrate->add_option("--durations", durations_path, "durations file");
  bitrate->add_option("--duration", total_duration, "total duration in seconds");

  auto *gradcheck = app.add_subcommand("gradcheck", "verify analytic gradients");
  gradcheck->add_option("--out", grad_args.out_dir, "report directory");
  gradcheck->add_option("--seed", grad_args.seed, "random seed");

  auto *info = app.add_subcommand("info", "version and reference tables");
  info->add_flag("--paper-table", paper_table, "print published reference numbers");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (extract->parsed()) return cmd_extract(extract_args);
    if (train->parsed()) return cmd_train_units(train_args, features_dir, model_kind);
    if (encode->parsed()) return cmd_encode(encode_args, features_dir, model_path);
    if (train_inv->parsed()) return cmd_train_inverter(inv_args, codes_dir);
    if (synth->parsed()) return cmd_synthesize(synth_args, model_path, codes_dir);
    if (abx->parsed())
      return cmd_eval_abx(abx_args, triples_path, repr_dir, distance_name);
    if (bitrate->parsed())
      return cmd_eval_bitrate(bitrate_args, codes_path, durations_path, total_duration);
    if (gradcheck->parsed()) return cmd_gradcheck(grad_args);
    return cmd_info(paper_table);
  } catch (const zsu::NumericError &e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const zsu::ConfigError &e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
}
