#include "uncseg/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "uncseg/io.hpp"
#include "uncseg/optim.hpp"
#include "uncseg/parallel.hpp"

namespace fs = std::filesystem;

namespace uncseg {

namespace {

// derivation tags for the seed tree
enum : std::uint64_t {
  kTagPhantomCase = 1,
  kTagFolds = 2,
  kTagTrain = 3,
  kTagInit = 4,
  kTagBatch = 5,
  kTagDropout = 6,
  kTagPredict = 7,
};

std::uint64_t loss_tag(LossKind k) { return std::uint64_t(k) + 1; }

std::string zero_pad(int v, int width) {
  std::string s = std::to_string(v);
  while (int(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

constexpr double kLn4 = 1.3862943611198906;

}  // namespace

const char* predict_mode_name(PredictMode m) { return m == PredictMode::mc ? "mc" : "single"; }

std::string OutPaths::case_dir(int id) const {
  return (fs::path(root) / "cases" / ("case_" + zero_pad(id, 3))).string();
}
std::string OutPaths::folds_file() const { return (fs::path(root) / "folds.txt").string(); }
std::string OutPaths::checkpoints_dir(LossKind loss, int fold) const {
  return (fs::path(root) / "checkpoints" / loss_code(loss) / ("fold" + std::to_string(fold)))
      .string();
}
std::string OutPaths::snapshot_dir(LossKind loss, int fold, int cycle) const {
  return (fs::path(checkpoints_dir(loss, fold)) / ("snapshot_" + zero_pad(cycle, 2))).string();
}
std::string OutPaths::train_log(LossKind loss, int fold) const {
  return (fs::path(root) / "logs" /
          ("train_" + std::string(loss_code(loss)) + "_fold" + std::to_string(fold) + ".csv"))
      .string();
}
std::string OutPaths::predictions_dir(LossKind loss, PredictMode mode, int fold) const {
  return (fs::path(root) / "predictions" / loss_code(loss) / predict_mode_name(mode) /
          ("fold" + std::to_string(fold)))
      .string();
}
std::string OutPaths::prediction_case_dir(LossKind loss, PredictMode mode, int fold,
                                          int id) const {
  return (fs::path(predictions_dir(loss, mode, fold)) / ("case_" + zero_pad(id, 3))).string();
}
std::string OutPaths::analysis_dir() const { return (fs::path(root) / "analysis").string(); }

PhantomCase preprocess_case(const PhantomCase& raw) {
  PhantomCase out;
  out.seed = raw.seed;
  out.spacing[0] = 1.4;
  out.spacing[1] = 1.4;
  const int S = raw.ed_image.dim(0);
  const double sp = raw.spacing[0];

  auto do_volume = [&](const Tensor& vol) {
    std::vector<Tensor> slices;
    for (int s = 0; s < S; ++s) {
      Tensor sl({vol.dim(1), vol.dim(2)});
      std::copy(vol.data.begin() + std::size_t(s) * sl.numel(),
                vol.data.begin() + std::size_t(s + 1) * sl.numel(), sl.data.begin());
      slices.push_back(resample_inplane(sl, sp, 1.4));
    }
    Tensor res({S, slices[0].dim(0), slices[0].dim(1)});
    for (int s = 0; s < S; ++s) {
      std::copy(slices[std::size_t(s)].data.begin(), slices[std::size_t(s)].data.end(),
                res.data.begin() + std::size_t(s) * slices[0].numel());
    }
    return normalize_percentile(res);
  };
  auto do_labels = [&](const LabelMap& vol) {
    std::vector<LabelMap> slices;
    for (int s = 0; s < S; ++s) {
      LabelMap sl({vol.dim(1), vol.dim(2)});
      std::copy(vol.data.begin() + std::size_t(s) * sl.numel(),
                vol.data.begin() + std::size_t(s + 1) * sl.numel(), sl.data.begin());
      slices.push_back(resample_labels_inplane(sl, sp, 1.4));
    }
    LabelMap res({S, slices[0].dim(0), slices[0].dim(1)});
    for (int s = 0; s < S; ++s) {
      std::copy(slices[std::size_t(s)].data.begin(), slices[std::size_t(s)].data.end(),
                res.data.begin() + std::size_t(s) * slices[0].numel());
    }
    return res;
  };

  out.ed_image = do_volume(raw.ed_image);
  out.es_image = do_volume(raw.es_image);
  out.ed_labels = do_labels(raw.ed_labels);
  out.es_labels = do_labels(raw.es_labels);
  return out;
}

void run_phantom(const ExperimentConfig& config) {
  config.validate();
  OutPaths paths(config.out_dir);
  fs::create_directories(fs::path(paths.root) / "cases");
  parallel_for(config.num_cases, [&](int id) {
    const std::uint64_t case_seed = mix64(config.seed ^ mix64(kTagPhantomCase + id));
    PhantomCase c = generate_case(case_seed, config.geometry);
    save_case(paths.case_dir(id), c);
  });
  auto folds = make_folds(config.num_cases, config.folds,
                          mix64(config.seed ^ mix64(kTagFolds)));
  write_folds_file(paths.folds_file(), folds, config.num_cases);
}

namespace {

Tensor slice2d(const Tensor& vol, int s) {
  Tensor out({vol.dim(1), vol.dim(2)});
  std::copy(vol.data.begin() + std::size_t(s) * out.numel(),
            vol.data.begin() + std::size_t(s + 1) * out.numel(), out.data.begin());
  return out;
}

std::vector<PhantomCase> load_processed(const OutPaths& paths, const std::vector<int>& ids) {
  std::vector<PhantomCase> cases;
  for (int id : ids) cases.push_back(preprocess_case(load_case(paths.case_dir(id))));
  return cases;
}

// gather every trainable tensor (weights, biases, bn affine) in a
// stable order shared between params and grads
void collect_trainables(NetworkParams& params, std::vector<LayerGrads<float>>& grads,
                        std::vector<Tensor*>& ps, std::vector<const Tensor*>& gs) {
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    ps.push_back(&params.layers[i].weight);
    gs.push_back(&grads[i].weight);
    ps.push_back(&params.layers[i].bias);
    gs.push_back(&grads[i].bias);
    if (params.layers[i].has_bn) {
      ps.push_back(&params.layers[i].gamma);
      gs.push_back(&grads[i].gamma);
      ps.push_back(&params.layers[i].beta);
      gs.push_back(&grads[i].beta);
    }
  }
}

}  // namespace

TrainResult run_train(const ExperimentConfig& config, LossKind loss, int fold) {
  config.validate();
  OutPaths paths(config.out_dir);
  auto folds = read_folds_file(paths.folds_file());
  if (fold < 0 || fold >= int(folds.size())) {
    throw std::runtime_error("train: fold " + std::to_string(fold) + " does not exist");
  }
  const std::vector<PhantomCase> cases = load_processed(paths, folds[std::size_t(fold)].train_ids);

  RngStream base = RngStream(config.seed, 0).derive(kTagTrain).derive(loss_tag(loss))
                       .derive(std::uint64_t(fold));
  NetworkParams params = build_network<float>(config.network, base.derive(kTagInit));

  AdamHyper hyper;
  hyper.beta1 = config.adam_beta1;
  hyper.beta2 = config.adam_beta2;
  hyper.eps = config.adam_eps;
  hyper.weight_decay = config.weight_decay;
  AdamState<float> adam;

  const int patch = config.patch_size;
  const int pad_to = config.pad_to();
  const int N = config.batch_size;

  fs::create_directories(fs::path(paths.train_log(loss, fold)).parent_path());
  fs::create_directories(paths.checkpoints_dir(loss, fold));
  std::ofstream log(paths.train_log(loss, fold));
  if (!log) throw std::runtime_error("cannot write training log");
  log << "iteration,lr,loss,wall_time_s\n";

  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();
  const std::int64_t plane = std::int64_t(pad_to) * pad_to;

  for (std::int64_t it = 0; it < config.schedule.total_iterations; ++it) {
    const double lr = lr_at(config.schedule, it);

    Tensor input({N, 2, pad_to, pad_to});
    std::vector<LabelMap> ed_refs, es_refs;
    for (int b = 0; b < N; ++b) {
      RngStream bs = base.derive(kTagBatch).derive(std::uint64_t(it)).derive(std::uint64_t(b));
      const PhantomCase& c = cases[bs.uniform_int(cases.size())];
      const int slice = int(bs.uniform_int(std::uint64_t(c.ed_image.dim(0))));
      PatchSample ps = sample_patch(c, slice, patch, pad_to, bs);
      const int k = int(bs.uniform_int(4));
      ps.ed = rot90(ps.ed, k);
      ps.es = rot90(ps.es, k);
      ps.ed_ref = rot90(ps.ed_ref, k);
      ps.es_ref = rot90(ps.es_ref, k);
      std::copy(ps.ed.data.begin(), ps.ed.data.end(),
                input.data.begin() + (std::size_t(b) * 2 + 0) * plane);
      std::copy(ps.es.data.begin(), ps.es.data.end(),
                input.data.begin() + (std::size_t(b) * 2 + 1) * plane);
      ed_refs.push_back(std::move(ps.ed_ref));
      es_refs.push_back(std::move(ps.es_ref));
    }

    ForwardCache<float> cache;
    Tensor logits = forward_batched(params, input, Mode::train,
                                    base.derive(kTagDropout).derive(std::uint64_t(it)), &cache);
    Tensor probs = softmax_groups(logits);

    // each phase is scored once over the pooled batch voxels and the
    // two phase losses are averaged; pooling keeps the soft-dice
    // per-class sums meaningful even when single patches miss a class
    const int out_h = probs.dim(2), out_w = probs.dim(3);
    const std::int64_t out_plane = std::int64_t(out_h) * out_w;
    Tensor grad_probs(probs.dims);
    double loss_acc = 0.0;
    Tensor pooled({4, N, out_h, out_w});
    LabelMap pooled_ref({N, out_h, out_w});
    for (int phase = 0; phase < 2; ++phase) {
      for (int b = 0; b < N; ++b) {
        const std::size_t off = (std::size_t(b) * 8 + std::size_t(phase) * 4) * out_plane;
        for (int c = 0; c < 4; ++c) {
          std::copy(probs.data.begin() + off + c * out_plane,
                    probs.data.begin() + off + (c + 1) * out_plane,
                    pooled.data.begin() + (std::size_t(c) * N + std::size_t(b)) * out_plane);
        }
        const LabelMap& ref = phase == 0 ? ed_refs[std::size_t(b)] : es_refs[std::size_t(b)];
        std::copy(ref.data.begin(), ref.data.end(),
                  pooled_ref.data.begin() + std::size_t(b) * out_plane);
      }
      LossResult<float> lr_res = compute_loss(loss, pooled, pooled_ref);
      loss_acc += double(lr_res.value);
      for (int b = 0; b < N; ++b) {
        const std::size_t off = (std::size_t(b) * 8 + std::size_t(phase) * 4) * out_plane;
        for (int c = 0; c < 4; ++c) {
          const float* src =
              lr_res.grad.ptr() + (std::size_t(c) * N + std::size_t(b)) * out_plane;
          float* dst = grad_probs.ptr() + off + c * out_plane;
          for (std::int64_t i = 0; i < out_plane; ++i) dst[i] = 0.5f * src[i];
        }
      }
    }
    const float loss_val = float(loss_acc * 0.5);
    if (!std::isfinite(loss_val)) {
      throw std::runtime_error("training diverged: non-finite loss at iteration " +
                               std::to_string(it));
    }

    Tensor grad_logits = softmax_groups_grad(probs, grad_probs);
    std::vector<LayerGrads<float>> grads = backward_batched(params, cache, grad_logits);

    std::vector<Tensor*> ps;
    std::vector<const Tensor*> gs;
    collect_trainables(params, grads, ps, gs);
    hyper.lr = lr;
    adam_step(ps, gs, adam, hyper);

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char row[160];
    std::snprintf(row, sizeof row, "%lld,%.17g,%.9g,%.3f\n", (long long)it, lr,
                  double(loss_val), wall);
    log << row;
    result.final_loss = loss_val;

    if (snapshot_due(config.schedule, it + 1)) {
      const int cycle = int((it + 1) / config.schedule.cycle_length);
      save_checkpoint(paths.snapshot_dir(loss, fold, cycle), params, it + 1);
      result.snapshot_cycles.push_back(cycle);
      const int stale = cycle - config.schedule.snapshots_to_keep;
      if (stale >= 1) fs::remove_all(paths.snapshot_dir(loss, fold, stale));
    }
  }
  // only the kept ensemble remains on disk
  while (int(result.snapshot_cycles.size()) > config.schedule.snapshots_to_keep) {
    result.snapshot_cycles.erase(result.snapshot_cycles.begin());
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

namespace {

struct CasePrediction {
  Tensor ed_probs, es_probs;  // [4,S,H,W]
  Tensor ed_map, es_map;      // [S,H,W]
  LabelMap ed_labels, es_labels;
};

void write_prediction(const std::string& dir, const CasePrediction& p, PredictMode mode,
                      int num_models, int samples_per_model,
                      const std::vector<int>& model_cycles) {
  fs::create_directories(dir);
  write_uqt((fs::path(dir) / "ed_probs.uqt").string(), p.ed_probs);
  write_uqt((fs::path(dir) / "es_probs.uqt").string(), p.es_probs);
  write_uqt((fs::path(dir) / "ed_labels.uqt").string(), p.ed_labels);
  write_uqt((fs::path(dir) / "es_labels.uqt").string(), p.es_labels);
  write_uqt((fs::path(dir) / "ed_map.uqt").string(), p.ed_map);
  write_uqt((fs::path(dir) / "es_map.uqt").string(), p.es_map);

  const float hi = mode == PredictMode::mc ? 0.25f : float(kLn4);
  fs::create_directories(fs::path(dir) / "pgm");
  const int S = p.ed_map.dim(0);
  for (int s = 0; s < S; ++s) {
    write_pgm((fs::path(dir) / "pgm" / ("ed_map_s" + zero_pad(s, 2) + ".pgm")).string(),
              slice2d(p.ed_map, s), 0.0f, hi);
    write_pgm((fs::path(dir) / "pgm" / ("es_map_s" + zero_pad(s, 2) + ".pgm")).string(),
              slice2d(p.es_map, s), 0.0f, hi);
  }

  std::ofstream meta(fs::path(dir) / "meta.txt");
  meta << "mode = " << predict_mode_name(mode) << "\n";
  meta << "map_kind = " << (mode == PredictMode::mc ? "umap" : "emap") << "\n";
  meta << "num_models = " << num_models << "\n";
  meta << "samples_per_model = " << samples_per_model << "\n";
  meta << "total_samples = " << num_models * samples_per_model << "\n";
  meta << "model_cycles =";
  for (int c : model_cycles) meta << " " << c;
  meta << "\n";
}

}  // namespace

void run_predict(const ExperimentConfig& config, int fold, PredictMode mode,
                 const std::vector<LossKind>& losses) {
  config.validate();
  OutPaths paths(config.out_dir);
  auto folds = read_folds_file(paths.folds_file());
  if (fold < 0 || fold >= int(folds.size())) {
    throw std::runtime_error("predict: fold " + std::to_string(fold) + " does not exist");
  }
  const std::vector<int>& test_ids = folds[std::size_t(fold)].test_ids;
  const int rf = config.network.receptive_field();
  const int pad = (rf - 1) / 2;

  for (LossKind loss : losses) {
    std::vector<int> cycles = kept_snapshot_cycles(config.schedule);
    std::vector<Checkpoint> checkpoints;
    for (int c : cycles) {
      const std::string dir = paths.snapshot_dir(loss, fold, c);
      if (!fs::exists(fs::path(dir) / "manifest.txt")) {
        throw std::runtime_error("predict: missing checkpoint " + dir +
                                 " (run train first)");
      }
      checkpoints.push_back(load_checkpoint(dir));
    }
    std::vector<const NetworkParams*> models;
    if (mode == PredictMode::mc) {
      for (const Checkpoint& ck : checkpoints) models.push_back(&ck.params);
    } else {
      models.push_back(&checkpoints.back().params);
    }

    RngStream base = RngStream(config.seed, 0).derive(kTagPredict).derive(loss_tag(loss))
                         .derive(std::uint64_t(fold));
    parallel_for(int(test_ids.size()), [&](int idx) {
      const int case_id = test_ids[std::size_t(idx)];
      const PhantomCase c = preprocess_case(load_case(paths.case_dir(case_id)));
      const int S = c.ed_image.dim(0), H = c.ed_image.dim(1), W = c.ed_image.dim(2);
      CasePrediction pred;
      pred.ed_probs = Tensor({4, S, H, W});
      pred.es_probs = Tensor({4, S, H, W});
      pred.ed_map = Tensor({S, H, W});
      pred.es_map = Tensor({S, H, W});

      const std::int64_t plane = std::int64_t(H) * W;
      auto store = [&](Tensor& vol, const Tensor& probs4, int s) {
        for (int cls = 0; cls < 4; ++cls) {
          std::copy(probs4.data.begin() + std::size_t(cls) * plane,
                    probs4.data.begin() + std::size_t(cls + 1) * plane,
                    vol.data.begin() + (std::size_t(cls) * S + std::size_t(s)) * plane);
        }
      };

      for (int s = 0; s < S; ++s) {
        const Tensor ed_pad = pad_input(slice2d(c.ed_image, s), pad);
        const Tensor es_pad = pad_input(slice2d(c.es_image, s), pad);
        RngStream slice_rng = base.derive(std::uint64_t(case_id)).derive(std::uint64_t(s));
        if (mode == PredictMode::mc) {
          auto [ed_stack, es_stack] =
              mc_predict(models, ed_pad, es_pad, config.samples_per_model, slice_rng);
          store(pred.ed_probs, mean_probs(ed_stack).probs, s);
          store(pred.es_probs, mean_probs(es_stack).probs, s);
          const UncertaintyMap ed_u = max_variance_map(ed_stack);
          const UncertaintyMap es_u = max_variance_map(es_stack);
          std::copy(ed_u.values.data.begin(), ed_u.values.data.end(),
                    pred.ed_map.data.begin() + std::size_t(s) * plane);
          std::copy(es_u.values.data.begin(), es_u.values.data.end(),
                    pred.es_map.data.begin() + std::size_t(s) * plane);
        } else {
          Tensor logits = forward(*models[0], ed_pad, es_pad, Mode::eval, slice_rng);
          Tensor probs8 = softmax_groups(logits);
          auto [pe, ps_] = split_phases(probs8);
          store(pred.ed_probs, pe.probs, s);
          store(pred.es_probs, ps_.probs, s);
          const UncertaintyMap ed_e = entropy_map(pe);
          const UncertaintyMap es_e = entropy_map(ps_);
          std::copy(ed_e.values.data.begin(), ed_e.values.data.end(),
                    pred.ed_map.data.begin() + std::size_t(s) * plane);
          std::copy(es_e.values.data.begin(), es_e.values.data.end(),
                    pred.es_map.data.begin() + std::size_t(s) * plane);
        }
      }

      pred.ed_labels = largest_component_filter(argmax_labels(pred.ed_probs));
      pred.es_labels = largest_component_filter(argmax_labels(pred.es_probs));
      std::vector<int> used_cycles = mode == PredictMode::mc
                                         ? cycles
                                         : std::vector<int>{cycles.back()};
      write_prediction(paths.prediction_case_dir(loss, mode, fold, case_id), pred, mode,
                       int(models.size()), mode == PredictMode::mc ? config.samples_per_model : 1,
                       used_cycles);
    });
  }
}

namespace {

struct LoadedPrediction {
  Tensor probs;      // [4,S,H,W]
  Tensor map;        // [S,H,W]
  LabelMap labels;   // stored, post-processed
  LabelMap ref;      // preprocessed reference
};

LoadedPrediction load_prediction(const OutPaths& paths, LossKind loss, PredictMode mode,
                                 int fold, int case_id, Phase phase,
                                 const PhantomCase& processed_ref) {
  const std::string dir = paths.prediction_case_dir(loss, mode, fold, case_id);
  const char* p = phase == Phase::ed ? "ed" : "es";
  LoadedPrediction lp;
  lp.probs = read_uqt_f32((fs::path(dir) / (std::string(p) + "_probs.uqt")).string());
  lp.map = read_uqt_f32((fs::path(dir) / (std::string(p) + "_map.uqt")).string());
  lp.labels = read_uqt_u8((fs::path(dir) / (std::string(p) + "_labels.uqt")).string());
  lp.ref = phase == Phase::ed ? processed_ref.ed_labels : processed_ref.es_labels;
  return lp;
}

void write_reliability_csv(const std::string& path, const ReliabilityBins& bins) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "bin_low,bin_high,count,confidence_mean,tp_fraction\n";
  char row[160];
  for (int b = 0; b < bins.num_bins; ++b) {
    const std::int64_t n = bins.count[std::size_t(b)];
    const double conf = n ? bins.conf_sum[std::size_t(b)] / double(n) : 0.0;
    const double tpf = n ? double(bins.tp[std::size_t(b)]) / double(n) : 0.0;
    std::snprintf(row, sizeof row, "%.2f,%.2f,%lld,%.10g,%.10g\n",
                  double(b) / bins.num_bins, double(b + 1) / bins.num_bins, (long long)n,
                  conf, tpf);
    out << row;
  }
}

}  // namespace

AnalyzeSummary run_analyze(const ExperimentConfig& config) {
  config.validate();
  OutPaths paths(config.out_dir);
  fs::create_directories(paths.analysis_dir());
  auto folds = read_folds_file(paths.folds_file());

  // (fold, case) pairs with predictions, in deterministic order
  auto cases_for = [&](LossKind loss, PredictMode mode) {
    std::vector<std::pair<int, int>> out;
    for (int f = 0; f < int(folds.size()); ++f) {
      for (int id : folds[std::size_t(f)].test_ids) {
        if (fs::exists(paths.prediction_case_dir(loss, mode, f, id))) out.emplace_back(f, id);
      }
    }
    return out;
  };

  AnalyzeSummary summary;
  std::ofstream stxt(fs::path(paths.analysis_dir()) / "summary.txt");
  if (!stxt) throw std::runtime_error("cannot write analysis summary");
  char line[256];

  write_loss_curve_csv((fs::path(paths.analysis_dir()) / "loss_true_label.csv").string(),
                       config.curve_samples);

  for (LossKind loss : config.losses) {
    for (PredictMode mode : {PredictMode::mc, PredictMode::single}) {
      const auto cases = cases_for(loss, mode);
      if (cases.empty()) continue;
      const MapKind kind = mode == PredictMode::mc ? MapKind::max_variance : MapKind::entropy;

      // pass 1: reliability bins, stored-label dice, pooled map values
      ReliabilityBins bins_ed, bins_es;
      double dice_sum = 0.0;
      int dice_n = 0;
      std::vector<float> pooled_ed, pooled_es;
      for (auto [f, id] : cases) {
        const PhantomCase ref = preprocess_case(load_case(paths.case_dir(id)));
        for (Phase phase : {Phase::ed, Phase::es}) {
          LoadedPrediction lp = load_prediction(paths, loss, mode, f, id, phase, ref);
          ReliabilityResult rr = reliability_bins(lp.probs, lp.ref, config.include_background);
          (phase == Phase::ed ? bins_ed : bins_es).merge(rr.bins);
          for (int c = 1; c < kNumClasses; ++c) {
            dice_sum += dice(lp.labels, lp.ref, c);
            dice_n += 1;
          }
          auto& pooled = phase == Phase::ed ? pooled_ed : pooled_es;
          pooled.insert(pooled.end(), lp.map.data.begin(), lp.map.data.end());
        }
      }
      write_reliability_csv((fs::path(paths.analysis_dir()) /
                             ("reliability_" + std::string(loss_code(loss)) + "_" +
                              predict_mode_name(mode) + "_ed.csv"))
                                .string(),
                            bins_ed);
      write_reliability_csv((fs::path(paths.analysis_dir()) /
                             ("reliability_" + std::string(loss_code(loss)) + "_" +
                              predict_mode_name(mode) + "_es.csv"))
                                .string(),
                            bins_es);
      ReliabilityBins pooled_bins = bins_ed;
      pooled_bins.merge(bins_es);
      summary.ece[{loss, mode}] = pooled_bins.ece();
      summary.dice_fg[{loss, mode}] = dice_n ? dice_sum / dice_n : 0.0;

      // pass 2: referral curves against per-phase dataset quantiles
      const std::vector<double> thr_ed =
          quantile_thresholds(pooled_ed, config.referral_quantiles);
      const std::vector<double> thr_es =
          quantile_thresholds(pooled_es, config.referral_quantiles);
      const std::size_t nq = config.referral_quantiles.size();
      // per phase accumulators: [quantile][class] dice sums and frac sums
      std::vector<std::array<double, 3>> dice_acc_ed(nq, {0, 0, 0}), dice_acc_es(nq, {0, 0, 0});
      std::vector<double> frac_acc_ed(nq, 0.0), frac_acc_es(nq, 0.0);
      int case_n = 0;
      for (auto [f, id] : cases) {
        const PhantomCase ref = preprocess_case(load_case(paths.case_dir(id)));
        case_n += 1;
        for (Phase phase : {Phase::ed, Phase::es}) {
          LoadedPrediction lp = load_prediction(paths, loss, mode, f, id, phase, ref);
          const auto& thr = phase == Phase::ed ? thr_ed : thr_es;
          auto curve = referral_curve(lp.probs, lp.ref, lp.map, thr);
          auto& dice_acc = phase == Phase::ed ? dice_acc_ed : dice_acc_es;
          auto& frac_acc = phase == Phase::ed ? frac_acc_ed : frac_acc_es;
          for (std::size_t q = 0; q < nq; ++q) {
            for (int c = 0; c < 3; ++c) dice_acc[q][std::size_t(c)] += curve[q].dice_fg[std::size_t(c)];
            frac_acc[q] += curve[q].frac_referred;
          }
        }
      }

      for (Phase phase : {Phase::ed, Phase::es}) {
        const auto& thr = phase == Phase::ed ? thr_ed : thr_es;
        const auto& dice_acc = phase == Phase::ed ? dice_acc_ed : dice_acc_es;
        const auto& frac_acc = phase == Phase::ed ? frac_acc_ed : frac_acc_es;
        std::ofstream out(fs::path(paths.analysis_dir()) /
                          ("referral_" + std::string(loss_code(loss)) + "_" +
                           map_kind_name(kind) + "_" + (phase == Phase::ed ? "ed" : "es") +
                           ".csv"));
        out << "threshold,frac_referred,dice_RV,dice_Myo,dice_LV\n";
        for (std::size_t q = 0; q < nq; ++q) {
          std::snprintf(line, sizeof line, "%.10g,%.10g,%.10g,%.10g,%.10g\n", thr[q],
                        frac_acc[q] / case_n, dice_acc[q][0] / case_n, dice_acc[q][1] / case_n,
                        dice_acc[q][2] / case_n);
          out << line;
        }
      }

      ReferralSummary rs;
      rs.thresholds.assign(thr_ed.begin(), thr_ed.end());
      for (std::size_t q = 0; q < nq; ++q) {
        rs.frac_referred.push_back((frac_acc_ed[q] + frac_acc_es[q]) / (2.0 * case_n));
        double d = 0.0;
        for (int c = 0; c < 3; ++c) {
          d += dice_acc_ed[q][std::size_t(c)] + dice_acc_es[q][std::size_t(c)];
        }
        rs.mean_dice_fg.push_back(d / (6.0 * case_n));
      }
      rs.baseline_dice = rs.mean_dice_fg.front();
      // improvement when the ~1% most uncertain voxels are corrected
      rs.gain_at_1pct = 0.0;
      for (std::size_t q = 0; q < nq; ++q) {
        if (std::abs(config.referral_quantiles[q] - 99.0) < 1e-9) {
          rs.gain_at_1pct = rs.mean_dice_fg[q] - rs.baseline_dice;
        }
      }
      summary.referral[{loss, kind}] = rs;
    }
  }

  stxt << "loss  mode    dice_fg   ece\n";
  for (const auto& [key, d] : summary.dice_fg) {
    std::snprintf(line, sizeof line, "%-4s  %-6s  %.4f    %.5f\n", loss_code(key.first),
                  predict_mode_name(key.second), d, summary.ece.at(key));
    stxt << line;
  }
  stxt << "\nloss  map   baseline_dice  gain_at_1pct_referral\n";
  for (const auto& [key, rs] : summary.referral) {
    std::snprintf(line, sizeof line, "%-4s  %-4s  %.4f         %+.4f\n", loss_code(key.first),
                  map_kind_name(key.second), rs.baseline_dice, rs.gain_at_1pct);
    stxt << line;
  }
  return summary;
}

}  // namespace uncseg
