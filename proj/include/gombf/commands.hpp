#pragma once

// The synth / train / track / compare commands and their on-disk formats.
//
// Dataset directory:
//   manifest.txt          key = value: format, seed, sequences, frames, width,
//                         height, focal, model, then one `sequence = name` line
//                         per sequence
//   toy_model.bin         the toy shape model (model file format)
//   <name>/frame_NNNN.pgm rendered frames
//   <name>/groundtruth.txt
//                         comment lines with dims and seeds, a header row, then one row per frame: frame index,
//                         delta, yaw pitch roll, tx ty tz, displacements
//                         (dx dy per landmark), true landmarks (x y per
//                         landmark)
//   <name>/identity.txt   header row, then alpha_0..alpha_m one per line
//   <name>/landmarks0.txt header row, then detected first-frame landmarks
//
// Metrics are comma-separated tables with a header row.

#include <charconv>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "gombf/cascade.hpp"
#include "gombf/config.hpp"
#include "gombf/core.hpp"
#include "gombf/image.hpp"
#include "gombf/init_fit.hpp"
#include "gombf/io.hpp"
#include "gombf/metrics.hpp"
#include "gombf/serialize.hpp"
#include "gombf/synthscene.hpp"

namespace gombf {

inline constexpr const char* kDatasetFormat = "gombf-dataset 1";

// ---------------------------------------------------------------------------
// Text helpers

namespace detail {

/// Shortest decimal form that parses back to the same double.
inline std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

inline double parse_double(const std::string& tok, const std::string& where) {
  double v = 0.0;
  const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (r.ec != std::errc() || r.ptr != tok.data() + tok.size())
    fail(ErrorKind::kIntegrity, where + ": cannot parse number '" + tok + "'");
  return v;
}

/// Header row plus numeric rows of a whitespace-separated table; lines
/// starting with '#' are comments.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

inline Table read_table(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  Table t;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto tokens = split_ws(line);
    if (tokens.empty() || tokens.front()[0] == '#') continue;
    if (t.header.empty()) {
      t.header = tokens;
      continue;
    }
    const std::string where = path.string() + ":" + std::to_string(number);
    if (tokens.size() != t.header.size())
      fail(ErrorKind::kIntegrity, where + ": expected " + std::to_string(t.header.size()) +
                                      " columns, found " + std::to_string(tokens.size()));
    std::vector<double> row;
    row.reserve(tokens.size());
    for (const auto& tok : tokens) row.push_back(parse_double(tok, where));
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) fail(ErrorKind::kIntegrity, path.string() + ": missing header row");
  return t;
}

inline std::map<std::string, std::vector<std::string>> read_key_values(
    const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::map<std::string, std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    if (eq == std::string::npos)
      fail(ErrorKind::kIntegrity, path.string() + ": malformed line '" + line + "'");
    out[trim(line.substr(0, eq))].push_back(trim(line.substr(eq + 1)));
  }
  return out;
}

inline const std::string& single_value(const std::map<std::string, std::vector<std::string>>& kv,
                                       const std::string& key, const std::filesystem::path& path) {
  const auto it = kv.find(key);
  if (it == kv.end() || it->second.size() != 1)
    fail(ErrorKind::kIntegrity, path.string() + ": expected exactly one '" + key + "' entry");
  return it->second.front();
}

inline long long parse_integer(const std::string& s, const std::string& where) {
  long long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    fail(ErrorKind::kIntegrity, where + ": cannot parse integer '" + s + "'");
  return v;
}

inline std::string frame_name(int f) {
  std::string n = std::to_string(f);
  return "frame_" + std::string(n.size() < 4 ? 4 - n.size() : 0, '0') + n + ".pgm";
}

inline std::string sequence_name(int i) {
  std::string n = std::to_string(i);
  return "seq" + std::string(n.size() < 3 ? 3 - n.size() : 0, '0') + n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Output staging: nothing appears at the destination unless the command
// completes.

class StagedOutput {
 public:
  explicit StagedOutput(std::filesystem::path destination) : dest_(std::move(destination)) {
    namespace fs = std::filesystem;
    if (dest_.empty()) fail(ErrorKind::kConfig, "an output directory (--out) is required");
    std::error_code ec;
    if (fs::exists(dest_, ec) && !(fs::is_directory(dest_, ec) && fs::is_empty(dest_, ec)))
      fail(ErrorKind::kIo, "output '" + dest_.string() + "' exists and is not an empty directory");
    stage_ = dest_;
    stage_ += ".partial";
    fs::remove_all(stage_, ec);
    if (!fs::create_directories(stage_, ec) || ec)
      fail(ErrorKind::kIo, "cannot create staging directory '" + stage_.string() + "'");
  }
  StagedOutput(const StagedOutput&) = delete;
  StagedOutput& operator=(const StagedOutput&) = delete;
  ~StagedOutput() {
    if (!committed_) {
      std::error_code ec;
      std::filesystem::remove_all(stage_, ec);
    }
  }

  std::filesystem::path path(const std::string& relative) const { return stage_ / relative; }
  const std::filesystem::path& destination() const { return dest_; }

  void write(const std::string& relative, const std::string& bytes) const {
    const auto p = path(relative);
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
    write_file_atomic(p, bytes);
  }

  void commit() {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (fs::exists(dest_, ec)) {
      if (!fs::is_empty(dest_, ec))
        fail(ErrorKind::kIo, "output '" + dest_.string() + "' appeared during the run");
      fs::remove(dest_, ec);
    }
    fs::rename(stage_, dest_, ec);
    if (ec) fail(ErrorKind::kIo, "cannot move results into '" + dest_.string() + "'");
    committed_ = true;
  }

 private:
  std::filesystem::path dest_;
  std::filesystem::path stage_;
  bool committed_ = false;
};

// ---------------------------------------------------------------------------
// Dataset files

struct SequenceData {
  std::string name;
  std::vector<GrayImage> frames;
  std::vector<MotionParams> truth;
  std::vector<Points2> landmarks;
  Vec identity;
  Camera camera;
  Points2 detected_first;
  SceneSeeds seeds;
};

struct Dataset {
  std::uint64_t seed = 0;
  ToyModel toy;
  std::vector<SequenceData> sequences;
};

inline std::string groundtruth_text(const ParametricShapeModel& model, const SequenceData& seq) {
  const auto& truth = seq.truth;
  const auto& landmarks = seq.landmarks;
  const MotionLayout layout = model.motion_layout();
  std::string out = "# m_exp " + std::to_string(layout.m_exp) + " landmarks " +
                    std::to_string(layout.n_landmarks) + " frames " + std::to_string(truth.size()) +
                    "\n# seeds identity " + std::to_string(seq.seeds.identity) + " appearance " +
                    std::to_string(seq.seeds.appearance) + " motion " +
                    std::to_string(seq.seeds.motion) + "\n";
  out += "frame";
  for (int i = 0; i < layout.m_exp; ++i) out += " delta_" + std::to_string(i);
  out += " yaw pitch roll tx ty tz";
  for (int k = 0; k < layout.n_landmarks; ++k)
    out += " dx_" + std::to_string(k) + " dy_" + std::to_string(k);
  for (int k = 0; k < layout.n_landmarks; ++k)
    out += " x_" + std::to_string(k) + " y_" + std::to_string(k);
  out += '\n';
  for (std::size_t f = 0; f < truth.size(); ++f) {
    out += std::to_string(f);
    for (double v : truth[f].values()) out += ' ' + detail::fmt(v);
    for (Eigen::Index k = 0; k < landmarks[f].cols(); ++k)
      out += ' ' + detail::fmt(landmarks[f](0, k)) + ' ' + detail::fmt(landmarks[f](1, k));
    out += '\n';
  }
  return out;
}

inline std::string points_text(const Points2& p) {
  std::string out = "x y\n";
  for (Eigen::Index k = 0; k < p.cols(); ++k)
    out += detail::fmt(p(0, k)) + ' ' + detail::fmt(p(1, k)) + '\n';
  return out;
}

inline std::string vector_text(const std::string& column, const Vec& v) {
  std::string out = column + '\n';
  for (double x : v) out += detail::fmt(x) + '\n';
  return out;
}

/// Reads one sequence directory. `focal` comes from the dataset manifest.
inline SequenceData load_sequence(const std::filesystem::path& dir, const ParametricShapeModel& model,
                                  double focal, bool with_images = true) {
  SequenceData seq;
  seq.name = dir.filename().string();
  const MotionLayout layout = model.motion_layout();
  const int nl = layout.n_landmarks;

  const auto gt_path = dir / "groundtruth.txt";
  const auto gt = detail::read_table(gt_path);
  const std::size_t expected = 1 + static_cast<std::size_t>(layout.dim()) + 2 * static_cast<std::size_t>(nl);
  if (gt.header.size() != expected)
    fail(ErrorKind::kIntegrity, gt_path.string() + ": header has " + std::to_string(gt.header.size()) +
                                    " columns, the model needs " + std::to_string(expected));
  if (gt.rows.empty()) fail(ErrorKind::kIntegrity, gt_path.string() + ": no frames");
  for (std::size_t f = 0; f < gt.rows.size(); ++f) {
    const auto& row = gt.rows[f];
    if (row[0] != static_cast<double>(f))
      fail(ErrorKind::kIntegrity, gt_path.string() + ": frame indices must run 0, 1, 2, ...");
    MotionParams p(layout);
    for (int i = 0; i < layout.dim(); ++i) p.values()[i] = row[1 + static_cast<std::size_t>(i)];
    Points2 lm(2, nl);
    for (int k = 0; k < nl; ++k) {
      lm(0, k) = row[1 + static_cast<std::size_t>(layout.dim() + 2 * k)];
      lm(1, k) = row[2 + static_cast<std::size_t>(layout.dim() + 2 * k)];
    }
    seq.truth.push_back(std::move(p));
    seq.landmarks.push_back(std::move(lm));
  }

  const auto id_path = dir / "identity.txt";
  const auto id = detail::read_table(id_path);
  if (id.header.size() != 1 || id.rows.size() != static_cast<std::size_t>(model.identity_rank() + 1))
    fail(ErrorKind::kIntegrity, id_path.string() + ": expected one column of " +
                                    std::to_string(model.identity_rank() + 1) + " identity coefficients");
  seq.identity.resize(static_cast<Eigen::Index>(id.rows.size()));
  for (std::size_t i = 0; i < id.rows.size(); ++i) seq.identity[static_cast<Eigen::Index>(i)] = id.rows[i][0];

  const auto lm_path = dir / "landmarks0.txt";
  const auto lm = detail::read_table(lm_path);
  if (lm.header.size() != 2 || lm.rows.size() != static_cast<std::size_t>(nl))
    fail(ErrorKind::kIntegrity, lm_path.string() + ": expected " + std::to_string(nl) + " x y rows");
  seq.detected_first.resize(2, nl);
  for (int k = 0; k < nl; ++k) {
    seq.detected_first(0, k) = lm.rows[static_cast<std::size_t>(k)][0];
    seq.detected_first(1, k) = lm.rows[static_cast<std::size_t>(k)][1];
  }

  int width = 0, height = 0;
  if (with_images) {
    seq.frames.reserve(gt.rows.size());
    for (std::size_t f = 0; f < gt.rows.size(); ++f) {
      GrayImage img = read_pgm(dir / detail::frame_name(static_cast<int>(f)));
      if (f == 0) {
        width = img.width();
        height = img.height();
      } else if (img.width() != width || img.height() != height) {
        fail(ErrorKind::kIntegrity, dir.string() + ": frames differ in size");
      }
      seq.frames.push_back(std::move(img));
    }
  } else {
    const GrayImage first = read_pgm(dir / detail::frame_name(0));
    width = first.width();
    height = first.height();
  }
  seq.camera = Camera(focal, width / 2.0, height / 2.0);
  return seq;
}

inline Dataset load_dataset(const std::filesystem::path& dir, bool with_images = true) {
  const auto manifest_path = dir / "manifest.txt";
  const auto kv = detail::read_key_values(manifest_path);
  if (detail::single_value(kv, "format", manifest_path) != kDatasetFormat)
    fail(ErrorKind::kIntegrity, manifest_path.string() + ": unsupported dataset format");
  Dataset ds;
  ds.seed = static_cast<std::uint64_t>(
      detail::parse_integer(detail::single_value(kv, "seed", manifest_path), manifest_path.string()));
  const double focal =
      detail::parse_double(detail::single_value(kv, "focal", manifest_path), manifest_path.string());
  const auto count =
      detail::parse_integer(detail::single_value(kv, "sequences", manifest_path), manifest_path.string());
  const auto frames =
      detail::parse_integer(detail::single_value(kv, "frames", manifest_path), manifest_path.string());
  ds.toy = load_toy_model(dir / detail::single_value(kv, "model", manifest_path));
  const auto it = kv.find("sequence");
  const std::size_t listed = it == kv.end() ? 0 : it->second.size();
  if (static_cast<long long>(listed) != count)
    fail(ErrorKind::kIntegrity, manifest_path.string() + ": lists " + std::to_string(listed) +
                                    " sequences but declares " + std::to_string(count));
  for (std::size_t i = 0; i < listed; ++i) {
    try {
      ds.sequences.push_back(load_sequence(dir / it->second[i], ds.toy.model, focal, with_images));
    } catch (const Error& e) {
      rethrow_with_context(e, "sequence '" + it->second[i] + "'");
    }
    if (static_cast<long long>(ds.sequences.back().truth.size()) != frames)
      fail(ErrorKind::kIntegrity, manifest_path.string() + ": sequence '" + it->second[i] +
                                      "' frame count differs from the manifest");
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Metrics

struct SequenceMetrics {
  std::string name;
  std::vector<double> frame_errors;
  double mean_error = 0.0;
  double frames_per_second = 0.0;
};

struct MetricsReport {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string mode;
  std::vector<SequenceMetrics> sequences;
  TrainingReport training;
};

inline std::string training_csv(const MetricsReport& m) {
  std::string out =
      "mode,seed,threads,stage,rmse,extraction_seconds,modular_seconds,fusion_seconds,"
      "objective_pre_fusion,objective_post_fusion\n";
  const auto& t = m.training;
  for (std::size_t s = 0; s < t.stage_rmse.size(); ++s) {
    out += m.mode + ',' + std::to_string(m.seed) + ',' + std::to_string(m.threads) + ',' +
           std::to_string(s) + ',' + detail::fmt(t.stage_rmse[s]);
    if (s == 0) {
      out += ",,,,,\n";
      continue;
    }
    const auto& tm = t.timings[s - 1];
    out += ',' + detail::fmt(tm.extraction_seconds) + ',' + detail::fmt(tm.modular_seconds) + ',' +
           detail::fmt(tm.fusion_seconds) + ',';
    if (s - 1 < t.objective_pre_fusion.size())
      out += detail::fmt(t.objective_pre_fusion[s - 1]) + ',' +
             detail::fmt(t.objective_post_fusion[s - 1]);
    else
      out += ',';
    out += '\n';
  }
  return out;
}

inline std::string tracking_summary_csv(const MetricsReport& m) {
  std::string out = "sequence,mode,seed,threads,frames,mean_error,frames_per_second\n";
  for (const auto& s : m.sequences)
    out += s.name + ',' + m.mode + ',' + std::to_string(m.seed) + ',' + std::to_string(m.threads) +
           ',' + std::to_string(s.frame_errors.size()) + ',' + detail::fmt(s.mean_error) + ',' +
           detail::fmt(s.frames_per_second) + '\n';
  return out;
}

// ---------------------------------------------------------------------------
// synth

inline std::uint64_t dataset_appearance_seed(const ToyModelSpec& toy) {
  return derive_seed(toy.seed, 0x616C62ULL);
}

inline Dataset synthesize(const RunConfig& cfg) {
  validate(cfg);
  Dataset ds;
  ds.seed = cfg.seed;
  ds.toy = make_toy_model(cfg.toy);
  for (int i = 0; i < cfg.sequences; ++i) {
    const auto u = static_cast<std::uint64_t>(i);
    // Albedo follows the toy model, not the sequence, so that every identity
    // shares one face texture.
    const SceneSeeds seeds{derive_seed(cfg.seed, u, 0), dataset_appearance_seed(cfg.toy),
                           derive_seed(cfg.seed, u, 2)};
    SceneSequence scene;
    try {
      scene = generate_sequence(ds.toy, cfg.walk, cfg.length, seeds, cfg.render, cfg.depth,
                                cfg.focal, resolve_threads(cfg.threads));
    } catch (const Error& e) {
      rethrow_with_context(e, "sequence " + std::to_string(i));
    }
    SequenceData seq;
    seq.name = detail::sequence_name(i);
    seq.identity = scene.statics.identity;
    seq.camera = scene.statics.camera;
    seq.detected_first = scene.first_frame_landmarks;
    seq.seeds = seeds;
    for (std::size_t f = 0; f < scene.frames.size(); ++f) {
      seq.frames.push_back(scene.frames[f].quantized());
      seq.landmarks.push_back(
          landmark_positions(ds.toy.model, seq.identity, seq.camera, scene.ground_truth[f]));
    }
    seq.truth = std::move(scene.ground_truth);
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

inline std::string manifest_text(const Dataset& ds, double focal) {
  const auto& first = ds.sequences.front();
  std::string out = std::string("format = ") + kDatasetFormat + '\n';
  out += "seed = " + std::to_string(ds.seed) + '\n';
  out += "sequences = " + std::to_string(ds.sequences.size()) + '\n';
  out += "frames = " + std::to_string(first.truth.size()) + '\n';
  out += "width = " + std::to_string(first.frames.front().width()) + '\n';
  out += "height = " + std::to_string(first.frames.front().height()) + '\n';
  out += "focal = " + detail::fmt(focal) + '\n';
  out += "model = toy_model.bin\n";
  for (const auto& s : ds.sequences) out += "sequence = " + s.name + '\n';
  return out;
}

inline Dataset cmd_synth(const RunConfig& cfg, const std::filesystem::path& out) {
  validate(cfg);
  StagedOutput stage(out);
  Dataset ds = synthesize(cfg);
  stage.write("toy_model.bin", encode_toy_model(ds.toy));
  for (const auto& s : ds.sequences) {
    for (std::size_t f = 0; f < s.frames.size(); ++f)
      stage.write(s.name + "/" + detail::frame_name(static_cast<int>(f)), encode_pgm(s.frames[f]));
    stage.write(s.name + "/groundtruth.txt", groundtruth_text(ds.toy.model, s));
    stage.write(s.name + "/identity.txt", vector_text("alpha", s.identity));
    stage.write(s.name + "/landmarks0.txt", points_text(s.detected_first));
  }
  stage.write("manifest.txt", manifest_text(ds, cfg.focal));
  stage.commit();
  return ds;
}

// ---------------------------------------------------------------------------
// train

/// Every `stride`-th frame of every sequence, with its true statics.
inline std::vector<TrainingImage> training_images(const Dataset& ds, int stride) {
  std::vector<TrainingImage> images;
  for (const auto& s : ds.sequences)
    for (std::size_t f = 0; f < s.frames.size(); f += static_cast<std::size_t>(stride))
      images.push_back({s.frames[f], StaticParams{s.identity, s.camera}, s.truth[f]});
  return images;
}

struct TrainResult {
  CascadeModel model;
  MetricsReport metrics;
};

inline TrainResult train_on_dataset(const RunConfig& cfg, const Dataset& ds, RegressorMode mode) {
  validate(cfg);
  const auto images = training_images(ds, cfg.train_stride);
  const CascadeConfig cc = cfg.cascade_config(mode);
  Rng pair_rng(derive_seed(cfg.seed, 0x70616972ULL));
  const auto samples = generate_guess_truth_pairs(images, ds.toy.model, pair_rng, cc.noise);
  TrainResult r;
  r.model = train_cascade(ds.toy.model, images, samples, cc, &r.metrics.training);
  r.model.identity_sigma = ds.toy.identity_sigma;
  r.metrics.seed = cfg.seed;
  r.metrics.threads = r.metrics.training.threads;
  r.metrics.mode = to_string(mode);
  return r;
}

inline TrainResult cmd_train(const RunConfig& cfg, const std::filesystem::path& dataset,
                             const std::filesystem::path& out) {
  validate(cfg);
  StagedOutput stage(out);
  const Dataset ds = load_dataset(dataset);
  TrainResult r = train_on_dataset(cfg, ds, cfg.mode);
  stage.write("model.bin", encode_cascade(r.model));
  stage.write("train_metrics.csv", training_csv(r.metrics));
  stage.commit();
  return r;
}

// ---------------------------------------------------------------------------
// track

struct TrackResult {
  FitResult fit;
  std::vector<MotionParams> estimates;
  SequenceMetrics metrics;
};

/// First-frame fit on the provided landmarks, then frame-by-frame regression.
/// Frames per second covers the regression frames only.
inline TrackResult track_sequence(const CascadeModel& model, const SequenceData& seq,
                                  const RunConfig& cfg) {
  if (seq.frames.size() != seq.truth.size() || seq.frames.empty())
    fail(ErrorKind::kIntegrity, "sequence '" + seq.name + "' needs one frame per ground-truth row");
  if (!(seq.truth.front().layout() == model.shape.motion_layout()))
    fail(ErrorKind::kIntegrity, "sequence '" + seq.name + "' does not match the model's motion layout");
  if (model.identity_sigma.size() != model.shape.identity_rank())
    fail(ErrorKind::kIntegrity, "model has no identity prior for first-frame fitting");
  TrackResult r;
  r.metrics.name = seq.name;
  try {
    r.fit = fit_first_frame(seq.detected_first, model.shape, seq.camera, model.identity_sigma, cfg.fit);
  } catch (const Error& e) {
    rethrow_with_context(e, "sequence '" + seq.name + "' first-frame fit");
  }
  const StaticParams statics{r.fit.alpha, seq.camera};
  MotionParams p = r.fit.motion(model.shape.motion_layout());
  r.estimates.push_back(p);
  const int threads = resolve_threads(cfg.threads);
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t f = 1; f < seq.frames.size(); ++f) {
    try {
      p = track_frame(model, seq.frames[f], p, statics, threads);
    } catch (const Error& e) {
      rethrow_with_context(e, "sequence '" + seq.name + "' frame " + std::to_string(f));
    }
    r.estimates.push_back(p);
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::size_t tracked = seq.frames.size() - 1;
  r.metrics.frames_per_second = tracked > 0 && seconds > 0.0 ? tracked / seconds : 0.0;
  for (std::size_t f = 0; f < r.estimates.size(); ++f)
    r.metrics.frame_errors.push_back(normalized_landmark_error(
        model.shape, landmark_positions(model.shape, statics.identity, statics.camera, r.estimates[f]),
        seq.landmarks[f]));
  r.metrics.mean_error = mean(r.metrics.frame_errors);
  return r;
}

inline std::string tracking_frames_csv(const TrackResult& r, const MotionLayout& layout) {
  std::string out = "frame,error";
  for (int i = 0; i < layout.m_exp; ++i) out += ",delta_" + std::to_string(i);
  out += ",yaw,pitch,roll,tx,ty,tz";
  for (int k = 0; k < layout.n_landmarks; ++k)
    out += ",dx_" + std::to_string(k) + ",dy_" + std::to_string(k);
  out += '\n';
  for (std::size_t f = 0; f < r.estimates.size(); ++f) {
    out += std::to_string(f) + ',' + detail::fmt(r.metrics.frame_errors[f]);
    for (double v : r.estimates[f].values()) out += ',' + detail::fmt(v);
    out += '\n';
  }
  return out;
}

/// `sequence` is a sequence directory inside a dataset; the camera focal
/// length comes from the dataset manifest one level up.
inline MetricsReport cmd_track(const RunConfig& cfg, const std::filesystem::path& model_path,
                               const std::filesystem::path& sequence,
                               const std::filesystem::path& out) {
  validate(cfg);
  StagedOutput stage(out);
  const CascadeModel model = load_cascade(model_path);
  auto dir = std::filesystem::path(sequence).lexically_normal();
  if (!dir.has_filename()) dir = dir.parent_path();
  const auto parent = dir.parent_path();
  const auto manifest_path = parent / "manifest.txt";
  const auto kv = detail::read_key_values(manifest_path);
  const double focal =
      detail::parse_double(detail::single_value(kv, "focal", manifest_path), manifest_path.string());
  const SequenceData seq = load_sequence(dir, model.shape, focal);
  const TrackResult r = track_sequence(model, seq, cfg);
  MetricsReport m;
  m.seed = cfg.seed;
  m.threads = resolve_threads(cfg.threads);
  m.mode = to_string(model.mode);
  m.sequences.push_back(r.metrics);
  stage.write("track_frames.csv", tracking_frames_csv(r, model.shape.motion_layout()));
  stage.write("track_summary.csv", tracking_summary_csv(m));
  stage.commit();
  return m;
}

// ---------------------------------------------------------------------------
// compare

struct ComparisonReport {
  MetricsReport a;
  MetricsReport b;
};

inline std::string comparison_sequences_csv(const ComparisonReport& c) {
  std::string out = "sequence,mode_a,error_a,mode_b,error_b\n";
  for (std::size_t i = 0; i < c.a.sequences.size(); ++i)
    out += c.a.sequences[i].name + ',' + c.a.mode + ',' + detail::fmt(c.a.sequences[i].mean_error) +
           ',' + c.b.mode + ',' + detail::fmt(c.b.sequences[i].mean_error) + '\n';
  return out;
}

inline std::string comparison_training_csv(const ComparisonReport& c) {
  std::string out =
      "stage,mode_a,rmse_a,seconds_a,mode_b,rmse_b,seconds_b,threads,seed\n";
  const auto& ta = c.a.training;
  const auto& tb = c.b.training;
  const std::size_t n = std::max(ta.stage_rmse.size(), tb.stage_rmse.size());
  auto cell = [](const std::vector<double>& v, std::size_t i) {
    return i < v.size() ? detail::fmt(v[i]) : std::string();
  };
  auto secs = [](const TrainingReport& t, std::size_t s) {
    return s == 0 || s > t.timings.size() ? std::string()
                                          : detail::fmt(t.timings[s - 1].regression_seconds());
  };
  for (std::size_t s = 0; s < n; ++s)
    out += std::to_string(s) + ',' + c.a.mode + ',' + cell(ta.stage_rmse, s) + ',' + secs(ta, s) +
           ',' + c.b.mode + ',' + cell(tb.stage_rmse, s) + ',' + secs(tb, s) + ',' +
           std::to_string(c.a.threads) + ',' + std::to_string(c.a.seed) + '\n';
  return out;
}

/// Trains both configured modes on `train` with the same seed and budget,
/// then tracks every sequence of `test` with each.
inline ComparisonReport compare_on(const RunConfig& cfg, const Dataset& train, const Dataset& test) {
  validate(cfg);
  if (!(train.toy.model == test.toy.model))
    fail(ErrorKind::kIntegrity, "training and test datasets use different shape models");
  ComparisonReport c;
  for (auto* side : {&c.a, &c.b}) {
    const RegressorMode mode = side == &c.a ? cfg.compare_a : cfg.compare_b;
    TrainResult tr;
    try {
      tr = train_on_dataset(cfg, train, mode);
    } catch (const Error& e) {
      rethrow_with_context(e, std::string("training ") + to_string(mode));
    }
    *side = tr.metrics;
    for (const auto& seq : test.sequences) side->sequences.push_back(track_sequence(tr.model, seq, cfg).metrics);
  }
  return c;
}

inline ComparisonReport cmd_compare(const RunConfig& cfg, const std::filesystem::path& train_dir,
                                    const std::filesystem::path& test_dir,
                                    const std::filesystem::path& out) {
  validate(cfg);
  StagedOutput stage(out);
  const Dataset train = load_dataset(train_dir);
  const Dataset test = test_dir == train_dir ? train : load_dataset(test_dir);
  if (train.sequences.size() < 2)
    fail(ErrorKind::kIntegrity, "comparison needs a training dataset with at least two sequences");
  const ComparisonReport c = compare_on(cfg, train, test);
  stage.write("compare_sequences.csv", comparison_sequences_csv(c));
  stage.write("compare_training.csv", comparison_training_csv(c));
  stage.write("train_metrics_a.csv", training_csv(c.a));
  stage.write("train_metrics_b.csv", training_csv(c.b));
  stage.commit();
  return c;
}

}  // namespace gombf
