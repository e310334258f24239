// gombf: synthesize toy face sequences, train GoMBF or monolithic cascades,
// track sequences and compare the two regressors.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "gombf/commands.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

int exit_code(gombf::ErrorKind kind) {
  using gombf::ErrorKind;
  switch (kind) {
    case ErrorKind::kConfig:
      return kExitUsage;
    case ErrorKind::kDimension:
    case ErrorKind::kIntegrity:
    case ErrorKind::kIo:
      return kExitData;
    case ErrorKind::kBehindCamera:
    case ErrorKind::kDegenerateTarget:
    case ErrorKind::kDegenerateConfiguration:
    case ErrorKind::kSingularSystem:
    case ErrorKind::kConvergence:
      return kExitNumerical;
  }
  return kExitData;
}

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> mode;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_mode) {
  cmd->add_option("--config", f.config, "key = value configuration file");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--threads", f.threads, "worker threads (0 = all cores)");
  if (with_mode) cmd->add_option("--mode", f.mode, "regressor: gombf or monolithic");
  cmd->add_option("--out", f.out, "output directory (must not exist or be empty)")->required();
}

gombf::RunConfig resolve(const CommonFlags& f) {
  gombf::RunConfig c = f.config.empty() ? gombf::RunConfig{} : gombf::load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.threads) c.threads = *f.threads;
  if (f.mode) c.mode = gombf::parse_mode(*f.mode);
  gombf::validate(c);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GoMBF cascade facial tracking on synthetic data"};
  app.require_subcommand(1);

  CommonFlags synth_flags, train_flags, track_flags, compare_flags;
  std::string dataset, model_file, sequence, train_dir, test_dir;

  auto* synth = app.add_subcommand("synth", "render a toy dataset");
  add_common(synth, synth_flags, false);

  auto* train = app.add_subcommand("train", "train a cascade on a dataset");
  train->add_option("dataset", dataset, "dataset directory")->required();
  add_common(train, train_flags, true);

  auto* track = app.add_subcommand("track", "track one sequence with a trained model");
  track->add_option("model", model_file, "model file written by train")->required();
  track->add_option("sequence", sequence, "sequence directory inside a dataset")->required();
  add_common(track, track_flags, false);

  auto* compare = app.add_subcommand("compare", "train both regressors and compare tracking");
  compare->add_option("train", train_dir, "training dataset")->required();
  compare->add_option("test", test_dir, "test dataset (defaults to the training dataset)");
  add_common(compare, compare_flags, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*synth) {
      const auto cfg = resolve(synth_flags);
      const auto ds = gombf::cmd_synth(cfg, synth_flags.out);
      std::cout << "wrote " << ds.sequences.size() << " sequences of " << cfg.length
                << " frames to " << synth_flags.out << " (seed " << cfg.seed << ")\n";
    } else if (*train) {
      const auto cfg = resolve(train_flags);
      const auto r = gombf::cmd_train(cfg, dataset, train_flags.out);
      const auto& rmse = r.metrics.training.stage_rmse;
      std::cout << "trained " << r.model.stage_count() << " " << gombf::to_string(cfg.mode)
                << " stages; training error " << rmse.front() << " -> " << rmse.back()
                << " (seed " << cfg.seed << ", " << r.metrics.threads << " threads)\n";
    } else if (*track) {
      const auto cfg = resolve(track_flags);
      const auto m = gombf::cmd_track(cfg, model_file, sequence, track_flags.out);
      const auto& s = m.sequences.front();
      std::cout << s.name << ": " << s.frame_errors.size() << " frames, mean error "
                << s.mean_error << ", " << s.frames_per_second << " frames/s\n";
    } else if (*compare) {
      const auto cfg = resolve(compare_flags);
      const auto c = gombf::cmd_compare(cfg, train_dir, test_dir.empty() ? train_dir : test_dir,
                                        compare_flags.out);
      for (std::size_t i = 0; i < c.a.sequences.size(); ++i)
        std::cout << c.a.sequences[i].name << ": " << c.a.mode << ' '
                  << c.a.sequences[i].mean_error << "  " << c.b.mode << ' '
                  << c.b.sequences[i].mean_error << '\n';
    }
  } catch (const gombf::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
